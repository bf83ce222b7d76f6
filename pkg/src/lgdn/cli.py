"""Command-line client for the service.

Every subcommand is served over HTTP: against a remote server when --server
(or LGDN_SERVER) is given, otherwise against the in-process app through an
ASGI transport, so no daemon is needed for local work.  Usage errors exit 2;
runtime failures print a diagnostic to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx


def _request(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    from .service.app import create_app

    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://lgdn.internal") as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _call(args, path: str, payload: dict) -> dict:
    resp = _request(args.server, path, payload)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise RuntimeError(detail)
    return resp.json()


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise RuntimeError(f"config file {path} must hold a JSON object")
    return doc


def _overrides(args, names: list[str]) -> dict:
    """Config file values, overridden by any explicitly passed flag."""
    out = _load_config_file(getattr(args, "config", None))
    for name in names:
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            out[name.replace("-", "_")] = val
    return out


TRAIN_FIELDS = ["n-frames", "n-salient", "strategy", "batch-size", "lr",
                "weight-decay", "epochs", "warmup-epochs", "momentum", "tau",
                "bank-size", "seed", "persist-banks"]

CORPUS_FIELDS = ["n-train", "n-val", "n-test", "n-concepts",
                 "frames-per-video", "tokens-per-frame", "tokens-per-text",
                 "token-dim", "noise-fraction", "concept-spread", "seed"]


def _add_train_flags(p: argparse.ArgumentParser, strategy_flag: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-salient", type=int)
    if strategy_flag:
        p.add_argument("--strategy",
                       choices=["simdot", "momentum", "crossmom", "collab",
                                "random"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--bank-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--persist-banks", action="store_const", const=True,
                   default=None, help="serialize bank contents in checkpoints")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lgdn",
        description="Language-guided salient-frame training and retrieval eval")
    ap.add_argument("--server", default=os.environ.get("LGDN_SERVER"),
                    help="remote service URL (default: run in-process)")
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--n-train", type=int)
    gen.add_argument("--n-val", type=int)
    gen.add_argument("--n-test", type=int)
    gen.add_argument("--n-concepts", type=int)
    gen.add_argument("--frames-per-video", type=int)
    gen.add_argument("--tokens-per-frame", type=int)
    gen.add_argument("--tokens-per-text", type=int)
    gen.add_argument("--token-dim", type=int)
    gen.add_argument("--noise-fraction", type=float)
    gen.add_argument("--concept-spread", type=float)

    tr = sub.add_parser("train", help="train on a corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--log", help="per-step loss CSV path")
    _add_train_flags(tr)

    ev = sub.add_parser("eval", help="retrieval evaluation")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--mode", choices=["global", "local", "ensemble"],
                    default="ensemble")
    ev.add_argument("--split", default="test")
    ev.add_argument("--report", help="write the report JSON here")

    sw = sub.add_parser("sweep", help="salient-count sweep")
    sw.add_argument("--checkpoint", required=True)
    sw.add_argument("--corpus", required=True)
    sw.add_argument("--salient", required=True,
                    help="comma-separated counts, e.g. 1,2,3,4,8,16")
    sw.add_argument("--split", default="test")
    sw.add_argument("--out", help="CSV output path")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    ab = sub.add_parser("ablate", help="train/eval once per strategy")
    ab.add_argument("--corpus", required=True)
    ab.add_argument("--strategy", required=True,
                    help="comma-separated strategies, e.g. collab,random")
    ab.add_argument("--out", help="write rows as JSON here")
    _add_train_flags(ab, strategy_flag=False)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return ap


def _cmd_gen(args) -> int:
    res = _call(args, "/corpus", {
        "out_path": args.out,
        "config": _overrides(args, CORPUS_FIELDS),
    })
    print(f"wrote {res['path']} ({res['version']}): "
          f"{res['splits']} pairs, {res['salient_per_video']} salient/video")
    return 0


def _cmd_train(args) -> int:
    res = _call(args, "/train", {
        "corpus_path": args.corpus,
        "checkpoint_out": args.out,
        "log_out": args.log,
        "config": _overrides(args, TRAIN_FIELDS),
    })
    print(f"trained {res['steps']} steps -> {res['checkpoint']}")
    print(f"mean total loss: epoch1 {res['first_epoch_mean_loss']:.4f} "
          f"-> final {res['final_epoch_mean_loss']:.4f}")
    if res["log"]:
        print(f"loss log: {res['log']}")
    return 0


def _cmd_eval(args) -> int:
    res = _call(args, "/eval", {
        "checkpoint": args.checkpoint,
        "corpus_path": args.corpus,
        "mode": args.mode,
        "split": args.split,
        "report_out": args.report,
    })
    for direction in ("t2v", "v2t"):
        d = res[direction]
        print(f"{args.mode} {direction}: R@1 {d['r1']:.1f} R@5 {d['r5']:.1f} "
              f"R@10 {d['r10']:.1f} MdR {d['mdr']:.1f} MnR {d['mnr']:.2f}")
    print(f"R@SUM {res['r_sum']:.1f}  R@MEAN {res['r_mean']:.2f}")
    if res["report_path"]:
        print(f"report: {res['report_path']}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        values = [int(x) for x in args.salient.split(",") if x]
    except ValueError:
        raise RuntimeError(f"--salient expects integers, got {args.salient!r}")
    res = _call(args, "/sweep", {
        "checkpoint": args.checkpoint,
        "corpus_path": args.corpus,
        "salient": values,
        "split": args.split,
        "csv_out": args.out,
    })
    print("n_salient  r_sum    wall_ms   speedup")
    for row in res["rows"]:
        print(f"{row['n_salient']:9d}  {row['r_sum']:7.1f}  "
              f"{row['wall_ms']:8.1f}  {row['speedup']:7.2f}x")
    if res["csv_path"]:
        print(f"csv: {res['csv_path']}")
    return 0


def _cmd_gradcheck(args) -> int:
    res = _call(args, "/gradcheck", {
        "eps": args.eps, "tolerance": args.tolerance})
    for name, err in res["errors"].items():
        print(f"{name}: max rel err {err:.3e}")
    print(f"max rel err {res['max_error']:.3e} "
          f"({'<' if res['ok'] else '>='} tolerance {res['tolerance']:.1e})")
    return 0 if res["ok"] else 1


def _cmd_ablate(args) -> int:
    strategies = [s for s in args.strategy.split(",") if s]
    fields = [f for f in TRAIN_FIELDS if f != "strategy"]
    res = _call(args, "/ablate", {
        "corpus_path": args.corpus,
        "strategies": strategies,
        "config": _overrides(args, fields),
    })
    print("strategy     r_sum   t2v_R@1  v2t_R@1  sel_recall")
    for row in res["rows"]:
        rec = row.get("selection_recall")
        rec_s = f"{rec:.3f}" if rec is not None else "    -"
        print(f"{row['strategy']:<11} {row['r_sum']:7.1f}  {row['t2v_r1']:7.1f}"
              f"  {row['v2t_r1']:7.1f}  {rec_s}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(res["rows"], fh, indent=2)
        print(f"rows: {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval,
        "sweep": _cmd_sweep, "gradcheck": _cmd_gradcheck,
        "ablate": _cmd_ablate, "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (RuntimeError, OSError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
