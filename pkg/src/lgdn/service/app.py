"""FastAPI service wrapping corpus generation, training and evaluation.

Endpoints operate on the service host's filesystem and run synchronously;
at desk scale a full training run takes a couple of minutes.  The bundled
CLI is a thin client for this app (in-process by default, remote with
--server).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import Config, SELECTION_MODES
from ..errors import LgdnError, MissingCheckpoint
from ..evalmetrics import retrieve, save_report, sweep_csv, sweep_salient
from ..experiments import run_ablation
from ..gradcheck import gradcheck_suite
from ..synth import CorpusConfig, generate_corpus, load_corpus, save_corpus
from ..trainer import Trainer, records_csv
from . import models as m


def create_app() -> FastAPI:
    app = FastAPI(title="lgdn", version=__version__)

    @app.exception_handler(LgdnError)
    async def lgdn_error(request: Request, exc: LgdnError):
        status = 404 if isinstance(exc, MissingCheckpoint) else 400
        return JSONResponse(
            status_code=status,
            content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.get("/healthz", response_model=m.HealthResponse)
    def healthz():
        return m.HealthResponse(status="ok", version=__version__)

    @app.post("/corpus", response_model=m.CorpusResponse)
    def corpus(req: m.CorpusRequest):
        cfg = CorpusConfig.from_dict(req.config)
        corp = generate_corpus(cfg)
        save_corpus(corp, req.out_path)
        return m.CorpusResponse(
            path=req.out_path,
            version="lgdn-corpus/1",
            n_pairs=cfg.n_pairs,
            splits={"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test},
            salient_per_video=cfg.salient_per_video,
        )

    @app.post("/train", response_model=m.TrainResponse)
    def train(req: m.TrainRequest):
        corp = load_corpus(req.corpus_path)
        overrides = dict(req.config)
        # encoder input width follows the corpus unless explicitly pinned
        overrides.setdefault("token_dim", corp.config.token_dim)
        cfg = Config().replace(**overrides)
        trainer = Trainer(cfg)
        records = trainer.train(corp)
        trainer.save(req.checkpoint_out)
        if req.log_out:
            with open(req.log_out, "w", encoding="utf-8") as fh:
                fh.write(records_csv(records))
        first = [r.l_total for r in records if r.epoch == 1]
        last = [r.l_total for r in records if r.epoch == cfg.epochs]
        return m.TrainResponse(
            checkpoint=req.checkpoint_out,
            log=req.log_out,
            steps=len(records),
            first_epoch_mean_loss=sum(first) / len(first),
            final_epoch_mean_loss=sum(last) / len(last),
        )

    @app.post("/eval", response_model=m.EvalResponse)
    def evaluate(req: m.EvalRequest):
        trainer = Trainer.load(req.checkpoint)
        corp = load_corpus(req.corpus_path)
        pairs = corp.split(req.split)
        if not pairs:
            raise LgdnError(f"corpus split {req.split!r} is empty")
        _, report = retrieve(req.mode, trainer.model, pairs)
        if req.report_out:
            save_report(report, req.report_out)
        as_dict = report.to_dict()
        return m.EvalResponse(
            mode=report.mode,
            t2v=m.DirectionMetrics(**as_dict["t2v"]),
            v2t=m.DirectionMetrics(**as_dict["v2t"]),
            r_sum=report.r_sum,
            r_mean=report.r_mean,
            config_digest=report.config_digest,
            report_path=req.report_out,
        )

    @app.post("/sweep", response_model=m.SweepResponse)
    def sweep(req: m.SweepRequest):
        trainer = Trainer.load(req.checkpoint)
        corp = load_corpus(req.corpus_path)
        pairs = corp.split(req.split)
        if not pairs:
            raise LgdnError(f"corpus split {req.split!r} is empty")
        rows = sweep_salient(trainer.model, pairs, req.salient)
        if req.csv_out:
            with open(req.csv_out, "w", encoding="utf-8") as fh:
                fh.write(sweep_csv(rows))
        return m.SweepResponse(rows=[m.SweepRow(**r) for r in rows],
                               csv_path=req.csv_out)

    @app.post("/gradcheck", response_model=m.GradcheckResponse)
    def gradcheck(req: m.GradcheckRequest):
        from ..gradcheck import GRADCHECK_CONFIG
        cfg = GRADCHECK_CONFIG.replace(**req.config) if req.config else None
        errors = gradcheck_suite(eps=req.eps, cfg=cfg)
        worst = max(errors.values())
        return m.GradcheckResponse(errors=errors, max_error=worst,
                                   tolerance=req.tolerance,
                                   ok=worst < req.tolerance)

    @app.post("/ablate", response_model=m.AblateResponse)
    def ablate(req: m.AblateRequest):
        unknown = [s for s in req.strategies if s not in SELECTION_MODES]
        if unknown:
            raise LgdnError(f"unknown strategies: {unknown}")
        corp = load_corpus(req.corpus_path)
        overrides = dict(req.config)
        overrides.setdefault("token_dim", corp.config.token_dim)
        cfg = Config().replace(**overrides)
        rows = run_ablation(corp, req.strategies, cfg)
        return m.AblateResponse(rows=[m.AblateRow(**r) for r in rows])

    return app


app = create_app()
