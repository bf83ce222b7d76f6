"""Retrieval metrics and the three inference modes (global, local, ensemble).

Ranking convention: scores sort descending, ties break toward the lower
candidate index, ranks are 1-based, the ground-truth match of query i is
candidate i.  The local mode scores each (text, video) cell by selecting the
video's most text-relevant frames and mean-pooling fused match probabilities;
the ensemble min-max normalizes each matrix to [0, 1] and sums.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoders as enc
from .config import Config
from .errors import EmptyMatrix, InvalidConfig
from .fusion import cross_fuse, match_prob
from .model import LgdnModel, substream
from .sfp import relevance_row, select_salient, two_stage_sample
from .synth import VideoTextPair
from .tensor import constant, no_grad
from .utils import worker_count

MODES = ("global", "local", "ensemble")


@dataclass
class SimilarityMatrix:
    scores: np.ndarray      # (Q, C), queries are texts in t2v orientation
    direction: str          # "t2v" | "v2t"
    mode: str


@dataclass
class DirectionReport:
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float


@dataclass
class RetrievalReport:
    mode: str
    t2v: DirectionReport
    v2t: DirectionReport
    r_sum: float
    r_mean: float
    config_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# -- rank arithmetic ---------------------------------------------------

def rank_of_truth(row: np.ndarray, truth: int) -> int:
    """1-based rank of the ground-truth candidate under the tie convention."""
    better = int(np.sum(row > row[truth]))
    tied_before = int(np.sum(row[:truth] == row[truth]))
    return 1 + better + tied_before


def _all_ranks(scores: np.ndarray) -> np.ndarray:
    if scores.size == 0:
        raise EmptyMatrix("empty similarity matrix")
    return np.array([rank_of_truth(scores[i], i) for i in range(scores.shape[0])])


def recall_at_k(sim: SimilarityMatrix | np.ndarray, k: int) -> float:
    """Percentage of queries whose ground truth ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = sim.scores if isinstance(sim, SimilarityMatrix) else sim
    ranks = _all_ranks(scores)
    return float(np.mean(ranks <= k) * 100.0)


def rank_stats(sim: SimilarityMatrix | np.ndarray) -> tuple[float, float]:
    """(median rank, mean rank); even-count median averages the two middles."""
    scores = sim.scores if isinstance(sim, SimilarityMatrix) else sim
    ranks = _all_ranks(scores)
    return float(np.median(ranks)), float(np.mean(ranks))


def r_sum(recalls: Sequence[float]) -> float:
    """Sum of an explicit recall list (single sequential reduction)."""
    total = 0.0
    for r in recalls:
        total += float(r)
    return total


def direction_report(scores: np.ndarray) -> DirectionReport:
    mdr, mnr = rank_stats(scores)
    return DirectionReport(
        r1=recall_at_k(scores, 1), r5=recall_at_k(scores, 5),
        r10=recall_at_k(scores, 10), mdr=mdr, mnr=mnr)


def build_report(t2v_scores: np.ndarray, mode: str, digest: str = "") -> RetrievalReport:
    t2v = direction_report(t2v_scores)
    v2t = direction_report(t2v_scores.T)
    recalls = [t2v.r1, t2v.r5, t2v.r10, v2t.r1, v2t.r5, v2t.r10]
    return RetrievalReport(mode=mode, t2v=t2v, v2t=v2t,
                           r_sum=r_sum(recalls),
                           r_mean=r_sum(recalls) / 6.0,
                           config_digest=digest)


# -- scoring -----------------------------------------------------------

@dataclass
class EvalFeatures:
    """Per-split forward passes computed once and reused across modes."""

    sampled: list[list[int]]            # eval-sampled frame indices per video
    frame_embs: list[np.ndarray]        # online, (N, d) per video
    mom_frame_embs: list[np.ndarray]
    frame_tokens: list[list[np.ndarray]]  # mixed tokens per sampled frame
    frame_biases: list[list[np.ndarray]]
    video_embs: np.ndarray              # (C, d)
    text_embs: np.ndarray               # (Q, d)
    mom_text_embs: np.ndarray
    text_tokens: list[np.ndarray]
    text_biases: list[np.ndarray]
    salient_truth: list[np.ndarray]     # planted mask over sampled positions


def compute_eval_features(model: LgdnModel, pairs: list[VideoTextPair]) -> EvalFeatures:
    cfg = model.cfg
    sampled, f_embs, mf_embs, f_tokens, f_biases = [], [], [], [], []
    v_embs, t_embs, mt_embs, t_tokens, t_biases, truth = [], [], [], [], [], []
    with no_grad():
        for p in pairs:
            idx = two_stage_sample(len(p.video), cfg.n_frames, "eval")
            seqs = [p.video[i] for i in idx]
            embs, toks = [], []
            for s in seqs:
                e, tk = enc.encode_frame_with_tokens(s, model.vision.online, cfg)
                embs.append(e)
                toks.append(tk.data)
            v = enc.aggregate_temporal(embs, model.vision.online, cfg)
            mom = [enc.encode_frame(s, model.vision.momentum, cfg) for s in seqs]

            sampled.append(idx)
            f_embs.append(np.stack([e.vector.data for e in embs]))
            mf_embs.append(np.stack([e.vector.data for e in mom]))
            f_tokens.append(toks)
            f_biases.append([s.key_bias() for s in seqs])
            v_embs.append(v.vector.data)
            truth.append(p.salient_mask[idx])

            te, tt = enc.encode_text_with_tokens(p.text, model.text.online, cfg)
            t_embs.append(te.vector.data)
            t_tokens.append(tt.data)
            t_biases.append(p.text.key_bias())
            mt_embs.append(enc.encode_text(p.text, model.text.momentum, cfg).vector.data)
    return EvalFeatures(
        sampled=sampled, frame_embs=f_embs, mom_frame_embs=mf_embs,
        frame_tokens=f_tokens, frame_biases=f_biases,
        video_embs=np.stack(v_embs), text_embs=np.stack(t_embs),
        mom_text_embs=np.stack(mt_embs), text_tokens=t_tokens,
        text_biases=t_biases, salient_truth=truth)


def global_matrix(feats: EvalFeatures) -> np.ndarray:
    """Cosine of text and video embeddings (both unit-norm already)."""
    return feats.text_embs @ feats.video_embs.T


def _select_for_cell(feats: EvalFeatures, i: int, j: int, strategy: str,
                     n_salient: int, rng: np.random.Generator | None) -> list[int]:
    n = feats.frame_embs[j].shape[0]
    if strategy == "random":
        k = min(n_salient, n)
        return sorted(int(x) for x in rng.choice(n, size=k, replace=False))
    row = relevance_row(strategy, feats.frame_embs[j], feats.mom_frame_embs[j],
                        feats.text_embs[i], feats.mom_text_embs[i])
    return select_salient(row, n_salient).indices


def local_matrix(model: LgdnModel, feats: EvalFeatures,
                 n_salient: int | None = None, strategy: str | None = None,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Fused match score for every (text, video) cell.

    For each cell the video's frames are ranked against the query text with
    the configured strategy ("random" draws blind) and the mean match
    probability over the selected frames is the score.
    """
    cfg = model.cfg
    n_salient = cfg.n_salient if n_salient is None else n_salient
    strategy = cfg.strategy if strategy is None else strategy
    q = len(feats.text_embs)
    c = len(feats.video_embs)
    if strategy == "random" and rng is None:
        rng = substream(cfg.seed, "eval")
    selections: list[list[list[int]]] = [
        [_select_for_cell(feats, i, j, strategy, n_salient, rng)
         for j in range(c)] for i in range(q)
    ]

    def score_row(i: int) -> np.ndarray:
        row = np.empty(c)
        ttok = constant(feats.text_tokens[i])
        for j in range(c):
            probs = [
                match_prob(cross_fuse(constant(feats.frame_tokens[j][s]), ttok,
                                      model.fusion, cfg,
                                      feats.frame_biases[j][s],
                                      feats.text_biases[i]),
                           model.fusion).item()
                for s in selections[i][j]
            ]
            row[j] = float(np.mean(probs))
        return row

    with no_grad():
        workers = worker_count()
        if workers > 1 and q > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(score_row, range(q)))
        else:
            rows = [score_row(i) for i in range(q)]
    return np.stack(rows)


def minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi <= lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def ensemble_matrix(global_scores: np.ndarray, local_scores: np.ndarray) -> np.ndarray:
    return minmax(global_scores) + minmax(local_scores)


def retrieve(mode: str, model: LgdnModel, pairs: list[VideoTextPair],
             feats: EvalFeatures | None = None) -> tuple[SimilarityMatrix, RetrievalReport]:
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    if feats is None:
        feats = compute_eval_features(model, pairs)
    if mode == "global":
        scores = global_matrix(feats)
    elif mode == "local":
        scores = local_matrix(model, feats)
    else:
        scores = ensemble_matrix(global_matrix(feats), local_matrix(model, feats))
    sim = SimilarityMatrix(scores=scores, direction="t2v", mode=mode)
    return sim, build_report(scores, mode, model.cfg.digest())


def selection_quality(model: LgdnModel, feats: EvalFeatures,
                      n_salient: int | None = None, strategy: str | None = None,
                      rng: np.random.Generator | None = None) -> dict:
    """Selection quality of true pairs against the planted salient masks.

    recall: |selected ∩ planted| / |planted|, averaged over pairs.
    precision: |selected ∩ planted| / |selected|, averaged over pairs.
    random_recall: expectation of recall under blind selection, n_salient / N.
    """
    cfg = model.cfg
    n_salient = cfg.n_salient if n_salient is None else n_salient
    strategy = cfg.strategy if strategy is None else strategy
    if strategy == "random" and rng is None:
        rng = substream(cfg.seed, "eval")
    recalls, precisions = [], []
    for i in range(len(feats.text_embs)):
        sel = _select_for_cell(feats, i, i, strategy, n_salient, rng)
        planted = feats.salient_truth[i]
        hits = sum(1 for s in sel if planted[s])
        recalls.append(hits / max(1, int(planted.sum())))
        precisions.append(hits / len(sel))
    n = feats.frame_embs[0].shape[0]
    return {
        "recall": float(np.mean(recalls)),
        "precision": float(np.mean(precisions)),
        "random_recall": min(n_salient, n) / n,
    }


# -- salient-count sweep -------------------------------------------------

SWEEP_HEADER = ("n_salient,r_sum,r1_t2v,r5_t2v,r10_t2v,"
                "r1_v2t,r5_v2t,r10_v2t,wall_ms,speedup")


def sweep_salient(model: LgdnModel, pairs: list[VideoTextPair],
                  values: Sequence[int]) -> list[dict]:
    """Local-mode eval per salient count; speedup is relative to the
    n_salient == n_frames row (the slowest, un-filtered case)."""
    feats = compute_eval_features(model, pairs)
    rows = []
    for k in values:
        start = time.perf_counter()
        scores = local_matrix(model, feats, n_salient=int(k))
        wall_ms = (time.perf_counter() - start) * 1000.0
        rep = build_report(scores, "local", model.cfg.digest())
        rows.append({
            "n_salient": int(k), "r_sum": rep.r_sum,
            "r1_t2v": rep.t2v.r1, "r5_t2v": rep.t2v.r5, "r10_t2v": rep.t2v.r10,
            "r1_v2t": rep.v2t.r1, "r5_v2t": rep.v2t.r5, "r10_v2t": rep.v2t.r10,
            "wall_ms": wall_ms,
        })
    reference = max(rows, key=lambda r: r["n_salient"])
    for r in rows:
        r["speedup"] = reference["wall_ms"] / r["wall_ms"]
    return rows


def sweep_csv(rows: list[dict]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(
            f"{r['n_salient']},{r['r_sum']:.4f},"
            f"{r['r1_t2v']:.4f},{r['r5_t2v']:.4f},{r['r10_t2v']:.4f},"
            f"{r['r1_v2t']:.4f},{r['r5_v2t']:.4f},{r['r10_v2t']:.4f},"
            f"{r['wall_ms']:.3f},{r['speedup']:.4f}")
    return "\n".join(lines) + "\n"


def save_report(report: RetrievalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
