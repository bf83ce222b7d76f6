"""Salient-frame machinery: segment sampling, relevance scoring, top-k filter.

Relevance is computed between a text and the frames of its own paired video,
purely on detached unit-norm embeddings — selection is a discrete choice and
must never influence gradients.  Four estimators are supported; with the slow
twins equal to the online encoders (step 0) the momentum and cross variants
both collapse to twice the plain dot product, and the collaborative score is
always the sum of the momentum and cross scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import STRATEGIES
from .errors import ShapeMismatch, TooFewFrames


@dataclass
class RelevanceMatrix:
    scores: np.ndarray  # (B, N) rows of per-frame scores
    strategy: str


@dataclass
class SalientSet:
    indices: list[int]          # sorted, distinct, within [0, N)
    source_scores: np.ndarray   # the relevance row that produced them


def two_stage_sample(frame_count: int, n_segments: int, mode: str,
                     rng: np.random.Generator | None = None) -> list[int]:
    """Stage-1 sparse sampling: one index per equal segment of the video.

    Train mode draws uniformly inside each segment; eval mode takes the
    segment midpoint.  Indices are strictly increasing.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if frame_count < n_segments:
        raise TooFewFrames(f"{frame_count} frames < {n_segments} segments")
    out = []
    for k in range(n_segments):
        lo = (k * frame_count) // n_segments
        hi = ((k + 1) * frame_count) // n_segments
        if mode == "train":
            if rng is None:
                raise ValueError("train-mode sampling needs an rng")
            out.append(int(rng.integers(lo, hi)))
        elif mode == "eval":
            out.append((lo + hi) // 2)
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
    return out


def relevance_row(strategy: str, frame_embs: np.ndarray, mom_frame_embs: np.ndarray,
                  text_emb: np.ndarray, mom_text_emb: np.ndarray) -> np.ndarray:
    """Per-frame relevance scores of one video against its paired text.

    frame_embs/mom_frame_embs: (N, d) online and slow-twin frame embeddings;
    text_emb/mom_text_emb: (d,) online and slow-twin text embeddings.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown relevance strategy {strategy!r}")
    if frame_embs.shape != mom_frame_embs.shape or text_emb.shape != mom_text_emb.shape:
        raise ShapeMismatch("online/momentum embedding shapes differ")
    if frame_embs.ndim != 2 or frame_embs.shape[1] != text_emb.shape[0]:
        raise ShapeMismatch("frame and text embedding widths differ")
    if strategy == "simdot":
        return frame_embs @ text_emb
    if strategy == "momentum":
        return frame_embs @ text_emb + mom_frame_embs @ mom_text_emb
    if strategy == "crossmom":
        return mom_frame_embs @ text_emb + frame_embs @ mom_text_emb
    # collaborative: (f + f_hat) · (l + l_hat)
    return (frame_embs + mom_frame_embs) @ (text_emb + mom_text_emb)


def select_salient(row: np.ndarray, n_salient: int) -> SalientSet:
    """Top-min(n_salient, N) frame indices by score, ties to the lower index."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size < 1:
        raise ShapeMismatch("relevance row must be a nonempty vector")
    if n_salient < 1:
        raise ValueError("n_salient must be >= 1")
    k = min(n_salient, row.size)
    order = sorted(range(row.size), key=lambda j: (-row[j], j))
    return SalientSet(indices=sorted(order[:k]), source_scores=row.copy())
