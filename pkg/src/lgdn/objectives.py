"""The three training objectives and their unweighted sum.

Video-level contrast (two InfoNCE terms against bank negatives), frame-level
multiple-salient-instance contrast (numerators sum exponentials over the
positive frame set), and the binary salient-frame matching loss.  Gradients
reach online embeddings and the fusion stack only; slow-twin features and
bank entries enter as constants.

Every per-pair term is assembled as log-sum-exp(all) - log-sum-exp(positives)
over one shared scaled similarity vector, so with no negatives the loss is
exactly zero and small temperatures cannot overflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .banks import MemoryBank
from .errors import EmptyBatch, EmptyPositiveSet
from .errors import SingleClassBatch as SingleClassBatchWarning
from .fusion import cross_fuse, match_logits
from .tensor import Tensor


@dataclass
class ContrastiveBatch:
    """Index-aligned online/slow features for one mini-batch."""

    video: list[Tensor]             # online video embeddings, (d,)
    text: list[Tensor]              # online text embeddings, (d,)
    mom_video: list[np.ndarray]     # slow-twin video embeddings
    mom_text: list[np.ndarray]      # slow-twin text embeddings
    frames: list[list[Tensor]]      # online frame embeddings per pair
    mom_frames: list[np.ndarray]    # slow-twin frame embeddings, (N, d) per pair
    salient: list[list[int]]        # positive frame indices per pair
    tau: float

    def __len__(self) -> int:
        return len(self.text)


@dataclass
class MatchPair:
    """One fusion training example: token matrices plus a binary label."""

    frame_tokens: Tensor
    text_tokens: Tensor
    label: int
    frame_bias: np.ndarray | None = None
    text_bias: np.ndarray | None = None


class LossParts(NamedTuple):
    first: Tensor
    second: Tensor
    total: Tensor


def _mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return T.scale(acc, 1.0 / len(terms))


def _nce_term(pos_sims: Tensor, neg_sims: Tensor | None, tau: float) -> Tensor:
    """-log( sum exp(pos/tau) / (sum exp(pos/tau) + sum exp(neg/tau)) )."""
    if neg_sims is None:
        scaled = T.scale(pos_sims, 1.0 / tau)
        return T.logsumexp(scaled) - T.logsumexp(scaled)
    n_pos = pos_sims.shape[0]
    scaled = T.scale(T.concat([pos_sims, neg_sims]), 1.0 / tau)
    return T.logsumexp(scaled) - T.logsumexp(T.slice_rows(scaled, 0, n_pos))


def _bank_matrix(bank: MemoryBank | np.ndarray | None) -> np.ndarray | None:
    if isinstance(bank, MemoryBank):
        return bank.matrix()
    if bank is None or len(bank) == 0:
        return None
    return np.asarray(bank, dtype=np.float64)


def loss_mvcl(batch: ContrastiveBatch, bank_video, bank_text) -> LossParts:
    """Video-level InfoNCE, both directions, averaged over the batch.

    Positives pair an online embedding with its slow-twin counterpart; the
    negatives for a video query come from the text bank and vice versa.
    Returns (v2t, t2v, total).
    """
    if len(batch) == 0:
        raise EmptyBatch("video-level contrastive loss over an empty batch")
    m_v = _bank_matrix(bank_video)
    m_l = _bank_matrix(bank_text)
    v2t_terms, t2v_terms = [], []
    for f_v, f_l, g_v, g_l in zip(batch.video, batch.text,
                                  batch.mom_video, batch.mom_text):
        pos_v = T.reshape(T.dot(f_v, T.constant(g_l)), (1,))
        neg_v = T.matmul(T.constant(m_l), f_v) if m_l is not None else None
        v2t_terms.append(_nce_term(pos_v, neg_v, batch.tau))
        pos_l = T.reshape(T.dot(f_l, T.constant(g_v)), (1,))
        neg_l = T.matmul(T.constant(m_v), f_l) if m_v is not None else None
        t2v_terms.append(_nce_term(pos_l, neg_l, batch.tau))
    v2t, t2v = _mean(v2t_terms), _mean(t2v_terms)
    return LossParts(v2t, t2v, v2t + t2v)


def loss_mfcl(batch: ContrastiveBatch, bank_frame, bank_text) -> LossParts:
    """Frame-level multiple-salient-instance contrast, both directions.

    Text-to-frame: positives are the slow-twin embeddings of the pair's
    salient frames, negatives the frame bank.  Frame-to-text: positives are
    the online salient-frame embeddings against the slow text twin; the
    denominator pairs every positive frame with every text-bank entry.
    Returns (t2e, e2t, total).
    """
    if len(batch) == 0:
        raise EmptyBatch("frame-level contrastive loss over an empty batch")
    m_e = _bank_matrix(bank_frame)
    m_l = _bank_matrix(bank_text)
    t2e_terms, e2t_terms = [], []
    for i in range(len(batch)):
        sal = batch.salient[i]
        if not sal:
            raise EmptyPositiveSet(f"pair {i} has an empty positive frame set")
        f_l = batch.text[i]
        pos_t2e = T.matmul(T.constant(batch.mom_frames[i][sal]), f_l)
        neg_t2e = T.matmul(T.constant(m_e), f_l) if m_e is not None else None
        t2e_terms.append(_nce_term(pos_t2e, neg_t2e, batch.tau))

        frame_mat = T.stack([batch.frames[i][j] for j in sal])
        pos_e2t = T.matmul(frame_mat, T.constant(batch.mom_text[i]))
        if m_l is not None:
            # every salient frame against every text-bank entry, flattened
            neg_e2t = T.reshape(T.matmul(frame_mat, T.constant(m_l.T)),
                                (len(sal) * m_l.shape[0],))
        else:
            neg_e2t = None
        e2t_terms.append(_nce_term(pos_e2t, neg_e2t, batch.tau))
    t2e, e2t = _mean(t2e_terms), _mean(e2t_terms)
    return LossParts(t2e, e2t, t2e + e2t)


def nll_from_logits(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], stabilized."""
    return T.logsumexp(logits) - T.element(logits, label)


def loss_lsfm(match_batch: list[MatchPair], fusion_ps, cfg) -> Tensor:
    """Mean negative log-likelihood of the matching head over labeled pairs."""
    if not match_batch:
        raise EmptyBatch("matching loss over an empty batch")
    labels = {p.label for p in match_batch}
    if len(labels) == 1:
        warnings.warn("matching batch contains a single class",
                      SingleClassBatchWarning)
    terms = []
    for pair in match_batch:
        cls = cross_fuse(pair.frame_tokens, pair.text_tokens, fusion_ps, cfg,
                         pair.frame_bias, pair.text_bias)
        terms.append(nll_from_logits(match_logits(cls, fusion_ps), pair.label))
    return _mean(terms)


def loss_total(mvcl: LossParts, mfcl: LossParts, lsfm: Tensor) -> Tensor:
    """Unweighted sum of the three objectives."""
    return mvcl.total + mfcl.total + lsfm
