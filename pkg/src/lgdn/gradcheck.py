"""Finite-difference verification of every objective's backward pass.

Runs the full pipeline (token sequences through both encoders, temporal
aggregation, fused matching, all three losses) at a deliberately tiny width
so the central-difference sweep over every parameter entry finishes in
seconds.  Two things are frozen before checking: frame selection (a discrete
choice that must not influence gradients) and the slow-twin features
(constants with respect to the online parameters being perturbed).  Each
objective is swept over the parameters it can reach; the suite asserts the
remaining parameters receive no gradient at all.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import Config
from .encoders import TokenSequence
from .model import LgdnModel, substream
from .objectives import (ContrastiveBatch, MatchPair, loss_lsfm, loss_mfcl,
                         loss_mvcl)
from .tensor import Tensor, grad_check

# small enough to sweep every entry, deep enough to cross every code path
GRADCHECK_CONFIG = Config(
    n_frames=3, n_salient=2, batch_size=3,
    token_dim=4, enc_depth=1, enc_heads=2, d_joint=4, ffn_mult=1,
    d_fuse=4, fusion_depth=2, fusion_heads=2,
    tau=0.07, bank_size=8, lr=1e-3, epochs=1, warmup_epochs=1, seed=7,
)

TOLERANCE = 1e-4
N_BANK = 4      # bank entries per bank during the check
N_TOKENS = 3    # tokens per synthetic frame/text


def _unit_rows(rng, n, d) -> np.ndarray:
    raw = rng.normal(size=(n, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


class GradcheckSuite:
    """Frozen model, data and index choices for the verification batch."""

    def __init__(self, cfg: Config | None = None):
        self.cfg = dataclasses.replace(cfg or GRADCHECK_CONFIG).validate()
        cfg = self.cfg
        self.model = LgdnModel.build(cfg)
        rng = substream(cfg.seed, "corpus")
        self.videos = [
            [TokenSequence(rng.normal(0.0, 0.5, size=(N_TOKENS, cfg.token_dim)))
             for _ in range(cfg.n_frames)] for _ in range(cfg.batch_size)]
        self.texts = [
            TokenSequence(rng.normal(0.0, 0.5, size=(N_TOKENS, cfg.token_dim)))
            for _ in range(cfg.batch_size)]
        self.bank_video = _unit_rows(rng, N_BANK, cfg.d_joint)
        self.bank_text = _unit_rows(rng, N_BANK, cfg.d_joint)
        self.bank_frame = _unit_rows(rng, N_BANK, cfg.d_joint)
        self.salient = [
            sorted(rng.choice(cfg.n_frames, size=cfg.n_salient,
                              replace=False).tolist())
            for _ in range(cfg.batch_size)]
        self.partners = [int(rng.integers(1, cfg.batch_size))
                         for _ in range(cfg.batch_size)]
        # twin features are constants w.r.t. the perturbed online parameters
        self.mom = [self.model.encode_momentum(v, t)
                    for v, t in zip(self.videos, self.texts)]

    # -- parameter scopes -------------------------------------------------
    def params(self, scopes: tuple[str, ...]) -> list[Tensor]:
        return [t for n, t in self.model.named_parameters()
                if n.startswith(scopes)]

    def unreachable_params(self, scopes: tuple[str, ...]) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.model.named_parameters()
                if not n.startswith(scopes)]

    # -- forwards ----------------------------------------------------------
    def _features(self):
        return [self.model.encode_online(v, t)
                for v, t in zip(self.videos, self.texts)]

    def _contrastive(self, feats) -> ContrastiveBatch:
        return ContrastiveBatch(
            video=[f.video_emb for f in feats],
            text=[f.text_emb for f in feats],
            mom_video=[m.video for m in self.mom],
            mom_text=[m.text for m in self.mom],
            frames=[f.frame_embs for f in feats],
            mom_frames=[m.frames for m in self.mom],
            salient=self.salient,
            tau=self.cfg.tau,
        )

    def _match_batch(self, feats) -> list[MatchPair]:
        out = []
        for i, f in enumerate(feats):
            other = (i + self.partners[i]) % len(feats)
            for j in self.salient[i]:
                out.append(MatchPair(f.frame_tokens[j], f.text_tokens, 1))
                out.append(MatchPair(f.frame_tokens[j],
                                     feats[other].text_tokens, 0))
        return out

    def f_mvcl(self):
        return loss_mvcl(self._contrastive(self._features()),
                         self.bank_video, self.bank_text).total

    def f_mfcl(self):
        return loss_mfcl(self._contrastive(self._features()),
                         self.bank_frame, self.bank_text).total

    def f_lsfm(self):
        return loss_lsfm(self._match_batch(self._features()),
                         self.model.fusion, self.cfg)

    def f_total(self):
        feats = self._features()
        batch = self._contrastive(feats)
        return (loss_mvcl(batch, self.bank_video, self.bank_text).total
                + loss_mfcl(batch, self.bank_frame, self.bank_text).total
                + loss_lsfm(self._match_batch(feats), self.model.fusion, self.cfg))


# scopes each objective can reach; everything else must stay gradient-free
SCOPES = {
    "l_mvcl": ("vision.", "text."),
    "l_mfcl": ("vision.frame.", "text."),
    "l_lsfm": ("vision.frame.", "text.", "fusion."),
    "l_total": ("vision.", "text.", "fusion."),
}


def gradcheck_suite(eps: float = 1e-5, cfg: Config | None = None) -> dict[str, float]:
    """Max relative FD error per objective; keys l_mvcl/l_mfcl/l_lsfm/l_total.

    Also verifies that parameters outside each objective's reach end the
    backward pass with no gradient.
    """
    suite = GradcheckSuite(cfg)
    fns = {"l_mvcl": suite.f_mvcl, "l_mfcl": suite.f_mfcl,
           "l_lsfm": suite.f_lsfm, "l_total": suite.f_total}
    out = {}
    for name, fn in fns.items():
        suite.model.zero_grad()
        out[name] = grad_check(fn, suite.params(SCOPES[name]), eps=eps)
        for pname, p in suite.unreachable_params(SCOPES[name]):
            if p.grad is not None and np.any(p.grad):
                raise AssertionError(
                    f"{name} leaked gradient into unreachable {pname}")
    return out
