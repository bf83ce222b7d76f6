"""Training loop: AdamW, warm-up schedule, slow-twin updates, bank upkeep.

Step order: sample frames per segment, encode with both the online and slow
encoders, choose positive/salient frames (all frames during warm-up, the
selected set afterwards), compute the summed objective, update online
parameters, EMA-update the twins, then enqueue the twin features into the
banks.  The run is bit-deterministic given (seed, config, corpus).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .banks import MemoryBank
from .config import Config, STRATEGIES
from .encoders import TokenSequence
from .errors import (InvalidConfig, MissingCheckpoint, NonFiniteGradient,
                     NonFiniteLoss, NonFiniteTensor)
from .model import LgdnModel, substream
from .objectives import (ContrastiveBatch, MatchPair, loss_lsfm, loss_mfcl,
                         loss_mvcl, loss_total)
from .sfp import relevance_row, select_salient, two_stage_sample
from .synth import Corpus, VideoTextPair
from .tensor import Tensor

CHECKPOINT_VERSION = "lgdn-ckpt/1"
LOG_HEADER = "step,epoch,sfp_active,l_v2t,l_t2v,l_t2e,l_e2t,l_lsfm,l_total"


@dataclass
class LossRecord:
    step: int
    epoch: int
    sfp_active: bool
    l_v2t: float
    l_t2v: float
    l_t2e: float
    l_e2t: float
    l_lsfm: float
    l_total: float

    def csv_row(self) -> str:
        return (f"{self.step},{self.epoch},{int(self.sfp_active)},"
                f"{self.l_v2t!r},{self.l_t2v!r},{self.l_t2e!r},"
                f"{self.l_e2t!r},{self.l_lsfm!r},{self.l_total!r}")


def records_csv(records: list[LossRecord]) -> str:
    return "\n".join([LOG_HEADER] + [r.csv_row() for r in records]) + "\n"


class AdamW:
    """Decoupled weight decay plus bias-corrected moment recursion."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.moments: dict[str, dict[str, np.ndarray]] = {}

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {name}")
            state = self.moments.setdefault(
                name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
            state["m"] = b1 * state["m"] + (1.0 - b1) * g
            state["v"] = b2 * state["v"] + (1.0 - b2) * (g * g)
            m_hat = state["m"] / bc1
            v_hat = state["v"] / bc2
            p.data = p.data - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                         + self.weight_decay * p.data)

    def state(self) -> dict:
        return {
            "t": self.t,
            "moments": {n: {"m": s["m"].reshape(-1).tolist(),
                            "v": s["v"].reshape(-1).tolist(),
                            "shape": list(s["m"].shape)}
                        for n, s in self.moments.items()},
        }

    def load_state(self, state: dict) -> None:
        self.t = state["t"]
        self.moments = {}
        for n, rec in state["moments"].items():
            shape = tuple(rec["shape"])
            self.moments[n] = {
                "m": np.asarray(rec["m"], dtype=np.float64).reshape(shape),
                "v": np.asarray(rec["v"], dtype=np.float64).reshape(shape),
            }


def optimizer_step(opt: AdamW, named_params: list[tuple[str, Tensor]]) -> None:
    """One AdamW update over (name, parameter) pairs using stored gradients."""
    opt.step(named_params)


class Trainer:
    def __init__(self, cfg: Config, model: LgdnModel | None = None):
        cfg.validate()
        self.cfg = cfg
        self.model = model if model is not None else LgdnModel.build(cfg)
        d = cfg.d_joint
        self.bank_video = MemoryBank(cfg.bank_size, d)
        self.bank_text = MemoryBank(cfg.bank_size, d)
        self.bank_frame = MemoryBank(cfg.bank_size * cfg.n_frames, d)
        self.opt = AdamW(cfg.lr, cfg.weight_decay)
        self.rng_batching = substream(cfg.seed, "batching")
        self.rng_sampling = substream(cfg.seed, "sampling")
        self.rng_selection = substream(cfg.seed, "selection")
        self.rng_negatives = substream(cfg.seed, "negatives")
        self.step_count = 0
        self.records: list[LossRecord] = []

    # -- schedule -----------------------------------------------------
    def sfp_active(self, epoch: int) -> bool:
        """Language-guided selection runs after warm-up, never for "random"."""
        return epoch > self.cfg.warmup_epochs and self.cfg.strategy in STRATEGIES

    # -- one optimization step ------------------------------------------
    def train_step(self, pairs: list[VideoTextPair], epoch: int = 1) -> LossRecord:
        if len(pairs) < 2:
            raise InvalidConfig("train_step needs at least two pairs for "
                                "in-batch matching negatives")
        cfg = self.cfg
        active = self.sfp_active(epoch)
        try:
            record = self._step_inner(pairs, epoch, active)
        except NonFiniteTensor as exc:
            raise NonFiniteLoss(f"non-finite value at step {self.step_count}: {exc}")
        self.step_count += 1
        self.records.append(record)
        return record

    def _step_inner(self, pairs, epoch, active) -> LossRecord:
        cfg = self.cfg
        feats = []
        for p in pairs:
            idx = two_stage_sample(len(p.video), cfg.n_frames, "train",
                                   self.rng_sampling)
            feats.append(self.model.encode_pair([p.video[i] for i in idx], p.text))

        salient, lsfm_frames = [], []
        n = cfg.n_frames
        k = min(cfg.n_salient, n)
        for f in feats:
            if active:
                row = relevance_row(
                    cfg.strategy,
                    np.stack([e.data for e in f.frame_embs]), f.mom_frames,
                    f.text_emb.data, f.mom_text)
                chosen = select_salient(row, cfg.n_salient).indices
                salient.append(chosen)
                lsfm_frames.append(chosen)
            elif cfg.strategy == "random" and epoch > cfg.warmup_epochs:
                chosen = sorted(int(x) for x in
                                self.rng_selection.choice(n, size=k, replace=False))
                salient.append(chosen)
                lsfm_frames.append(chosen)
            else:
                salient.append(list(range(n)))
                lsfm_frames.append(sorted(int(x) for x in
                                          self.rng_selection.choice(n, size=k,
                                                                    replace=False)))

        batch = ContrastiveBatch(
            video=[f.video_emb for f in feats],
            text=[f.text_emb for f in feats],
            mom_video=[f.mom_video for f in feats],
            mom_text=[f.mom_text for f in feats],
            frames=[f.frame_embs for f in feats],
            mom_frames=[f.mom_frames for f in feats],
            salient=salient,
            tau=cfg.tau,
        )
        match_batch = self._build_match_batch(feats, lsfm_frames)

        mvcl = loss_mvcl(batch, self.bank_video, self.bank_text)
        mfcl = loss_mfcl(batch, self.bank_frame, self.bank_text)
        lsfm = loss_lsfm(match_batch, self.model.fusion, cfg)
        total = loss_total(mvcl, mfcl, lsfm)

        self.model.zero_grad()
        total.backward()
        self.opt.step(self.model.named_parameters())
        self.model.momentum_step()

        self.bank_video.enqueue([f.mom_video for f in feats])
        self.bank_text.enqueue([f.mom_text for f in feats])
        frame_feats = [f.mom_frames[j] for f in feats
                       for j in range(f.mom_frames.shape[0])]
        self.bank_frame.enqueue(frame_feats)

        return LossRecord(
            step=self.step_count, epoch=epoch, sfp_active=active,
            l_v2t=mvcl.first.item(), l_t2v=mvcl.second.item(),
            l_t2e=mfcl.first.item(), l_e2t=mfcl.second.item(),
            l_lsfm=lsfm.item(), l_total=total.item())

    def _build_match_batch(self, feats, lsfm_frames) -> list[MatchPair]:
        out = []
        b = len(feats)
        for i, f in enumerate(feats):
            for j in lsfm_frames[i]:
                out.append(MatchPair(f.frame_tokens[j], f.text_tokens, 1,
                                     f.frame_biases[j], f.text_bias))
                partner = int(self.rng_negatives.integers(b - 1))
                partner += partner >= i
                out.append(MatchPair(f.frame_tokens[j], feats[partner].text_tokens,
                                     0, f.frame_biases[j], feats[partner].text_bias))
        return out

    # -- epochs ---------------------------------------------------------
    def train(self, corpus: Corpus) -> list[LossRecord]:
        train_pairs = corpus.split("train")
        if len(train_pairs) < 2:
            raise InvalidConfig("training needs at least two pairs")
        cfg = self.cfg
        for epoch in range(1, cfg.epochs + 1):
            order = self.rng_batching.permutation(len(train_pairs))
            for lo in range(0, len(order), cfg.batch_size):
                chunk = order[lo:lo + cfg.batch_size]
                if len(chunk) < 2:
                    continue  # a 1-pair tail cannot form matching negatives
                self.train_step([train_pairs[i] for i in chunk], epoch)
        return self.records

    # -- checkpointing ---------------------------------------------------
    def checkpoint(self) -> dict:
        doc = {
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "model": self.model.state(),
            "optimizer": self.opt.state(),
            "step": self.step_count,
            "rng": {
                "batching": self.rng_batching.bit_generator.state,
                "sampling": self.rng_sampling.bit_generator.state,
                "selection": self.rng_selection.bit_generator.state,
                "negatives": self.rng_negatives.bit_generator.state,
            },
        }
        if self.cfg.persist_banks:
            doc["banks"] = {
                "video": self.bank_video.state(),
                "text": self.bank_text.state(),
                "frame": self.bank_frame.state(),
            }
        return doc

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.checkpoint(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str | Path) -> "Trainer":
        path = Path(path)
        if not path.exists():
            raise MissingCheckpoint(f"no checkpoint at {path}")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise MissingCheckpoint(f"unreadable checkpoint {path}: {exc}")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise MissingCheckpoint(
                f"unsupported checkpoint version {doc.get('version')!r}")
        cfg = Config.from_dict(doc["config"])
        trainer = cls(cfg)
        trainer.model.load_state(doc["model"])
        trainer.opt.load_state(doc["optimizer"])
        trainer.step_count = doc["step"]
        for name, rng in (("batching", trainer.rng_batching),
                          ("sampling", trainer.rng_sampling),
                          ("selection", trainer.rng_selection),
                          ("negatives", trainer.rng_negatives)):
            rng.bit_generator.state = doc["rng"][name]
        if "banks" in doc:
            trainer.bank_video.load_state(doc["banks"]["video"])
            trainer.bank_text.load_state(doc["banks"]["text"])
            trainer.bank_frame.load_state(doc["banks"]["frame"])
        return trainer
