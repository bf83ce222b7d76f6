"""Run configuration: hyperparameters, architecture sizes, validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidConfig

STRATEGIES = ("simdot", "momentum", "crossmom", "collab")
# "random" disables language-guided selection entirely (the no-SFP baseline).
SELECTION_MODES = STRATEGIES + ("random",)


@dataclass
class Config:
    """Training/eval hyperparameters.

    Desk-scale defaults; full-scale recipes use lr 1e-5, batch 24 and a
    9,600-entry bank, which assume pretrained backbones and GPU budgets.
    """

    # sampling and selection
    n_frames: int = 16          # frames sampled per video (segment count)
    n_salient: int = 2          # frames kept by salient selection
    strategy: str = "collab"    # relevance estimator, or "random" baseline

    # optimization
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.02
    epochs: int = 5
    warmup_epochs: int = 1      # selection disabled during warm-up
    momentum: float = 0.99      # coefficient of the slow encoder twins
    tau: float = 0.07           # similarity temperature
    bank_size: int = 512        # video/text bank capacity (frame bank: x n_frames)

    # encoder architecture
    token_dim: int = 32         # width of frame-patch and word tokens
    enc_depth: int = 2
    enc_heads: int = 2
    d_joint: int = 16           # joint embedding width
    ffn_mult: int = 2

    # fusion architecture
    d_fuse: int = 32
    fusion_depth: int = 2
    fusion_heads: int = 2

    seed: int = 0
    persist_banks: bool = False

    def validate(self) -> "Config":
        if self.n_frames < 1 or self.n_salient < 1:
            raise InvalidConfig("n_frames and n_salient must be >= 1")
        if self.n_salient > self.n_frames:
            raise InvalidConfig("n_salient must not exceed n_frames")
        if not 1 <= self.warmup_epochs <= self.epochs:
            raise InvalidConfig("warmup_epochs must be in [1, epochs]")
        if not 0.0 <= self.momentum <= 1.0:
            raise InvalidConfig("momentum must lie in [0, 1]")
        if self.tau <= 0:
            raise InvalidConfig("tau must be positive")
        if self.strategy not in SELECTION_MODES:
            raise InvalidConfig(f"strategy must be one of {SELECTION_MODES}")
        if self.batch_size < 1 or self.bank_size < 1:
            raise InvalidConfig("batch_size and bank_size must be >= 1")
        for name in ("token_dim", "enc_depth", "enc_heads", "d_joint",
                     "ffn_mult", "d_fuse", "fusion_depth", "fusion_heads"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.token_dim % self.enc_heads or self.d_joint % self.enc_heads:
            raise InvalidConfig("encoder widths must divide evenly across heads")
        if self.d_fuse % self.fusion_heads:
            raise InvalidConfig("d_fuse must divide evenly across fusion heads")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw).validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **overrides) -> "Config":
        """New config with the given fields overridden (None values skipped)."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **clean).validate()

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
