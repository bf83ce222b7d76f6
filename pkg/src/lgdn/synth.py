"""Synthetic noisy video-text corpus with planted ground-truth salient frames.

Each concept owns a unit prototype vector.  A pair draws a latent around its
concept prototype; text tokens and salient-frame tokens are drawn around that
shared latent (a caption describes its own video, not just a category), while
noise frames are drawn around a different concept's prototype.  The spread
parameter is split evenly between the pair-shared component and per-token
noise, and is calibrated so a spread of s perturbs a unit prototype by an
expected norm of s.

Everything is deterministic given the seed; each pair derives its own child
seed so generation order cannot leak randomness across pairs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import TokenSequence
from .errors import InvalidConfig

CORPUS_VERSION = "lgdn-corpus/1"


@dataclass
class CorpusConfig:
    n_train: int = 200
    n_val: int = 50
    n_test: int = 100
    n_concepts: int = 16
    frames_per_video: int = 16
    tokens_per_frame: int = 4
    tokens_per_text: int = 4
    token_dim: int = 32
    noise_fraction: float = 0.5   # fraction of frames drawn off-concept
    concept_spread: float = 0.3
    seed: int = 0

    def validate(self) -> "CorpusConfig":
        if self.n_concepts < 2:
            raise InvalidConfig("need at least two concepts")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train < 1:
            raise InvalidConfig("split sizes must be non-negative, train >= 1")
        if self.frames_per_video < 1:
            raise InvalidConfig("frames_per_video must be >= 1")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise InvalidConfig("noise_fraction must lie in [0, 1)")
        if min(self.tokens_per_frame, self.tokens_per_text, self.token_dim) < 1:
            raise InvalidConfig("token counts and width must be >= 1")
        if self.concept_spread < 0:
            raise InvalidConfig("concept_spread must be >= 0")
        return self

    @property
    def n_pairs(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def salient_per_video(self) -> int:
        return max(1, round((1.0 - self.noise_fraction) * self.frames_per_video))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown corpus config keys: {sorted(unknown)}")
        return cls(**raw).validate()


@dataclass
class VideoTextPair:
    pair_id: int
    split: str                     # train | val | test
    concept_id: int
    video: list[TokenSequence]     # frames_per_video token sequences
    text: TokenSequence
    salient_mask: np.ndarray       # bool per frame, True = drawn from pair concept


@dataclass
class Corpus:
    config: CorpusConfig
    pairs: list[VideoTextPair]

    def split(self, name: str) -> list[VideoTextPair]:
        return [p for p in self.pairs if p.split == name]


def _prototypes(rng: np.random.Generator, cfg: CorpusConfig) -> np.ndarray:
    raw = rng.normal(size=(cfg.n_concepts, cfg.token_dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _tokens_around(rng, center: np.ndarray, count: int, spread: float) -> np.ndarray:
    scale = spread / np.sqrt(center.size)
    return center + rng.normal(0.0, scale, size=(count, center.size))


def generate_corpus(cfg: CorpusConfig) -> Corpus:
    """Deterministic train/val/test corpus with planted salient frames."""
    cfg = cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    proto_seed, pair_root = root.spawn(2)
    protos = _prototypes(np.random.default_rng(proto_seed), cfg)

    # pair-shared vs token-level spread, equal split of the total budget
    part = cfg.concept_spread / np.sqrt(2.0)

    splits = (["train"] * cfg.n_train + ["val"] * cfg.n_val + ["test"] * cfg.n_test)
    pairs = []
    pair_seeds = pair_root.spawn(cfg.n_pairs)
    n_salient = cfg.salient_per_video
    for pid, (split, seed) in enumerate(zip(splits, pair_seeds)):
        rng = np.random.default_rng(seed)
        concept = pid % cfg.n_concepts
        latent = protos[concept] + rng.normal(
            0.0, part / np.sqrt(cfg.token_dim), size=cfg.token_dim)

        mask = np.zeros(cfg.frames_per_video, dtype=bool)
        mask[rng.choice(cfg.frames_per_video, size=n_salient, replace=False)] = True

        frames = []
        for j in range(cfg.frames_per_video):
            if mask[j]:
                center = latent
            else:
                other = int(rng.integers(cfg.n_concepts - 1))
                other += other >= concept  # uniform over concepts != ours
                center = protos[other]
            frames.append(TokenSequence(
                _tokens_around(rng, center, cfg.tokens_per_frame, part)))
        text = TokenSequence(_tokens_around(rng, latent, cfg.tokens_per_text, part))
        pairs.append(VideoTextPair(pid, split, concept, frames, text, mask))
    return Corpus(config=cfg, pairs=pairs)


# -- corpus file format ------------------------------------------------

def _seq_record(seq: TokenSequence) -> dict:
    return {"shape": list(seq.tokens.shape),
            "values": [float(x) for x in seq.tokens.reshape(-1)],
            "pad_mask": [bool(b) for b in seq.pad_mask]}


def _seq_from_record(rec: dict) -> TokenSequence:
    tokens = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
    return TokenSequence(tokens, np.asarray(rec["pad_mask"], dtype=bool))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    doc = {
        "version": CORPUS_VERSION,
        "config": corpus.config.to_dict(),
        "pairs": [{
            "id": p.pair_id,
            "split": p.split,
            "concept_id": p.concept_id,
            "salient_mask": [bool(b) for b in p.salient_mask],
            "text": _seq_record(p.text),
            "frames": [_seq_record(f) for f in p.video],
        } for p in corpus.pairs],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_corpus(path: str | Path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CORPUS_VERSION:
        raise InvalidConfig(f"unsupported corpus version {doc.get('version')!r}")
    cfg = CorpusConfig.from_dict(doc["config"])
    pairs = [VideoTextPair(
        pair_id=rec["id"],
        split=rec["split"],
        concept_id=rec["concept_id"],
        video=[_seq_from_record(f) for f in rec["frames"]],
        text=_seq_from_record(rec["text"]),
        salient_mask=np.asarray(rec["salient_mask"], dtype=bool),
    ) for rec in doc["pairs"]]
    return Corpus(config=cfg, pairs=pairs)
