"""Model bundle: both encoders with their slow twins, plus the fusion stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoders as enc
from .config import Config
from .encoders import Embedding, MomentumPair, ParamSet, TokenSequence
from .fusion import build_fusion_params
from .tensor import Tensor, no_grad

# stable per-purpose rng substreams: toggling one feature never perturbs the
# randomness consumed by another
_PURPOSES = ("init", "corpus", "batching", "sampling", "selection",
             "negatives", "eval")


def substream(seed: int, purpose: str) -> np.random.Generator:
    if purpose not in _PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}")
    return np.random.default_rng(
        np.random.SeedSequence((seed, _PURPOSES.index(purpose))))


@dataclass
class OnlineFeatures:
    """Gradient-tracked forward results of one (video, text) pair."""

    frame_embs: list[Tensor]        # online frame embeddings
    frame_tokens: list[Tensor]      # online mixed frame tokens (fusion input)
    frame_biases: list[np.ndarray]
    video_emb: Tensor
    text_emb: Tensor
    text_tokens: Tensor
    text_bias: np.ndarray


@dataclass
class MomentumFeatures:
    """Slow-twin embeddings; plain arrays, never gradient-tracked."""

    frames: np.ndarray              # (N, d)
    video: np.ndarray
    text: np.ndarray


@dataclass
class PairFeatures:
    """Everything one (video, text) pair contributes to a training step."""

    frame_embs: list[Tensor]
    frame_tokens: list[Tensor]
    frame_biases: list[np.ndarray]
    video_emb: Tensor
    text_emb: Tensor
    text_tokens: Tensor
    text_bias: np.ndarray
    mom_frames: np.ndarray
    mom_video: np.ndarray
    mom_text: np.ndarray


class LgdnModel:
    def __init__(self, cfg: Config, vision: MomentumPair, text: MomentumPair,
                 fusion: ParamSet):
        self.cfg = cfg
        self.vision = vision
        self.text = text
        self.fusion = fusion

    @classmethod
    def build(cls, cfg: Config) -> "LgdnModel":
        rng = substream(cfg.seed, "init")
        vision = MomentumPair.create(enc.build_vision_params(rng, cfg), cfg.momentum)
        text = MomentumPair.create(enc.build_text_params(rng, cfg), cfg.momentum)
        fusion = build_fusion_params(rng, cfg)
        return cls(cfg, vision, text, fusion)

    # -- parameter access ------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for scope, ps in (("vision", self.vision.online),
                          ("text", self.text.online),
                          ("fusion", self.fusion)):
            out.extend((f"{scope}.{n}", t) for n, t in ps.items())
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def momentum_step(self) -> None:
        enc.momentum_update(self.vision)
        enc.momentum_update(self.text)

    # -- forward helpers ---------------------------------------------------
    def encode_online(self, video_seqs: list[TokenSequence],
                      text_seq: TokenSequence) -> OnlineFeatures:
        cfg = self.cfg
        frame_embs, frame_tokens = [], []
        for seq in video_seqs:
            emb, tok = enc.encode_frame_with_tokens(seq, self.vision.online, cfg)
            frame_embs.append(emb.vector)
            frame_tokens.append(tok)
        video = enc.aggregate_temporal(
            [Embedding(v, "frame") for v in frame_embs], self.vision.online, cfg)
        text_emb, text_tokens = enc.encode_text_with_tokens(
            text_seq, self.text.online, cfg)
        return OnlineFeatures(
            frame_embs=frame_embs,
            frame_tokens=frame_tokens,
            frame_biases=[s.key_bias() for s in video_seqs],
            video_emb=video.vector,
            text_emb=text_emb.vector,
            text_tokens=text_tokens,
            text_bias=text_seq.key_bias(),
        )

    def encode_momentum(self, video_seqs: list[TokenSequence],
                        text_seq: TokenSequence) -> MomentumFeatures:
        cfg = self.cfg
        with no_grad():
            frame_embs = [enc.encode_frame(seq, self.vision.momentum, cfg)
                          for seq in video_seqs]
            video = enc.aggregate_temporal(frame_embs, self.vision.momentum, cfg)
            text = enc.encode_text(text_seq, self.text.momentum, cfg)
        return MomentumFeatures(
            frames=np.stack([e.vector.data for e in frame_embs]),
            video=video.vector.data,
            text=text.vector.data,
        )

    def encode_pair(self, video_seqs: list[TokenSequence],
                    text_seq: TokenSequence) -> PairFeatures:
        on = self.encode_online(video_seqs, text_seq)
        mom = self.encode_momentum(video_seqs, text_seq)
        return PairFeatures(
            frame_embs=on.frame_embs, frame_tokens=on.frame_tokens,
            frame_biases=on.frame_biases, video_emb=on.video_emb,
            text_emb=on.text_emb, text_tokens=on.text_tokens,
            text_bias=on.text_bias, mom_frames=mom.frames,
            mom_video=mom.video, mom_text=mom.text,
        )

    # -- serialization -----------------------------------------------------
    def state(self) -> dict:
        return {
            "vision_online": self.vision.online.state(),
            "vision_momentum": self.vision.momentum.state(),
            "text_online": self.text.online.state(),
            "text_momentum": self.text.momentum.state(),
            "fusion": self.fusion.state(),
        }

    def load_state(self, state: dict) -> None:
        self.vision.online.load_state(state["vision_online"])
        self.vision.momentum.load_state(state["vision_momentum"])
        self.text.online.load_state(state["text_online"])
        self.text.momentum.load_state(state["text_momentum"])
        self.fusion.load_state(state["fusion"])
