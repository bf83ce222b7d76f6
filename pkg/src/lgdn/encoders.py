"""Token encoders, temporal aggregation, and slow-twin (momentum) machinery.

Frame and text encoders share one architecture: a small pre-norm
self-attention stack over the token sequence, a final layer norm, then a
linear projection of the position-0 ([CLS]) token onto the joint space with
L2 normalization.  Every similarity downstream is therefore a plain dot
product.

The temporal module runs one self-attention layer over the per-frame joint
embeddings with learned positional encodings, mean-pools over positions and
re-normalizes, producing the video embedding.

Each encoder owns a slow twin whose parameters track the online ones through
an exponential moving average and never receive gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import Config
from .errors import EmptyFrameList, ShapeMismatch
from .tensor import Tensor

MASK_NEG = -1e30  # additive key bias; underflows to exactly zero attention


@dataclass
class TokenSequence:
    """Token matrix (k, D) with validity mask; position 0 is the [CLS] slot."""

    tokens: np.ndarray
    pad_mask: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ShapeMismatch("tokens must be a nonempty (k, D) matrix")
        if self.pad_mask is None:
            self.pad_mask = np.ones(self.tokens.shape[0], dtype=bool)
        else:
            self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        if self.pad_mask.shape != (self.tokens.shape[0],):
            raise ShapeMismatch("pad_mask length must match token count")
        if not self.pad_mask[0]:
            raise ShapeMismatch("position 0 ([CLS]) must be valid")

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    def key_bias(self) -> np.ndarray:
        """Additive attention bias: 0 for valid keys, MASK_NEG for padding."""
        return np.where(self.pad_mask, 0.0, MASK_NEG)


@dataclass
class Embedding:
    """Unit-norm joint-space vector tagged by origin."""

    vector: Tensor
    kind: str  # "frame" | "text" | "video"


class ParamSet:
    """Ordered, named collection of parameter tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def n_entries(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def detached_copy(self) -> "ParamSet":
        """Same shapes and values, gradients disabled (twin initialization)."""
        twin = ParamSet()
        for name, t in self._params.items():
            twin.add(name, t.data.copy(), requires_grad=False)
        return twin

    def state(self) -> dict:
        return {n: {"shape": list(t.shape), "values": t.values()}
                for n, t in self._params.items()}

    def load_state(self, state: dict) -> None:
        for name, rec in state.items():
            t = self._params[name]
            arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
            if arr.shape != t.shape:
                raise ShapeMismatch(f"checkpoint shape mismatch for {name}")
            t.data = arr
            t.grad = None


@dataclass
class MomentumPair:
    """Online parameters and their slow EMA twin."""

    online: ParamSet
    momentum: ParamSet
    m: float

    @classmethod
    def create(cls, online: ParamSet, m: float) -> "MomentumPair":
        if not 0.0 <= m <= 1.0:
            raise ValueError("momentum coefficient must lie in [0, 1]")
        return cls(online=online, momentum=online.detached_copy(), m=m)

    def update(self) -> None:
        for name, slow in self.momentum.items():
            fast = self.online[name]
            slow.data = self.m * slow.data + (1.0 - self.m) * fast.data


def momentum_update(pair: MomentumPair) -> MomentumPair:
    """EMA step: every twin entry moves to m*twin + (1-m)*online."""
    pair.update()
    return pair


# -- parameter construction -------------------------------------------

def _linear_init(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))


def _add_attention_block(ps: ParamSet, rng, prefix: str, dim: int, heads: int) -> None:
    dh = dim // heads
    for h in range(heads):
        ps.add(f"{prefix}.h{h}.wq", _linear_init(rng, dim, dh))
        ps.add(f"{prefix}.h{h}.wk", _linear_init(rng, dim, dh))
        ps.add(f"{prefix}.h{h}.wv", _linear_init(rng, dim, dh))
    ps.add(f"{prefix}.wo", _linear_init(rng, dim, dim))


def _add_layernorm(ps: ParamSet, prefix: str, dim: int) -> None:
    ps.add(f"{prefix}.g", np.ones(dim))
    ps.add(f"{prefix}.b", np.zeros(dim))


def _add_ffn(ps: ParamSet, rng, prefix: str, dim: int, hidden: int) -> None:
    ps.add(f"{prefix}.w1", _linear_init(rng, dim, hidden))
    ps.add(f"{prefix}.b1", np.zeros(hidden))
    ps.add(f"{prefix}.w2", _linear_init(rng, hidden, dim))
    ps.add(f"{prefix}.b2", np.zeros(dim))


def build_token_encoder(ps: ParamSet, rng, prefix: str, dim: int, depth: int,
                        heads: int, ffn_mult: int, d_joint: int) -> None:
    """Token-mixing stack plus joint projection under the given key prefix."""
    hidden = dim * ffn_mult
    for layer in range(depth):
        base = f"{prefix}.l{layer}"
        _add_layernorm(ps, f"{base}.ln1", dim)
        _add_attention_block(ps, rng, f"{base}.attn", dim, heads)
        _add_layernorm(ps, f"{base}.ln2", dim)
        _add_ffn(ps, rng, f"{base}.ffn", dim, hidden)
    _add_layernorm(ps, f"{prefix}.ln_out", dim)
    ps.add(f"{prefix}.proj", _linear_init(rng, dim, d_joint))


def build_temporal(ps: ParamSet, rng, prefix: str, d_joint: int, heads: int,
                   max_positions: int) -> None:
    ps.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(max_positions, d_joint)))
    _add_attention_block(ps, rng, f"{prefix}.attn", d_joint, heads)


def build_vision_params(rng, cfg: Config) -> ParamSet:
    ps = ParamSet()
    build_token_encoder(ps, rng, "frame", cfg.token_dim, cfg.enc_depth,
                        cfg.enc_heads, cfg.ffn_mult, cfg.d_joint)
    build_temporal(ps, rng, "temporal", cfg.d_joint, cfg.enc_heads, cfg.n_frames)
    return ps


def build_text_params(rng, cfg: Config) -> ParamSet:
    ps = ParamSet()
    build_token_encoder(ps, rng, "text", cfg.token_dim, cfg.enc_depth,
                        cfg.enc_heads, cfg.ffn_mult, cfg.d_joint)
    return ps


# -- forward passes ----------------------------------------------------

LN_EPS = 1e-6


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.layer_norm(x, gain, bias, LN_EPS)


def attention(x: Tensor, ps: ParamSet, prefix: str, heads: int,
              key_bias: np.ndarray, memory: Tensor | None = None) -> Tensor:
    """Multi-head attention; queries from x, keys/values from memory or x."""
    kv = memory if memory is not None else x
    dh = x.shape[1] // heads
    inv = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        q = x @ ps[f"{prefix}.h{h}.wq"]
        k = kv @ ps[f"{prefix}.h{h}.wk"]
        v = kv @ ps[f"{prefix}.h{h}.wv"]
        outs.append(T.attention_core(q, k, v, key_bias, inv))
    return T.concat(outs, axis=1) @ ps[f"{prefix}.wo"]


def mix_tokens(seq: TokenSequence, ps: ParamSet, prefix: str, cfg: Config) -> Tensor:
    """Run the token-mixing stack; returns the (k, D) mixed-token matrix."""
    if seq.width != cfg.token_dim:
        raise ShapeMismatch(f"token width {seq.width} != configured {cfg.token_dim}")
    x = T.constant(seq.tokens)
    bias = seq.key_bias()
    for layer in range(cfg.enc_depth):
        base = f"{prefix}.l{layer}"
        attended = attention(layer_norm(x, ps[f"{base}.ln1.g"], ps[f"{base}.ln1.b"]),
                             ps, f"{base}.attn", cfg.enc_heads, bias)
        x = x + attended
        h = layer_norm(x, ps[f"{base}.ln2.g"], ps[f"{base}.ln2.b"])
        h = T.ttanh(T.affine(h, ps[f"{base}.ffn.w1"], ps[f"{base}.ffn.b1"]))
        x = x + T.affine(h, ps[f"{base}.ffn.w2"], ps[f"{base}.ffn.b2"])
    return layer_norm(x, ps[f"{prefix}.ln_out.g"], ps[f"{prefix}.ln_out.b"])


def _project_cls(tokens: Tensor, ps: ParamSet, prefix: str) -> Tensor:
    return T.l2_normalize(T.take_row(tokens, 0) @ ps[f"{prefix}.proj"])


def encode_frame(seq: TokenSequence, ps: ParamSet, cfg: Config) -> Embedding:
    tokens = mix_tokens(seq, ps, "frame", cfg)
    return Embedding(_project_cls(tokens, ps, "frame"), "frame")


def encode_frame_with_tokens(seq: TokenSequence, ps: ParamSet, cfg: Config):
    """(Embedding, mixed tokens) in one pass; tokens feed the fusion stack."""
    tokens = mix_tokens(seq, ps, "frame", cfg)
    return Embedding(_project_cls(tokens, ps, "frame"), "frame"), tokens


def encode_text(seq: TokenSequence, ps: ParamSet, cfg: Config) -> Embedding:
    tokens = mix_tokens(seq, ps, "text", cfg)
    return Embedding(_project_cls(tokens, ps, "text"), "text")


def encode_text_with_tokens(seq: TokenSequence, ps: ParamSet, cfg: Config):
    tokens = mix_tokens(seq, ps, "text", cfg)
    return Embedding(_project_cls(tokens, ps, "text"), "text"), tokens


def aggregate_temporal(frames: list[Embedding], ps: ParamSet, cfg: Config) -> Embedding:
    """Video embedding: positional self-attention over frame embeddings,
    mean over positions, re-normalized."""
    if not frames:
        raise EmptyFrameList("cannot aggregate zero frames")
    n = len(frames)
    pos = ps["temporal.pos"]
    if n > pos.shape[0]:
        raise ShapeMismatch(f"{n} frames exceed {pos.shape[0]} learned positions")
    x = T.stack([f.vector for f in frames]) + T.slice_rows(pos, 0, n)
    mixed = attention(x, ps, "temporal.attn", cfg.enc_heads, np.zeros(n))
    return Embedding(T.l2_normalize(T.tmean(mixed, axis=0)), "video")
