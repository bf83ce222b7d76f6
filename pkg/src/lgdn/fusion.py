"""Cross-attention fusion over (frame tokens, text tokens) plus matching head.

Each fusion layer applies, pre-norm with residuals: self-attention over the
text tokens, cross-attention with text queries against frame-patch keys and
values, and a feed-forward sub-layer.  The joint representation is read at
text position 0 ([CLS]); a two-logit head turns it into a match probability
(class 1 = matched).  Video-level scores mean-pool the per-frame match
probabilities over the salient set.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import Config
from .encoders import (ParamSet, TokenSequence, _add_attention_block,
                       _add_ffn, _add_layernorm, _linear_init, attention,
                       layer_norm)
from .errors import EmptySalientSet, ShapeMismatch
from .tensor import Tensor


def build_fusion_params(rng, cfg: Config) -> ParamSet:
    ps = ParamSet()
    d = cfg.d_fuse
    ps.add("fusion.in_frame", _linear_init(rng, cfg.token_dim, d))
    ps.add("fusion.in_text", _linear_init(rng, cfg.token_dim, d))
    for layer in range(cfg.fusion_depth):
        base = f"fusion.l{layer}"
        _add_layernorm(ps, f"{base}.ln1", d)
        _add_attention_block(ps, rng, f"{base}.self", d, cfg.fusion_heads)
        _add_layernorm(ps, f"{base}.ln2", d)
        _add_attention_block(ps, rng, f"{base}.cross", d, cfg.fusion_heads)
        _add_layernorm(ps, f"{base}.ln3", d)
        _add_ffn(ps, rng, f"{base}.ffn", d, d * cfg.ffn_mult)
    _add_layernorm(ps, "fusion.ln_out", d)
    # zero head: untrained pairs start at exactly p = 0.5
    ps.add("fusion.head.w", np.zeros((d, 2)))
    ps.add("fusion.head.b", np.zeros(2))
    return ps


def cross_fuse(frame_tokens: Tensor, text_tokens: Tensor, ps: ParamSet,
               cfg: Config, frame_bias: np.ndarray | None = None,
               text_bias: np.ndarray | None = None) -> Tensor:
    """Joint [CLS] representation of one (frame, text) token pair."""
    if frame_tokens.shape[1] != cfg.token_dim or text_tokens.shape[1] != cfg.token_dim:
        raise ShapeMismatch("fusion input token width differs from config")
    if frame_bias is None:
        frame_bias = np.zeros(frame_tokens.shape[0])
    if text_bias is None:
        text_bias = np.zeros(text_tokens.shape[0])
    memory = frame_tokens @ ps["fusion.in_frame"]
    x = text_tokens @ ps["fusion.in_text"]
    for layer in range(cfg.fusion_depth):
        base = f"fusion.l{layer}"
        x = x + attention(layer_norm(x, ps[f"{base}.ln1.g"], ps[f"{base}.ln1.b"]),
                          ps, f"{base}.self", cfg.fusion_heads, text_bias)
        x = x + attention(layer_norm(x, ps[f"{base}.ln2.g"], ps[f"{base}.ln2.b"]),
                          ps, f"{base}.cross", cfg.fusion_heads, frame_bias,
                          memory=memory)
        h = layer_norm(x, ps[f"{base}.ln3.g"], ps[f"{base}.ln3.b"])
        h = T.ttanh(T.affine(h, ps[f"{base}.ffn.w1"], ps[f"{base}.ffn.b1"]))
        x = x + T.affine(h, ps[f"{base}.ffn.w2"], ps[f"{base}.ffn.b2"])
    x = layer_norm(x, ps["fusion.ln_out.g"], ps["fusion.ln_out.b"])
    return T.take_row(x, 0)


def match_logits(joint_cls: Tensor, ps: ParamSet) -> Tensor:
    """Two logits (class 0 = unmatched, class 1 = matched)."""
    return T.affine(joint_cls, ps["fusion.head.w"], ps["fusion.head.b"])


def match_prob(joint_cls: Tensor, ps: ParamSet) -> Tensor:
    """Probability that the fused pair is matched (softmax mass on class 1)."""
    return T.element(T.softmax(match_logits(joint_cls, ps), axis=-1), 1)


def fuse_match_prob(frame: TokenSequence, text: TokenSequence, ps: ParamSet,
                    cfg: Config, mixer=None) -> Tensor:
    """Convenience: mix raw token sequences (optional) then fuse and score."""
    if mixer is not None:
        ftok, ttok = mixer(frame, text)
    else:
        ftok, ttok = T.constant(frame.tokens), T.constant(text.tokens)
    cls = cross_fuse(ftok, ttok, ps, cfg, frame.key_bias(), text.key_bias())
    return match_prob(cls, ps)


def video_match_score(frame_token_list: list[Tensor], text_tokens: Tensor,
                      salient_indices: list[int], ps: ParamSet, cfg: Config,
                      frame_biases: list[np.ndarray] | None = None,
                      text_bias: np.ndarray | None = None) -> Tensor:
    """Mean match probability over the salient frames of one (video, text)."""
    if not salient_indices:
        raise EmptySalientSet("video_match_score needs at least one salient frame")
    probs = []
    for j in salient_indices:
        fb = frame_biases[j] if frame_biases is not None else None
        cls = cross_fuse(frame_token_list[j], text_tokens, ps, cfg, fb, text_bias)
        probs.append(T.reshape(match_prob(cls, ps), (1,)))
    return T.tmean(T.concat(probs))
