"""Fusion operators combining the visual and tactile feature vectors:
summation, max, concatenation, and attention-guided weighted averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError
from .layers import he_uniform

STRATEGIES = ("sum", "max", "concat", "attention")


@dataclass
class AttentionBlock:
    """Scaled dot-product attention over a short token sequence.

    With ``w_value is None`` (the default) the values are the raw tokens, so
    the attention row over a 2-token visual/tactile sequence is directly the
    pair of modality weights (p, q).
    """

    w_query: ad.Tensor  # feature_dim × heads*d_k
    w_key: ad.Tensor
    w_value: ad.Tensor | None
    heads: int = 1

    @classmethod
    def create(cls, rng, feature_dim, d_k=None, heads=1, learned_values=False):
        if d_k is None:
            d_k = feature_dim
        if heads < 1 or d_k % heads:
            raise ParameterError(f"d_k {d_k} must divide evenly into {heads} head(s)")
        if learned_values and feature_dim % heads:
            raise ParameterError(f"feature_dim {feature_dim} not divisible by {heads} head(s)")
        shape = (feature_dim, d_k)
        # the query projection starts at zero so attention opens from the
        # uniform (0.5, 0.5) gate and sharpens only where training demands;
        # the random key projection keeps the gradient path alive
        return cls(
            w_query=ad.Tensor(np.zeros(shape), requires_grad=True),
            w_key=ad.Tensor(he_uniform(rng, feature_dim, shape), requires_grad=True),
            w_value=(
                ad.Tensor(he_uniform(rng, feature_dim, (feature_dim, feature_dim)), requires_grad=True)
                if learned_values
                else None
            ),
            heads=heads,
        )

    @property
    def d_k_per_head(self):
        return self.w_query.shape[1] // self.heads

    def params(self):
        out = {"fusion.w_query": self.w_query, "fusion.w_key": self.w_key}
        if self.w_value is not None:
            out["fusion.w_value"] = self.w_value
        return out


@dataclass
class FusionResult:
    fused: ad.Tensor  # b × feature_dim (b × 2*feature_dim for concat)
    weights: ad.Tensor | None = None  # b × 2 (p, q); attention only
    discarded: ad.Tensor | None = None  # the (r, s) branch output, never fed downstream


def _check_same_shape(xa, xb):
    if xa.shape != xb.shape:
        raise ShapeError(f"fusion operands disagree: {xa.shape} vs {xb.shape}")


def fuse_sum(xa, xb):
    _check_same_shape(xa, xb)
    return FusionResult(fused=ad.add(xa, xb))


def fuse_max(xa, xb):
    _check_same_shape(xa, xb)
    return FusionResult(fused=ad.maximum(xa, xb))


def fuse_concat(xa, xb):
    if xa.shape[0] != xb.shape[0]:
        raise ShapeError(f"batch sizes disagree: {xa.shape[0]} vs {xb.shape[0]}")
    return FusionResult(fused=ad.concat([xa, xb], axis=1))


def attention_forward(block, h):
    """Self-attention over h: b×n×d.  Returns (output b×n×d_v, rows b×heads×n×n)."""
    b, n, d = h.shape
    heads = block.heads
    dk = block.d_k_per_head
    q = ad.matmul(h, block.w_query)  # b×n×(heads*dk)
    k = ad.matmul(h, block.w_key)
    if block.w_value is not None:
        v = ad.matmul(h, block.w_value)
    else:
        v = h
    dv = v.shape[-1]
    dv_head = dv // heads
    outputs = []
    rows = []
    for head in range(heads):
        qs = q[:, :, head * dk : (head + 1) * dk]
        ks = k[:, :, head * dk : (head + 1) * dk]
        vs = v[:, :, head * dv_head : (head + 1) * dv_head]
        logits = ad.scale(ad.matmul(qs, ad.transpose_last(ks)), 1.0 / np.sqrt(dk))
        attn = ad.softmax(logits, axis=-1)  # b×n×n
        outputs.append(ad.matmul(attn, vs))
        rows.append(ad.reshape(attn, (b, 1, n, n)))
    output = outputs[0] if heads == 1 else ad.concat(outputs, axis=2)
    attn_rows = rows[0] if heads == 1 else ad.concat(rows, axis=1)
    return output, attn_rows


def fuse_attention(block, xa, xb):
    """Stack the two features as a 2-token sequence, attend, keep token a.

    The fused output is p*v_a + q*v_b where (p, q) is the attention row whose
    query is the first (visual) token; with multiple heads the reported
    weights are the head average.  The second token's output is computed but
    only exposed for inspection.
    """
    _check_same_shape(xa, xb)
    b, d = xa.shape
    h = ad.concat([ad.reshape(xa, (b, 1, d)), ad.reshape(xb, (b, 1, d))], axis=1)
    output, attn_rows = attention_forward(block, h)
    fused = ad.reshape(output[:, 0, :], (b, -1))
    discarded = ad.reshape(output[:, 1, :], (b, -1))
    weights = ad.reshape(ad.tmean(attn_rows[:, :, 0, :], axis=1), (b, 2))
    return FusionResult(fused=fused, weights=weights, discarded=discarded)


def fuse(strategy, xa, xb, block=None):
    """Dispatch by config string: sum | max | concat | attention."""
    if strategy == "sum":
        return fuse_sum(xa, xb)
    if strategy == "max":
        return fuse_max(xa, xb)
    if strategy == "concat":
        return fuse_concat(xa, xb)
    if strategy == "attention":
        if block is None:
            raise ParameterError("attention fusion needs an AttentionBlock")
        return fuse_attention(block, xa, xb)
    raise ParameterError(f"unknown fusion strategy {strategy!r}; choose from {STRATEGIES}")


def fused_width(strategy, feature_dim):
    return 2 * feature_dim if strategy == "concat" else feature_dim
