"""Numeric primitives: RoPE, masked GQA attention, RMSNorm, SwiGLU and MoE FFN.

All arithmetic is 32-bit float. Functions are pure and hold no state; the
attention kernel optionally reports its inner-product FLOPs to a caller-owned
counter so speed claims can be asserted without wall clocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CAUSAL = "causal"
CAUSAL_WINDOW = "causal_window"


@dataclass(frozen=True)
class MaskRule:
    """Causal mask, optionally restricted to the last `window` keys (self included)."""

    kind: str
    window: int | None = None

    def __post_init__(self):
        if self.kind not in (CAUSAL, CAUSAL_WINDOW):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == CAUSAL_WINDOW and (self.window is None or self.window < 1):
            raise ValueError("windowed mask needs window >= 1")

    def allows(self, query_pos: int, key_pos: int) -> bool:
        if key_pos > query_pos:
            return False
        if self.kind == CAUSAL:
            return True
        return query_pos - key_pos <= self.window - 1


def causal() -> MaskRule:
    return MaskRule(CAUSAL)


def causal_window(window: int) -> MaskRule:
    return MaskRule(CAUSAL_WINDOW, window)


class FlopCounter:
    """Exact count of attention inner-product FLOPs (multiply + add each count 1)."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


def rope_angles(position: int, head_dim: int, theta: float) -> np.ndarray:
    """Rotation angle per dimension pair: position * theta^(-2k/head_dim)."""
    k = np.arange(head_dim // 2, dtype=np.float64)
    return position * theta ** (-2.0 * k / head_dim)


def rope_cos_sin(position: int, head_dim: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Precomputed cos/sin of the per-pair angles at one position."""
    angles = rope_angles(position, head_dim, theta)
    return np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)


def rope_apply(v: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Apply a precomputed rotation to (..., head_dim) vectors."""
    even = v[..., 0::2]
    odd = v[..., 1::2]
    out = np.empty_like(v, dtype=np.float32)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(v: np.ndarray, position: int, theta: float) -> np.ndarray:
    """Rotate consecutive dim pairs (2k, 2k+1) of each head vector by its position angle.

    v has shape (..., head_dim) with head_dim even. Norm-preserving.
    """
    head_dim = v.shape[-1]
    if head_dim % 2 != 0:
        raise ValueError(f"head_dim must be even for rotary embedding, got {head_dim}")
    cos, sin = rope_cos_sin(position, head_dim, theta)
    return rope_apply(v, cos, sin)


def gqa_map(query_head: int, n_q: int, n_kv: int) -> int:
    """KV head serving a query head: contiguous blocks of n_q/n_kv query heads."""
    if n_q % n_kv != 0:
        raise ValueError(f"n_q={n_q} must be divisible by n_kv={n_kv}")
    return query_head // (n_q // n_kv)


def masked_attention(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    key_positions: np.ndarray,
    query_position: int,
    rule: MaskRule,
    scale: float,
    counter: FlopCounter | None = None,
) -> np.ndarray:
    """Attention output for one query position across all query heads.

    q: (n_q, head_dim); keys/values: (W, n_kv, head_dim) with absolute
    key_positions (W,). Only keys the rule allows participate; softmax is
    stabilized by max-subtraction. Each query head reads its mapped KV head.
    Raises if no key is allowed (the self key must always be present).
    """
    n_q, head_dim = q.shape
    n_kv = keys.shape[1]

    allowed = key_positions <= query_position
    if rule.kind == CAUSAL_WINDOW:
        allowed &= query_position - key_positions <= rule.window - 1
    if allowed.all():
        k, v = keys, values  # common case: every cached key is visible, no copy
    else:
        idx = np.nonzero(allowed)[0]
        k = keys[idx]
        v = values[idx]
    width = k.shape[0]
    if width == 0:
        raise ValueError(
            f"no keys allowed at query position {query_position}; "
            "the current token's own key must be cached before attending"
        )
    if counter is not None:
        counter.add(n_q * width * 4 * head_dim)

    # group query heads by their KV head: head h reads KV head h // group
    group = n_q // n_kv
    qg = q.reshape(n_kv, group, head_dim)
    scores = np.einsum("kgd,wkd->kgw", qg, k) * np.float32(scale)
    scores -= scores.max(axis=2, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=2, keepdims=True)
    out = np.einsum("kgw,wkd->kgd", weights, v)
    return np.ascontiguousarray(out.reshape(n_q, head_dim), dtype=np.float32)


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """x / sqrt(mean(x^2) + eps) * gain, along the last axis."""
    ms = np.mean(np.square(x), axis=-1, keepdims=True, dtype=np.float32)
    return (x / np.sqrt(ms + np.float32(eps)) * gain).astype(np.float32)


def silu(x: np.ndarray) -> np.ndarray:
    return (x / (1.0 + np.exp(-x))).astype(np.float32)


def swiglu_forward(x: np.ndarray, gate: np.ndarray, up: np.ndarray, down: np.ndarray) -> np.ndarray:
    """down @ (silu(gate @ x) * (up @ x)) for a single vector x."""
    return (down @ (silu(gate @ x) * (up @ x))).astype(np.float32)


def moe_select(router_logits: np.ndarray, top_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k experts by softmax weight, ties to the lower index; weights renormalized.

    Returns (expert_indices ascending-by-weight-rank, normalized weights).
    Adding a constant to all logits does not change the result.
    """
    z = router_logits.astype(np.float64)
    z -= z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    # stable sort on -probs keeps the lower expert index first among ties
    order = np.argsort(-probs, kind="stable")[:top_k]
    selected = probs[order]
    return order, (selected / selected.sum()).astype(np.float32)


def moe_forward(
    x: np.ndarray,
    router: np.ndarray,
    expert_weights: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    top_k: int,
) -> np.ndarray:
    """Route x to the top-k experts and mix their SwiGLU outputs."""
    logits = router @ x
    experts, weights = moe_select(logits, top_k)
    out = np.zeros_like(x, dtype=np.float32)
    for e, w in zip(experts, weights):
        gate, up, down = expert_weights[e]
        out += w * swiglu_forward(x, gate, up, down)
    return out
