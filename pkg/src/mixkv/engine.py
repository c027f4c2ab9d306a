"""Model forward pass: cached incremental execution and a no-cache oracle.

The cached path processes every token (prompt and generated alike) through
one code path: embed, then per layer norm -> attention -> residual ->
norm -> FFN -> residual, with self-compute layers appending rotated K and V
to their cache group and consumer layers reading the producer's view.

oracle_logits recomputes the same function over a whole sequence with dense
boolean masks and no cache structures; it is the semantic reference the
cached path is tested against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import SLIDING, LayerSpec, ModelConfig, MoEFFN, cache_groups
from .kvcache import CacheSet, CacheStats
from .weights import ModelWeights, check_tensors


@dataclass(frozen=True)
class Greedy:
    pass


@dataclass(frozen=True)
class Temperature:
    t: float
    seed: int


@dataclass(frozen=True)
class GenerationRequest:
    prompt: tuple[int, ...]
    max_new_tokens: int
    sampling: Greedy | Temperature = field(default_factory=Greedy)


@dataclass
class GenerationOutput:
    tokens: list[int]
    cache_stats: CacheStats
    prefill_seconds: float
    decode_seconds_per_token: float
    logits: list[np.ndarray] | None = None
    attention_flops: int = 0
    prefill_attention_flops: int = 0


class _Layer:
    """Per-layer weight views resolved once at model build time."""

    def __init__(self, spec: LayerSpec, weights: ModelWeights):
        cfg = weights.config
        t = weights.tensors
        p = f"layers.{spec.index}"
        self.spec = spec
        self.attn_norm = t[f"{p}.attn_norm"]
        self.wq = t[f"{p}.attn.q"]
        self.wk = t.get(f"{p}.attn.k")  # absent on consumer layers
        self.wv = t.get(f"{p}.attn.v")
        self.wo = t[f"{p}.attn.out"]
        self.ffn_norm = t[f"{p}.ffn_norm"]
        if isinstance(cfg.ffn, MoEFFN):
            self.router = t[f"{p}.ffn.router"]
            self.experts = [
                (
                    t[f"{p}.ffn.experts.{e}.gate"],
                    t[f"{p}.ffn.experts.{e}.up"],
                    t[f"{p}.ffn.experts.{e}.down"],
                )
                for e in range(cfg.ffn.n_experts)
            ]
        else:
            self.router = None
            self.experts = [(t[f"{p}.ffn.gate"], t[f"{p}.ffn.up"], t[f"{p}.ffn.down"])]
        self.rule = (
            kernels.causal_window(spec.window) if spec.kind == SLIDING else kernels.causal()
        )

    def ffn(self, x: np.ndarray, top_k: int) -> np.ndarray:
        if self.router is not None:
            return kernels.moe_forward(x, self.router, self.experts, top_k)
        gate, up, down = self.experts[0]
        return kernels.swiglu_forward(x, gate, up, down)


class Model:
    """Immutable weights plus derived cache layout; shareable across threads.

    Every generation request owns its CacheSet, so N requests can run on N
    threads with no synchronization.
    """

    def __init__(self, weights: ModelWeights):
        check_tensors(weights.config, weights.tensors)
        if weights.config.head_dim % 2 != 0:
            raise ValueError("head_dim must be even (rotary embedding works on dim pairs)")
        self.config = weights.config
        self.layout = cache_groups(weights.config)
        self.embedding = weights.tensors["embedding"]
        self.unembedding = weights.tensors["unembedding"]
        self.final_norm = weights.tensors["final_norm"]
        self.layers = [_Layer(spec, weights) for spec in weights.config.layers]
        self.scale = 1.0 / np.sqrt(weights.config.head_dim)
        self.top_k = weights.config.ffn.top_k if isinstance(weights.config.ffn, MoEFFN) else 1

    def new_caches(self) -> CacheSet:
        return CacheSet(self.config, self.layout)

    def forward_token(self, caches: CacheSet, token: int, position: int) -> np.ndarray:
        """Process one token at an absolute position; returns the logits vector."""
        cfg = self.config
        if not 0 <= token < cfg.vocab_size:
            raise ValueError(f"token id {token} outside vocab of size {cfg.vocab_size}")
        if position >= cfg.max_seq_len:
            raise ValueError(f"position {position} beyond max_seq_len {cfg.max_seq_len}")
        if position != caches.tokens_seen:
            raise ValueError(
                f"position {position} does not match tokens processed ({caches.tokens_seen})"
            )

        cos, sin = kernels.rope_cos_sin(position, cfg.head_dim, cfg.rope_theta)
        h = self.embedding[token].copy()
        for layer in self.layers:
            x = kernels.rmsnorm(h, layer.attn_norm)
            q = (layer.wq @ x).reshape(cfg.n_q_heads, cfg.head_dim)
            q = kernels.rope_apply(q, cos, sin)
            group = caches.group_for_layer(layer.spec.index)
            if layer.spec.self_compute:
                k = (layer.wk @ x).reshape(cfg.n_kv_heads, cfg.head_dim)
                k = kernels.rope_apply(k, cos, sin)
                v = (layer.wv @ x).reshape(cfg.n_kv_heads, cfg.head_dim)
                caches.append(group, position, k, v)
            positions, keys, vals = group.view()
            attn = kernels.masked_attention(
                q, keys, vals, positions, position, layer.rule, self.scale, caches.flops
            )
            h = h + layer.wo @ attn.reshape(-1)
            h = h + layer.ffn(kernels.rmsnorm(h, layer.ffn_norm), self.top_k)

        caches.tokens_seen += 1
        out = kernels.rmsnorm(h, self.final_norm)
        return (self.unembedding @ out).astype(np.float32)

    def prefill(self, prompt: list[int] | tuple[int, ...]) -> tuple[np.ndarray, CacheSet]:
        """Run the prompt through the model; returns (last-position logits, caches)."""
        if len(prompt) == 0:
            raise ValueError("prompt must be non-empty")
        if len(prompt) > self.config.max_seq_len:
            raise ValueError(
                f"prompt of {len(prompt)} tokens exceeds max_seq_len {self.config.max_seq_len}"
            )
        caches = self.new_caches()
        logits = None
        for pos, tok in enumerate(prompt):
            logits = self.forward_token(caches, tok, pos)
        return logits, caches

    def decode_step(self, caches: CacheSet, token: int, position: int) -> np.ndarray:
        return self.forward_token(caches, token, position)

    def forward_collect(self, tokens: list[int] | tuple[int, ...]) -> tuple[np.ndarray, CacheSet]:
        """Cached execution over a full sequence, collecting logits at every position."""
        caches = self.new_caches()
        rows = [self.forward_token(caches, tok, pos) for pos, tok in enumerate(tokens)]
        return np.stack(rows), caches

    def generate(self, request: GenerationRequest, emit_logits: bool = False) -> GenerationOutput:
        cfg = self.config
        prompt = list(request.prompt)
        if len(prompt) + request.max_new_tokens > cfg.max_seq_len:
            raise ValueError(
                f"prompt ({len(prompt)}) + max_new_tokens ({request.max_new_tokens}) "
                f"exceeds max_seq_len {cfg.max_seq_len}"
            )

        rng = None
        if isinstance(request.sampling, Temperature):
            if request.sampling.t <= 0:
                raise ValueError("temperature must be > 0")
            rng = np.random.default_rng(request.sampling.seed)

        all_logits: list[np.ndarray] | None = [] if emit_logits else None
        caches = self.new_caches()

        t0 = time.perf_counter()
        logits = None
        for pos, tok in enumerate(prompt):
            logits = self.forward_token(caches, tok, pos)
            if all_logits is not None:
                all_logits.append(logits)
        prefill_seconds = time.perf_counter() - t0
        prefill_flops = caches.attention_flops

        generated: list[int] = []
        t1 = time.perf_counter()
        for step in range(request.max_new_tokens):
            tok = self._pick(logits, request.sampling, rng)
            generated.append(tok)
            # feed the token back even on the last step so the cache ends up
            # holding exactly prompt + generated tokens
            logits = self.forward_token(caches, tok, len(prompt) + step)
            if all_logits is not None:
                all_logits.append(logits)
        decode_seconds = time.perf_counter() - t1

        return GenerationOutput(
            tokens=generated,
            cache_stats=caches.stats(),
            prefill_seconds=prefill_seconds,
            decode_seconds_per_token=decode_seconds / max(len(generated), 1),
            logits=all_logits,
            attention_flops=caches.attention_flops,
            prefill_attention_flops=prefill_flops,
        )

    @staticmethod
    def _pick(logits: np.ndarray, sampling: Greedy | Temperature, rng) -> int:
        if isinstance(sampling, Greedy):
            # argmax takes the first maximal entry, i.e. the lowest token id
            return int(np.argmax(logits))
        z = logits.astype(np.float64) / sampling.t
        z -= z.max()
        probs = np.exp(z)
        probs /= probs.sum()
        return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))

    # ---- dense reference path ----

    def oracle_logits(self, tokens: list[int] | tuple[int, ...]) -> np.ndarray:
        """Full-sequence forward with dense T x T masks and no cache structures.

        Producer K/V are recomputed from the producer layer's input and handed
        to consumer layers directly, which is by construction the function the
        cached path must reproduce. Returns logits at every position, (T, vocab).
        """
        cfg = self.config
        T = len(tokens)
        if T > cfg.max_seq_len:
            raise ValueError(f"sequence of {T} tokens exceeds max_seq_len {cfg.max_seq_len}")
        positions = np.arange(T)
        h = self.embedding[np.asarray(tokens)].astype(np.float32)

        producer_kv: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        group_size = cfg.n_q_heads // cfg.n_kv_heads
        for layer in self.layers:
            x = kernels.rmsnorm(h, layer.attn_norm)
            q = (x @ layer.wq.T).reshape(T, cfg.n_q_heads, cfg.head_dim)
            q = _rope_batch(q, positions, cfg.rope_theta)
            if layer.spec.self_compute:
                k = (x @ layer.wk.T).reshape(T, cfg.n_kv_heads, cfg.head_dim)
                k = _rope_batch(k, positions, cfg.rope_theta)
                v = (x @ layer.wv.T).reshape(T, cfg.n_kv_heads, cfg.head_dim)
                producer_kv[layer.spec.index] = (k, v)
            else:
                k, v = producer_kv[layer.spec.share_from]

            mask = dense_mask(T, layer.rule)
            k_rep = np.repeat(k, group_size, axis=1)
            v_rep = np.repeat(v, group_size, axis=1)
            scores = np.einsum("iqd,jqd->qij", q, k_rep).astype(np.float32)
            scores *= np.float32(self.scale)
            scores = np.where(mask[None, :, :], scores, -np.inf)
            scores -= scores.max(axis=2, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=2, keepdims=True)
            attn = np.einsum("qij,jqd->iqd", w, v_rep).astype(np.float32)
            h = h + attn.reshape(T, -1) @ layer.wo.T

            xf = kernels.rmsnorm(h, layer.ffn_norm)
            h = h + np.stack([layer.ffn(row, self.top_k) for row in xf])

        out = kernels.rmsnorm(h, self.final_norm)
        return (out @ self.unembedding.T).astype(np.float32)


def dense_mask(T: int, rule: kernels.MaskRule) -> np.ndarray:
    """Boolean (T, T) matrix: entry (i, j) true iff query i may attend key j."""
    i = np.arange(T)[:, None]
    j = np.arange(T)[None, :]
    mask = j <= i
    if rule.kind == kernels.CAUSAL_WINDOW:
        mask &= i - j <= rule.window - 1
    return mask


def _rope_batch(v: np.ndarray, positions: np.ndarray, theta: float) -> np.ndarray:
    """rope_rotate applied across (T, heads, head_dim) with per-row positions."""
    head_dim = v.shape[-1]
    k = np.arange(head_dim // 2, dtype=np.float64)
    angles = positions[:, None].astype(np.float64) * theta ** (-2.0 * k / head_dim)
    cos = np.cos(angles).astype(np.float32)[:, None, :]
    sin = np.sin(angles).astype(np.float32)[:, None, :]
    even = v[..., 0::2]
    odd = v[..., 1::2]
    out = np.empty_like(v, dtype=np.float32)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out
