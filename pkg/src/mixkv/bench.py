"""Generation benchmark over a layout: throughput, exact FLOPs, peak cache bytes.

Wall-clock columns are reported for human comparison only; every other column
is an exact count and must be bit-identical across runs with the same seed.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .analysis import capacity, kv_footprint
from .config import SLIDING, ModelConfig
from .engine import GenerationRequest, Greedy, Model
from .weights import init_random

DEFAULT_CEILING_BYTES = 1 << 30  # refuse runs predicted to exceed 1 GiB of cache


class BenchRefusedError(RuntimeError):
    """Predicted cache footprint exceeds the configured ceiling."""


@dataclass(frozen=True)
class BenchReport:
    config_name: str
    n_prompts: int
    input_len: int
    output_len: int
    repeats: int
    prefill_tokens_per_sec: float
    decode_tokens_per_sec: float
    decode_attention_flops: int
    flops_per_decoded_token: float
    peak_cache_bytes: int
    capacity_tokens: int | None
    budget_bytes: int


def attention_flops_per_decode_token(config: ModelConfig, T: int) -> int:
    """Exact attention FLOPs of the decode step at position T (0-based).

    After that step's append, a standard layer sees T+1 keys and a sliding
    layer min(T+1, window); each (query head, key) pair costs 4*head_dim
    FLOPs (dot with K, then the weighted sum over V).
    """
    total = 0
    for spec in config.layers:
        width = min(T + 1, spec.window) if spec.kind == SLIDING else T + 1
        total += config.n_q_heads * width * 4 * config.head_dim
    return total


def bench_run(
    config: ModelConfig,
    config_name: str,
    n_prompts: int = 8,
    input_len: int = 4096,
    output_len: int = 128,
    repeats: int = 3,
    seed: int = 0,
    budget_bytes: int = 16 << 30,
    element_bytes: int = 2,
    ceiling_bytes: int = DEFAULT_CEILING_BYTES,
) -> BenchReport:
    """Run seeded generations and aggregate a report row.

    Prompts and weights are derived from the seed, so FLOP and byte columns
    reproduce exactly; timing columns are medians over `repeats`.
    """
    if repeats < 3:
        raise ValueError("medians need at least 3 repeats")
    total_len = input_len + output_len
    predicted = kv_footprint(config, total_len, 4).total_bytes
    if predicted > ceiling_bytes:
        raise BenchRefusedError(
            f"predicted cache footprint {predicted} bytes exceeds ceiling {ceiling_bytes}"
        )

    model = Model(init_random(config, seed))
    rng = np.random.default_rng([seed, 1])
    prompts = [
        tuple(int(t) for t in rng.integers(0, config.vocab_size, size=input_len))
        for _ in range(n_prompts)
    ]

    prefill_rates = []
    decode_rates = []
    flops_seen: set[int] = set()
    bytes_seen: set[int] = set()
    for _ in range(repeats):
        prefill_s = 0.0
        decode_s = 0.0
        decode_flops = 0
        peak = 0
        for prompt in prompts:
            out = model.generate(GenerationRequest(prompt, output_len, Greedy()))
            prefill_s += out.prefill_seconds
            decode_s += out.decode_seconds_per_token * max(len(out.tokens), 1)
            decode_flops += out.attention_flops - out.prefill_attention_flops
            peak = max(peak, out.cache_stats.total_bytes)
        prefill_rates.append(n_prompts * input_len / prefill_s)
        decode_rates.append(n_prompts * output_len / decode_s)
        flops_seen.add(decode_flops)
        bytes_seen.add(peak)

    if len(flops_seen) != 1 or len(bytes_seen) != 1:
        raise AssertionError("count columns varied across repeats with a fixed seed")
    decode_flops = flops_seen.pop()
    peak = bytes_seen.pop()

    expected_peak = kv_footprint(config, total_len, 4).total_bytes
    if peak != expected_peak:
        raise AssertionError(
            f"runtime peak cache bytes {peak} disagree with analytic footprint {expected_peak}"
        )

    cap = capacity(config, budget_bytes, element_bytes)
    return BenchReport(
        config_name=config_name,
        n_prompts=n_prompts,
        input_len=input_len,
        output_len=output_len,
        repeats=repeats,
        prefill_tokens_per_sec=statistics.median(prefill_rates),
        decode_tokens_per_sec=statistics.median(decode_rates),
        decode_attention_flops=decode_flops,
        flops_per_decoded_token=decode_flops / (n_prompts * output_len),
        peak_cache_bytes=peak,
        capacity_tokens=cap.max_total_tokens,
        budget_bytes=budget_bytes,
    )
