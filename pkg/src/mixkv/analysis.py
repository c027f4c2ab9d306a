"""Analytic models over layouts: cache memory, token capacity, reachability.

Everything here is exact integer arithmetic derived from the config alone;
the runtime cache is required to agree with these numbers to the byte.
Capacity counts cached KV tokens (prompt plus generated), not batch slots.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import SLIDING, STANDARD, CacheLayout, ModelConfig, cache_groups


@dataclass(frozen=True)
class GroupFootprint:
    group_id: int
    producer: int
    kind: str
    window: int | None
    entries: int
    bytes: int


@dataclass(frozen=True)
class FootprintReport:
    T: int
    element_bytes: int
    groups: tuple[GroupFootprint, ...]
    total_bytes: int
    steady_bytes_per_token: int


@dataclass(frozen=True)
class CapacityReport:
    budget_bytes: int
    reserved_bytes: int
    element_bytes: int
    steady_bytes_per_token: int
    max_total_tokens: int | None  # None means no KV bound (all caches saturate)
    unbounded: bool
    warning: str | None = None


@dataclass(frozen=True)
class ReachabilityReport:
    T: int
    per_layer: tuple[int, ...]  # max lookback after each layer, capped at T-1
    max_lookback: int
    unbounded: bool


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    total_bytes: int
    steady_bytes_per_token: int
    max_total_tokens: int | None
    max_lookback: int
    unbounded_reach: bool


def _entry_bytes(config: ModelConfig, element_bytes: int) -> int:
    return 2 * config.n_kv_heads * config.head_dim * element_bytes


def kv_footprint(config: ModelConfig, T: int, element_bytes: int) -> FootprintReport:
    """Exact KV bytes at sequence length T: standard groups hold T entries,
    sliding groups min(T, window)."""
    layout = cache_groups(config)
    per_entry = _entry_bytes(config, element_bytes)
    groups = []
    total = 0
    steady = 0
    for g in layout.groups:
        entries = T if g.kind == STANDARD else min(T, g.window)
        nbytes = entries * per_entry
        total += nbytes
        if g.kind == STANDARD:
            steady += per_entry
        groups.append(
            GroupFootprint(
                group_id=g.group_id,
                producer=g.producer,
                kind=g.kind,
                window=g.window,
                entries=entries,
                bytes=nbytes,
            )
        )
    return FootprintReport(
        T=T,
        element_bytes=element_bytes,
        groups=tuple(groups),
        total_bytes=total,
        steady_bytes_per_token=steady,
    )


def _footprint_total(layout: CacheLayout, per_entry: int, T: int) -> int:
    total = 0
    for g in layout.groups:
        entries = T if g.kind == STANDARD else min(T, g.window)
        total += entries * per_entry
    return total


def capacity(
    config: ModelConfig,
    budget_bytes: int,
    element_bytes: int,
    reserved_bytes: int = 0,
) -> CapacityReport:
    """Largest cached-token count whose KV footprint fits budget - reserved.

    Closed form: past the largest window every sliding group is saturated, so
    the footprint is affine in T with slope = standard groups x entry bytes.
    Below that the piecewise-linear ramp is resolved by bisection.
    """
    layout = cache_groups(config)
    per_entry = _entry_bytes(config, element_bytes)
    n_std = sum(1 for g in layout.groups if g.kind == STANDARD)
    windows = [g.window for g in layout.groups if g.kind == SLIDING]
    steady = n_std * per_entry

    avail = budget_bytes - reserved_bytes
    if avail <= 0:
        return CapacityReport(
            budget_bytes,
            reserved_bytes,
            element_bytes,
            steady,
            max_total_tokens=0,
            unbounded=False,
            warning="budget does not exceed reserved bytes",
        )

    saturated = per_entry * sum(windows)
    w_max = max(windows, default=0)

    if n_std == 0:
        if saturated <= avail:
            # every group is a ring: past w_max no token adds bytes
            return CapacityReport(
                budget_bytes, reserved_bytes, element_bytes, steady, None, unbounded=True
            )
        tokens = _bisect_fit(layout, per_entry, avail, w_max)
        return CapacityReport(
            budget_bytes, reserved_bytes, element_bytes, steady, tokens, unbounded=False
        )

    t_affine = (avail - saturated) // steady
    if t_affine >= w_max:
        tokens = t_affine
    else:
        tokens = _bisect_fit(layout, per_entry, avail, w_max)
    return CapacityReport(
        budget_bytes, reserved_bytes, element_bytes, steady, tokens, unbounded=False
    )


def _bisect_fit(layout: CacheLayout, per_entry: int, avail: int, hi: int) -> int:
    lo = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _footprint_total(layout, per_entry, mid) <= avail:
            lo = mid
        else:
            hi = mid - 1
    return lo


def capacity_search(
    config: ModelConfig,
    budget_bytes: int,
    element_bytes: int,
    reserved_bytes: int = 0,
) -> int | None:
    """Plain integer search for the capacity, independent of the closed form.

    Walks T upward in doubling steps and bisects; returns None when the
    footprint stops growing before the budget is reached (no KV bound).
    """
    layout = cache_groups(config)
    per_entry = _entry_bytes(config, element_bytes)
    avail = budget_bytes - reserved_bytes
    if avail <= 0:
        return 0
    has_standard = any(g.kind == STANDARD for g in layout.groups)
    w_max = max((g.window for g in layout.groups if g.kind == SLIDING), default=0)
    if not has_standard and _footprint_total(layout, per_entry, w_max) <= avail:
        return None

    hi = 1
    while _footprint_total(layout, per_entry, hi) <= avail:
        hi *= 2
    lo = hi // 2 if hi > 1 else 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _footprint_total(layout, per_entry, mid) <= avail:
            lo = mid
        else:
            hi = mid - 1
    return lo


def receptive_field(config: ModelConfig, T: int) -> ReachabilityReport:
    """How far back the output at position T-1 can see, layer by layer.

    Each sliding layer extends the reachable span by window - 1; a standard
    layer makes position 0 reachable outright. Consumer layers behave as
    their producer's kind (the validator guarantees kind and window match).
    Values are capped at T-1, the farthest real lookback in a T-token input.
    """
    cap = T - 1
    lookback = 0
    unbounded = False
    per_layer = []
    for spec in config.layers:
        if spec.kind == STANDARD:
            unbounded = True
            lookback = cap
        else:
            lookback = min(lookback + spec.window - 1, cap)
        per_layer.append(lookback)
    return ReachabilityReport(
        T=T,
        per_layer=tuple(per_layer),
        max_lookback=per_layer[-1] if per_layer else 0,
        unbounded=unbounded,
    )


def compare_layouts(
    named_configs: list[tuple[str, ModelConfig]],
    T: int,
    budget_bytes: int,
    element_bytes: int,
    reserved_bytes: int = 0,
) -> list[ComparisonRow]:
    if len(named_configs) < 2:
        raise ValueError("compare_layouts needs at least two configs")
    rows = []
    for name, config in named_configs:
        fp = kv_footprint(config, T, element_bytes)
        cp = capacity(config, budget_bytes, element_bytes, reserved_bytes)
        rf = receptive_field(config, T)
        rows.append(
            ComparisonRow(
                name=name,
                total_bytes=fp.total_bytes,
                steady_bytes_per_token=fp.steady_bytes_per_token,
                max_total_tokens=cp.max_total_tokens,
                max_lookback=rf.max_lookback,
                unbounded_reach=rf.unbounded,
            )
        )
    return rows
