"""Runtime KV storage, one cache group per self-compute layer.

Standard groups grow without bound; sliding groups are fixed-size ring
buffers that overwrite the oldest entry once full. Keys are stored already
rotated (rotate-then-cache), so consumers reuse producer keys unchanged and
queries are rotated at their own absolute position. A group set is owned by
exactly one in-flight sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SLIDING, CacheGroupSpec, CacheLayout, ModelConfig
from .kernels import FlopCounter

_INITIAL_STANDARD_CAPACITY = 64


class KVCacheGroup:
    """KV entries for one cache group, with absolute position tracking."""

    def __init__(self, spec: CacheGroupSpec, n_kv_heads: int, head_dim: int):
        self.spec = spec
        self.n_kv_heads = n_kv_heads
        self.head_dim = head_dim
        self.sliding = spec.kind == SLIDING
        capacity = spec.window if self.sliding else _INITIAL_STANDARD_CAPACITY
        self._k = np.zeros((capacity, n_kv_heads, head_dim), dtype=np.float32)
        self._v = np.zeros((capacity, n_kv_heads, head_dim), dtype=np.float32)
        self._positions = np.full(capacity, -1, dtype=np.int64)
        self._count = 0  # entries currently stored
        self._cursor = 0  # next write slot (ring groups only)
        self._last_position = -1

    def __len__(self) -> int:
        return self._count

    @property
    def last_position(self) -> int:
        return self._last_position

    def append(self, position: int, k: np.ndarray, v: np.ndarray) -> None:
        """Store one token's KV. Positions must be strictly increasing."""
        if position <= self._last_position:
            raise ValueError(
                f"non-monotonic append: position {position} after {self._last_position}"
            )
        if self.sliding:
            slot = self._cursor
            self._cursor = (self._cursor + 1) % self.spec.window
            if self._count < self.spec.window:
                self._count += 1
        else:
            if self._count == len(self._positions):
                self._grow()
            slot = self._count
            self._count += 1
        self._k[slot] = k
        self._v[slot] = v
        self._positions[slot] = position
        self._last_position = position

    def _grow(self) -> None:
        new_cap = len(self._positions) * 2
        for name in ("_k", "_v"):
            buf = getattr(self, name)
            grown = np.zeros((new_cap, *buf.shape[1:]), dtype=buf.dtype)
            grown[: self._count] = buf[: self._count]
            setattr(self, name, grown)
        positions = np.full(new_cap, -1, dtype=np.int64)
        positions[: self._count] = self._positions[: self._count]
        self._positions = positions

    def view(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(positions, keys, values) in ascending position order.

        For a wrapped ring the physical order is rotated; the logical order is
        recovered by splitting at the write cursor.
        """
        n = self._count
        if self.sliding and n == self.spec.window and self._cursor != 0:
            order = np.r_[self._cursor : n, 0 : self._cursor]
            return self._positions[order], self._k[order], self._v[order]
        return self._positions[:n], self._k[:n], self._v[:n]


@dataclass(frozen=True)
class GroupStats:
    group_id: int
    kind: str
    entries: int
    elements: int
    bytes: int


@dataclass(frozen=True)
class CacheStats:
    groups: tuple[GroupStats, ...]
    total_elements: int
    total_bytes: int


class CacheSet:
    """All cache groups for one sequence, plus that sequence's counters.

    Owning the attention FLOP counter and append counter here keeps concurrent
    sequences free of shared state.
    """

    def __init__(self, config: ModelConfig, layout: CacheLayout):
        self.config = config
        self.layout = layout
        self.groups = [
            KVCacheGroup(spec, config.n_kv_heads, config.head_dim) for spec in layout.groups
        ]
        self._by_layer = {
            member: self.groups[spec.group_id]
            for spec in layout.groups
            for member in spec.members
        }
        self.appends = 0
        self.tokens_seen = 0
        self.flops = FlopCounter()

    @property
    def attention_flops(self) -> int:
        return self.flops.total

    def group_for_layer(self, layer_index: int) -> KVCacheGroup:
        return self._by_layer[layer_index]

    def append(self, group: KVCacheGroup, position: int, k: np.ndarray, v: np.ndarray) -> None:
        group.append(position, k, v)
        self.appends += 1

    def stats(self, element_bytes: int = 4) -> CacheStats:
        return stats(self.groups, self.config, element_bytes)


def stats(groups: list[KVCacheGroup], config: ModelConfig, element_bytes: int) -> CacheStats:
    """Exact element and byte accounting: entries x 2 x n_kv_heads x head_dim."""
    per_entry = 2 * config.n_kv_heads * config.head_dim
    rows = []
    total_elements = 0
    for g in groups:
        elements = len(g) * per_entry
        total_elements += elements
        rows.append(
            GroupStats(
                group_id=g.spec.group_id,
                kind=g.spec.kind,
                entries=len(g),
                elements=elements,
                bytes=elements * element_bytes,
            )
        )
    return CacheStats(
        groups=tuple(rows),
        total_elements=total_elements,
        total_bytes=total_elements * element_bytes,
    )
