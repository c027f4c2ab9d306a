"""Deterministic weight init and the cross-language binary weight file.

File layout (all integers little-endian):

    magic   4 bytes  "MXAT"
    version u32      1
    cfg_len u64      length of the UTF-8 config JSON that follows
    config  cfg_len bytes
    records until EOF, each:
        name_len u32, name bytes, rank u32, dims u64[rank],
        float32 little-endian data (row-major)

Consumer layers reuse a producer's cache, so they carry no k/v projection
tensors; the expected tensor set is derived from the embedded config and
enforced on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, MoEFFN, parse_config, serialize_config

MAGIC = b"MXAT"
VERSION = 1


class WeightFormatError(Exception):
    """Base class for weight-file errors."""


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class TensorMismatchError(WeightFormatError):
    """Tensor set or tensor shape inconsistent with the embedded config."""


@dataclass
class ModelWeights:
    config: ModelConfig
    tensors: dict[str, np.ndarray]


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes for a config, in file order."""
    d = config.d_model
    q_out = config.n_q_heads * config.head_dim
    kv_out = config.n_kv_heads * config.head_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embedding": (config.vocab_size, d),
        "unembedding": (config.vocab_size, d),
        "final_norm": (d,),
    }
    for spec in config.layers:
        prefix = f"layers.{spec.index}"
        shapes[f"{prefix}.attn_norm"] = (d,)
        shapes[f"{prefix}.attn.q"] = (q_out, d)
        if spec.self_compute:
            shapes[f"{prefix}.attn.k"] = (kv_out, d)
            shapes[f"{prefix}.attn.v"] = (kv_out, d)
        shapes[f"{prefix}.attn.out"] = (d, q_out)
        shapes[f"{prefix}.ffn_norm"] = (d,)
        if isinstance(config.ffn, MoEFFN):
            shapes[f"{prefix}.ffn.router"] = (config.ffn.n_experts, d)
            for e in range(config.ffn.n_experts):
                shapes[f"{prefix}.ffn.experts.{e}.gate"] = (config.ffn.hidden_dim, d)
                shapes[f"{prefix}.ffn.experts.{e}.up"] = (config.ffn.hidden_dim, d)
                shapes[f"{prefix}.ffn.experts.{e}.down"] = (d, config.ffn.hidden_dim)
        else:
            shapes[f"{prefix}.ffn.gate"] = (config.ffn.hidden_dim, d)
            shapes[f"{prefix}.ffn.up"] = (config.ffn.hidden_dim, d)
            shapes[f"{prefix}.ffn.down"] = (d, config.ffn.hidden_dim)
    return shapes


def init_random(config: ModelConfig, seed: int) -> ModelWeights:
    """Seeded uniform init, scale 1/sqrt(fan_in) per tensor.

    fan_in is the trailing dimension for matrices and 1 for vectors (gains),
    so every entry lands in [-1, 1]. A single PCG64 stream drawn in canonical
    tensor order makes the result bit-identical for the same (config, seed).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        fan_in = shape[-1] if len(shape) > 1 else 1
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelWeights(config=config, tensors=tensors)


def check_tensors(config: ModelConfig, tensors: dict[str, np.ndarray]) -> None:
    """Enforce that the tensor set exactly matches the config."""
    expected = tensor_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise TensorMismatchError(f"missing tensor '{name}'")
        got = tuple(tensors[name].shape)
        if got != shape:
            raise TensorMismatchError(f"tensor '{name}' has shape {got}, config implies {shape}")
    extra = set(tensors) - set(expected)
    if extra:
        raise TensorMismatchError(f"unexpected tensor(s): {', '.join(sorted(extra))}")


def save(weights: ModelWeights, path: str) -> None:
    check_tensors(weights.config, weights.tensors)
    config_blob = serialize_config(weights.config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(config_blob)))
        fh.write(config_blob)
        # canonical order keeps save deterministic byte-for-byte
        for name in tensor_shapes(weights.config):
            arr = weights.tensors[name]
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, n: int, what: str) -> bytes:
        if self.remaining < n:
            raise TruncatedFileError(
                f"file ends inside {what}: need {n} bytes, have {self.remaining}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load(path: str) -> ModelWeights:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())

    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    config_len = reader.u64("config length")
    config_blob = reader.take(config_len, "config blob")
    config = parse_config(config_blob.decode("utf-8"))

    tensors: dict[str, np.ndarray] = {}
    while reader.remaining > 0:
        name_len = reader.u32("tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        rank = reader.u32(f"rank of '{name}'")
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank, f"dims of '{name}'"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = reader.take(4 * count, f"data of '{name}'")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)

    check_tensors(config, tensors)
    return ModelWeights(config=config, tensors=tensors)
