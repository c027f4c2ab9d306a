"""Model architecture description: per-layer attention kind, windows, KV sharing.

A model is a stack of attention layers, each either standard causal attention
or sliding-window attention, and each either computing its own KV cache
(self-compute) or reusing the cache of an earlier producer layer. The config
is the single source of truth shared between the engine, the analytic memory
model, and the external trainer; it round-trips through a JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

STANDARD = "standard"
SLIDING = "sliding"

_CONFIG_KEYS = {
    "n_layers",
    "d_model",
    "n_q_heads",
    "n_kv_heads",
    "head_dim",
    "vocab_size",
    "rope_theta",
    "window_default",
    "max_seq_len",
    "ffn",
    "layers",
}
_LAYER_KEYS = {"kind", "window", "share_from"}
_FFN_KEYS = {"type", "hidden_dim", "n_experts", "top_k"}

DEFAULT_ROPE_THETA = 10000.0
DEFAULT_WINDOW = 1024
DEFAULT_MAX_SEQ_LEN = 4096


class ConfigError(ValueError):
    """Raised for malformed config documents (syntax, unknown fields, bad types)."""


@dataclass(frozen=True)
class DenseFFN:
    hidden_dim: int

    @property
    def kind(self) -> str:
        return "dense"


@dataclass(frozen=True)
class MoEFFN:
    hidden_dim: int
    n_experts: int
    top_k: int

    @property
    def kind(self) -> str:
        return "moe"


@dataclass(frozen=True)
class LayerSpec:
    """One attention layer: 1-based index, kind, window (sliding only), KV source.

    share_from=None means the layer computes and stores its own KV
    (self-compute); share_from=p means the layer reads layer p's cache.
    """

    index: int
    kind: str
    window: int | None = None
    share_from: int | None = None

    @property
    def self_compute(self) -> bool:
        return self.share_from is None


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_q_heads: int
    n_kv_heads: int
    head_dim: int
    vocab_size: int
    ffn: DenseFFN | MoEFFN
    layers: tuple[LayerSpec, ...]
    rope_theta: float = DEFAULT_ROPE_THETA
    window_default: int = DEFAULT_WINDOW
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN

    def layer(self, index: int) -> LayerSpec:
        """Layer by 1-based index."""
        return self.layers[index - 1]


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    layer: int | None = None

    def __str__(self) -> str:
        where = f"layer {self.layer}: " if self.layer is not None else ""
        return f"{where}{self.rule}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, message: str, layer: int | None = None) -> None:
        self.violations.append(Violation(rule, message, layer))

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


@dataclass(frozen=True)
class CacheGroupSpec:
    """One runtime cache group: the producer layer plus all layers reading it."""

    group_id: int
    producer: int
    kind: str
    window: int | None
    members: tuple[int, ...]


@dataclass(frozen=True)
class CacheLayout:
    groups: tuple[CacheGroupSpec, ...]

    def group_of(self, layer_index: int) -> CacheGroupSpec:
        for g in self.groups:
            if layer_index in g.members:
                return g
        raise KeyError(f"layer {layer_index} not in any cache group")

    @property
    def n_groups(self) -> int:
        return len(self.groups)


def _require(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise ConfigError(f"missing required field '{key}' in {where}")
    val = obj[key]
    if typ is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"field '{key}' in {where} must be a number")
        return float(val)
    if not isinstance(val, typ) or isinstance(val, bool):
        raise ConfigError(f"field '{key}' in {where} must be {typ.__name__}")
    return val


def _optional(obj: dict, key: str, typ, default, where: str):
    if key not in obj:
        return default
    return _require(obj, key, typ, where)


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")


def _parse_ffn(obj) -> DenseFFN | MoEFFN:
    if not isinstance(obj, dict):
        raise ConfigError("'ffn' must be an object")
    _reject_unknown(obj, _FFN_KEYS, "ffn")
    kind = _require(obj, "type", str, "ffn")
    hidden = _require(obj, "hidden_dim", int, "ffn")
    if kind == "dense":
        if "n_experts" in obj or "top_k" in obj:
            raise ConfigError("dense ffn does not take n_experts/top_k")
        return DenseFFN(hidden_dim=hidden)
    if kind == "moe":
        return MoEFFN(
            hidden_dim=hidden,
            n_experts=_require(obj, "n_experts", int, "ffn"),
            top_k=_require(obj, "top_k", int, "ffn"),
        )
    raise ConfigError(f"unknown ffn type '{kind}' (expected 'dense' or 'moe')")


def _parse_layer(obj, index: int, window_default: int) -> LayerSpec:
    where = f"layers[{index - 1}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(obj, _LAYER_KEYS, where)
    kind = _require(obj, "kind", str, where)
    if kind not in (STANDARD, SLIDING):
        raise ConfigError(f"unknown layer kind '{kind}' in {where}")
    window = _optional(obj, "window", int, None, where)
    if kind == SLIDING and window is None:
        window = window_default
    share_from = _optional(obj, "share_from", int, None, where)
    if share_from is not None and share_from == index:
        raise ConfigError(f"{where}: self-reference (share_from == own index {index})")
    return LayerSpec(index=index, kind=kind, window=window, share_from=share_from)


def parse_config(text: str) -> ModelConfig:
    """Parse a UTF-8 JSON config document into a ModelConfig.

    Structural checks only (types, required fields, unknown fields rejected,
    self-references rejected); semantic invariants are the validator's job.
    Sliding layers without an explicit window get window_default.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _reject_unknown(doc, _CONFIG_KEYS, "config")

    window_default = _optional(doc, "window_default", int, DEFAULT_WINDOW, "config")
    raw_layers = _require(doc, "layers", list, "config")
    layers = tuple(
        _parse_layer(obj, i + 1, window_default) for i, obj in enumerate(raw_layers)
    )
    return ModelConfig(
        n_layers=_require(doc, "n_layers", int, "config"),
        d_model=_require(doc, "d_model", int, "config"),
        n_q_heads=_require(doc, "n_q_heads", int, "config"),
        n_kv_heads=_require(doc, "n_kv_heads", int, "config"),
        head_dim=_require(doc, "head_dim", int, "config"),
        vocab_size=_require(doc, "vocab_size", int, "config"),
        ffn=_parse_ffn(_require(doc, "ffn", dict, "config")),
        layers=layers,
        rope_theta=_optional(doc, "rope_theta", float, DEFAULT_ROPE_THETA, "config"),
        window_default=window_default,
        max_seq_len=_optional(doc, "max_seq_len", int, DEFAULT_MAX_SEQ_LEN, "config"),
    )


def serialize_config(config: ModelConfig) -> str:
    """Inverse of parse_config: parse_config(serialize_config(c)) == c."""
    ffn: dict = {"type": config.ffn.kind, "hidden_dim": config.ffn.hidden_dim}
    if isinstance(config.ffn, MoEFFN):
        ffn["n_experts"] = config.ffn.n_experts
        ffn["top_k"] = config.ffn.top_k
    layers = []
    for spec in config.layers:
        obj: dict = {"kind": spec.kind}
        if spec.window is not None:
            obj["window"] = spec.window
        if spec.share_from is not None:
            obj["share_from"] = spec.share_from
        layers.append(obj)
    doc = {
        "n_layers": config.n_layers,
        "d_model": config.d_model,
        "n_q_heads": config.n_q_heads,
        "n_kv_heads": config.n_kv_heads,
        "head_dim": config.head_dim,
        "vocab_size": config.vocab_size,
        "rope_theta": config.rope_theta,
        "window_default": config.window_default,
        "max_seq_len": config.max_seq_len,
        "ffn": ffn,
        "layers": layers,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_config(path: str) -> ModelConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate(config: ModelConfig) -> ValidationReport:
    """Check every structural invariant; violations are report entries, not errors."""
    report = ValidationReport()

    if config.n_layers < 1:
        report.add("bad-layer-count", f"n_layers must be >= 1, got {config.n_layers}")
    if len(config.layers) != config.n_layers:
        report.add(
            "bad-layer-count",
            f"config declares {config.n_layers} layers but lists {len(config.layers)}",
        )
    for pos, spec in enumerate(config.layers, start=1):
        if spec.index != pos:
            report.add(
                "bad-layer-index",
                f"expected consecutive index {pos}, got {spec.index}",
                layer=spec.index,
            )

    if config.n_kv_heads < 1 or config.n_q_heads < 1:
        report.add("bad-head-count", "head counts must be >= 1")
    elif config.n_q_heads % config.n_kv_heads != 0:
        report.add(
            "bad-head-divisibility",
            f"n_q_heads={config.n_q_heads} not divisible by n_kv_heads={config.n_kv_heads}",
        )
    if config.d_model != config.n_q_heads * config.head_dim:
        report.add(
            "bad-d-model",
            f"d_model={config.d_model} != n_q_heads*head_dim="
            f"{config.n_q_heads * config.head_dim}",
        )
    if config.rope_theta <= 0:
        report.add("bad-rope-theta", f"rope_theta must be > 0, got {config.rope_theta}")
    if config.vocab_size < 1:
        report.add("bad-vocab-size", f"vocab_size must be >= 1, got {config.vocab_size}")
    if config.max_seq_len < 1:
        report.add("bad-max-seq-len", f"max_seq_len must be >= 1, got {config.max_seq_len}")
    if config.ffn.hidden_dim < 1:
        report.add("bad-ffn", f"hidden_dim must be >= 1, got {config.ffn.hidden_dim}")
    if isinstance(config.ffn, MoEFFN):
        if config.ffn.top_k < 1 or config.ffn.top_k > config.ffn.n_experts:
            report.add(
                "bad-moe-top-k",
                f"top_k={config.ffn.top_k} must be in [1, n_experts={config.ffn.n_experts}]",
            )

    by_index = {spec.index: spec for spec in config.layers}
    for spec in config.layers:
        if spec.kind == SLIDING:
            if spec.window is None:
                report.add("window-missing", "sliding layer has no window", layer=spec.index)
            elif spec.window < 1:
                report.add(
                    "window-too-small", f"window must be >= 1, got {spec.window}", layer=spec.index
                )
        elif spec.window is not None:
            report.add(
                "window-on-standard",
                "window is only meaningful on sliding layers",
                layer=spec.index,
            )
        if spec.share_from is None:
            continue
        p = spec.share_from
        if p == spec.index:
            report.add("self-reference", "layer shares from itself", layer=spec.index)
            continue
        if p > spec.index:
            report.add(
                "producer-after-consumer",
                f"share_from={p} must be earlier than layer {spec.index}",
                layer=spec.index,
            )
            continue
        producer = by_index.get(p)
        if producer is None:
            report.add("producer-out-of-range", f"share_from={p} is not a layer", layer=spec.index)
            continue
        if not producer.self_compute:
            report.add(
                "producer-not-selfcompute",
                f"producer layer {p} is itself a consumer",
                layer=spec.index,
            )
        if producer.kind != spec.kind:
            report.add(
                "kind-mismatch",
                f"{spec.kind} layer shares from {producer.kind} layer {p}",
                layer=spec.index,
            )
        elif spec.kind == SLIDING and producer.window != spec.window:
            report.add(
                "window-mismatch",
                f"window {spec.window} != producer layer {p} window {producer.window}",
                layer=spec.index,
            )
    return report


def cache_groups(config: ModelConfig) -> CacheLayout:
    """Partition layers into cache groups: one group per self-compute layer.

    A group is the producer plus every layer sharing its cache (the connected
    component of the share_from relation). Requires a valid config.
    """
    report = validate(config)
    if not report.ok:
        raise ValueError(f"cannot derive cache groups from invalid config:\n{report}")

    members: dict[int, list[int]] = {}
    for spec in config.layers:
        producer = spec.index if spec.self_compute else spec.share_from
        members.setdefault(producer, []).append(spec.index)

    groups = []
    for gid, producer in enumerate(sorted(members)):
        spec = config.layer(producer)
        groups.append(
            CacheGroupSpec(
                group_id=gid,
                producer=producer,
                kind=spec.kind,
                window=spec.window,
                members=tuple(sorted(members[producer])),
            )
        )
    return CacheLayout(groups=tuple(groups))
