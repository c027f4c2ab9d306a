"""Named attention-layout presets at two scales.

Layouts are written in a compact per-layer notation, one token per layer:

    S    standard attention, own KV cache
    S7   standard attention, reads layer 7's cache
    w    sliding-window attention, own ring cache
    w3   sliding-window attention, reads layer 3's ring cache

The full-scale variants place a small number of standard-attention caches
among sliding layers whose caches are shared in short consecutive runs of
two to three layers; the toy scale keeps each variant's distinguishing
structure (early vs deep producers, pair placement, amount of sliding
sharing) at 8 layers so the whole stack can be executed quickly.
"""

from __future__ import annotations

from .config import (
    SLIDING,
    STANDARD,
    DenseFFN,
    LayerSpec,
    ModelConfig,
    MoEFFN,
)

PAPER24 = "paper24"
TOY8 = "toy8"
SCALES = (PAPER24, TOY8)

# Layer-count, head, and width parameters per scale. The full scale uses the
# 12-query-head / 3-KV-head grouped-query shape with a 1024-token window; the
# toy scale shrinks everything and uses a window of 8 so sliding effects show
# up in sequences of a few dozen tokens.
_SCALE_DIMS = {
    PAPER24: dict(
        n_layers=24,
        d_model=768,
        n_q_heads=12,
        n_kv_heads=3,
        head_dim=64,
        vocab_size=32768,
        rope_theta=8_000_000.0,
        window_default=1024,
        max_seq_len=32768,
        ffn=MoEFFN(hidden_dim=3072, n_experts=8, top_k=2),
    ),
    TOY8: dict(
        n_layers=8,
        d_model=64,
        n_q_heads=4,
        n_kv_heads=2,
        head_dim=16,
        vocab_size=256,
        rope_theta=10_000.0,
        window_default=8,
        max_seq_len=8192,
        ffn=MoEFFN(hidden_dim=128, n_experts=4, top_k=2),
    ),
}

# fmt: off
_LAYOUTS: dict[str, dict[str, str]] = {
    # All layers standard attention, no sharing: the upper baseline.
    "standard": {
        PAPER24: "S " * 24,
        TOY8: "S " * 8,
    },
    # All layers sliding-window attention, no sharing: the lower baseline.
    "pure-sliding": {
        PAPER24: "w " * 24,
        TOY8: "w " * 8,
    },
    # Single standard cache produced at layer 1; deeper standard layers reuse it.
    "MA": {
        PAPER24: "S w w2 w2 w w5 w5 S1 w w9 w9 w w12 w w14 S1 w w17 w17 w w20 w w22 S1",
        TOY8: "S w w2 S1 w w5 w5 S1",
    },
    # Same as MA except the final layer is sliding instead of standard.
    "MA-EndSlide": {
        PAPER24: "S w w2 w2 w w5 w5 S1 w w9 w9 w w12 w w14 S1 w w17 w17 w w20 w w22 w",
        TOY8: "S w w2 S1 w w5 w5 w",
    },
    # Like MA but the first standard layer is pushed deeper into the stack.
    "MA-Offset": {
        PAPER24: "w w1 w1 w w4 w4 S w w8 w8 w w11 S7 w w14 w14 w w17 S7 w w20 w w22 S7",
        TOY8: "w w1 S w w4 S3 w w7",
    },
    # Two standard caches, one early and one mid-stack, each reused once.
    "MA-Pairs": {
        PAPER24: "S w w2 w w4 w4 S1 w w8 w8 w w11 S w w14 w14 w w17 S13 w w20 w20 w w23",
        TOY8: "S w w2 S1 S w w6 S5",
    },
    # MA-Offset with much longer sliding-cache sharing runs.
    "MA-Offset-SlideShare": {
        PAPER24: "w w1 w1 w1 w1 w1 S w w8 w8 w8 w8 S7 w w14 w14 w14 w14 S7 w w20 w20 w20 S7",
        TOY8: "w w1 S w w4 S3 w4 w4",
    },
    # MA-Pairs with much longer sliding-cache sharing runs.
    "MA-Pairs-SlideShare": {
        PAPER24: "S w w2 w2 w2 w2 S1 w w8 w8 w8 w8 S w w14 w14 w14 w14 S13 w w20 w20 w20 w20",
        TOY8: "S w w2 S1 S w2 w2 S5",
    },
    # Standard caches shared between adjacent layer pairs; variants move the
    # pairs around and change the distance between them.
    "MA-Successive-1": {
        PAPER24: "S S1 w w3 w3 w w6 w w8 w8 w w11 S S13 w w15 w15 w w18 w w20 w20 w w23",
        TOY8: "S S1 w w3 S S5 w w7",
    },
    "MA-Successive-2": {
        PAPER24: "w w1 w1 w w4 w4 S S7 w w9 w9 w w12 w w14 w14 w w17 S S19 w w21 w w23",
        TOY8: "w w1 S S3 w w5 S S7",
    },
    "MA-Successive-3": {
        PAPER24: "S S1 w w3 w3 w w6 w w8 w8 w w11 w w13 w13 w w16 w w18 w18 w w21 S S23",
        TOY8: "S S1 w w3 w w5 S S7",
    },
    "MA-Successive-4": {
        PAPER24: "w w1 w1 w w4 w w6 w6 w w9 S S11 S S13 w w15 w15 w w18 w w20 w20 w w23",
        TOY8: "w w1 S S3 S S5 w w7",
    },
    # Standard layers that keep their own caches (no standard sharing at all);
    # variants differ in where and how many.
    "MA-NoShare-1": {
        PAPER24: "S w w2 w2 w w5 w w7 w7 w w10 w w12 w12 w w15 w w17 w17 w w20 w w22 w22",
        TOY8: "S w w2 w w4 w4 w w7",
    },
    "MA-NoShare-2": {
        PAPER24: "w w1 w1 w w4 w w6 w6 w w9 w w11 S w w14 w14 w w17 w w19 w19 w w22 w22",
        TOY8: "w w1 w w3 S w w6 w6",
    },
    "MA-NoShare-3": {
        PAPER24: "S w w2 w2 w w5 w w7 w7 w w10 w10 S w w14 w14 w w17 w w19 w19 w w22 w22",
        TOY8: "S w w2 w2 S w w6 w6",
    },
}
# fmt: on

PRESET_NAMES = tuple(_LAYOUTS)


def _parse_layout(layout: str, window: int) -> tuple[LayerSpec, ...]:
    specs = []
    for i, token in enumerate(layout.split(), start=1):
        kind = STANDARD if token[0] == "S" else SLIDING
        share = int(token[1:]) if len(token) > 1 else None
        specs.append(
            LayerSpec(
                index=i,
                kind=kind,
                window=window if kind == SLIDING else None,
                share_from=share,
            )
        )
    return tuple(specs)


def preset(name: str, scale: str = TOY8) -> ModelConfig:
    """Build the named preset config at the given scale ('paper24' or 'toy8')."""
    key = _canonical_name(name)
    scale = scale.lower()
    if scale not in _SCALE_DIMS:
        raise KeyError(f"unknown scale '{scale}' (expected one of {SCALES})")
    dims = dict(_SCALE_DIMS[scale])
    layers = _parse_layout(_LAYOUTS[key][scale], dims["window_default"])
    return ModelConfig(layers=layers, **dims)


def _canonical_name(name: str) -> str:
    for key in _LAYOUTS:
        if key.lower() == name.lower():
            return key
    raise KeyError(f"unknown preset '{name}' (expected one of {', '.join(_LAYOUTS)})")


def preset_file_name(name: str, scale: str) -> str:
    """File name a preset is shipped under in the presets/ directory."""
    base = _canonical_name(name).lower()
    return f"{base}.json" if scale.lower() == PAPER24 else f"{base}-{scale.lower()}.json"
