"""Command-line surface: validation, analysis reports, generation, eval, bench.

Reports are row-oriented; --format picks json, csv, or text emission and the
row values are identical across formats (unbounded capacities are spelled
"unbounded" everywhere).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys

from . import analysis, taskgen, weights
from .bench import DEFAULT_CEILING_BYTES, BenchRefusedError, bench_run
from .config import ConfigError, load_config, serialize_config, validate
from .engine import GenerationRequest, Greedy, Model, Temperature
from .presets import PRESET_NAMES, SCALES, preset, preset_file_name


class CliError(Exception):
    """User-facing failure: printed to stderr, exit code 1."""


def _json_cell(value):
    return "unbounded" if value is None else value


def _text_cell(value):
    """One rendering shared by csv and text so values match json's literals."""
    value = _json_cell(value)
    if isinstance(value, bool) or isinstance(value, float):
        return json.dumps(value)
    return str(value)


def _emit(meta: dict, rows: list[dict], fmt: str, out) -> None:
    if fmt == "json":
        payload = {**{k: _json_cell(v) for k, v in meta.items()}, "rows": [
            {k: _json_cell(v) for k, v in row.items()} for row in rows
        ]}
        out.write(json.dumps(payload, indent=2) + "\n")
    elif fmt == "csv":
        writer = csv.writer(out, lineterminator="\n")
        if rows:
            writer.writerow(rows[0].keys())
            for row in rows:
                writer.writerow([_text_cell(v) for v in row.values()])
    else:
        for key, value in meta.items():
            out.write(f"{key}: {_text_cell(value)}\n")
        if rows:
            keys = list(rows[0].keys())
            table = [[_text_cell(v) for v in row.values()] for row in rows]
            widths = [max(len(k), *(len(r[i]) for r in table)) for i, k in enumerate(keys)]
            out.write("  ".join(k.ljust(w) for k, w in zip(keys, widths)).rstrip() + "\n")
            for r in table:
                out.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def _open_out(args):
    if args.out:
        return open(args.out, "w", encoding="utf-8")
    return contextlib.nullcontext(sys.stdout)


def _load_validated(path: str):
    config = load_config(path)
    report = validate(config)
    if not report.ok:
        raise CliError(f"{path}: invalid config:\n{report}")
    return config


def _build_model(args) -> Model:
    if getattr(args, "weights", None):
        return Model(weights.load(args.weights))
    if not getattr(args, "config", None):
        raise CliError("need --weights FILE or --config FILE")
    config = _load_validated(args.config)
    return Model(weights.init_random(config, args.seed))


def _cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 1
    report = validate(config)
    rows = [
        {"layer": v.layer if v.layer is not None else "", "rule": v.rule, "message": v.message}
        for v in report.violations
    ]
    with _open_out(args) as out:
        _emit({"config": args.config, "ok": report.ok}, rows, args.format, out)
    return 0 if report.ok else 1


def _cmd_presets(args) -> int:
    scales = [args.scale] if args.scale else list(SCALES)
    rows = []
    for scale in scales:
        for name in PRESET_NAMES:
            config = preset(name, scale)
            layout = analysis.cache_groups(config)
            std = sum(1 for g in layout.groups if g.kind == "standard")
            rows.append(
                {
                    "name": name,
                    "scale": scale,
                    "file": preset_file_name(name, scale),
                    "n_layers": config.n_layers,
                    "window": config.window_default,
                    "cache_groups": layout.n_groups,
                    "standard_groups": std,
                }
            )
    if args.write_dir:
        os.makedirs(args.write_dir, exist_ok=True)
        for scale in scales:
            for name in PRESET_NAMES:
                path = os.path.join(args.write_dir, preset_file_name(name, scale))
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(serialize_config(preset(name, scale)))
    with _open_out(args) as out:
        _emit({"presets": len(rows)}, rows, args.format, out)
    return 0


def _cmd_footprint(args) -> int:
    config = _load_validated(args.config)
    report = analysis.kv_footprint(config, args.T, args.element_bytes)
    rows = [
        {
            "group_id": g.group_id,
            "producer": g.producer,
            "kind": g.kind,
            "window": g.window if g.window is not None else "",
            "entries": g.entries,
            "bytes": g.bytes,
        }
        for g in report.groups
    ]
    meta = {
        "config": args.config,
        "T": report.T,
        "element_bytes": report.element_bytes,
        "total_bytes": report.total_bytes,
        "steady_bytes_per_token": report.steady_bytes_per_token,
    }
    with _open_out(args) as out:
        _emit(meta, rows, args.format, out)
    return 0


def _cmd_capacity(args) -> int:
    config = _load_validated(args.config)
    report = analysis.capacity(config, args.budget_bytes, args.element_bytes, args.reserved_bytes)
    rows = [
        {
            "budget_bytes": report.budget_bytes,
            "reserved_bytes": report.reserved_bytes,
            "element_bytes": report.element_bytes,
            "steady_bytes_per_token": report.steady_bytes_per_token,
            "max_total_tokens": report.max_total_tokens,
            "warning": report.warning or "",
        }
    ]
    with _open_out(args) as out:
        _emit({"config": args.config, "note": "capacity counts cached KV tokens"}, rows, args.format, out)
    return 0


def _cmd_reach(args) -> int:
    config = _load_validated(args.config)
    report = analysis.receptive_field(config, args.T)
    rows = [
        {
            "layer": spec.index,
            "kind": spec.kind,
            "window": spec.window if spec.window is not None else "",
            "lookback": lb,
        }
        for spec, lb in zip(config.layers, report.per_layer)
    ]
    meta = {
        "config": args.config,
        "T": report.T,
        "max_lookback": report.max_lookback,
        "unbounded": report.unbounded,
    }
    with _open_out(args) as out:
        _emit(meta, rows, args.format, out)
    return 0


def _cmd_compare(args) -> int:
    named = []
    for path in args.configs:
        name = os.path.splitext(os.path.basename(path))[0]
        named.append((name, _load_validated(path)))
    rows_data = analysis.compare_layouts(
        named, args.T, args.budget_bytes, args.element_bytes, args.reserved_bytes
    )
    rows = [
        {
            "name": r.name,
            "total_bytes": r.total_bytes,
            "steady_bytes_per_token": r.steady_bytes_per_token,
            "max_total_tokens": r.max_total_tokens,
            "max_lookback": r.max_lookback,
            "unbounded_reach": r.unbounded_reach,
        }
        for r in rows_data
    ]
    meta = {"T": args.T, "budget_bytes": args.budget_bytes, "element_bytes": args.element_bytes}
    with _open_out(args) as out:
        _emit(meta, rows, args.format, out)
    return 0


def _parse_prompt(args, vocab_size: int) -> list[int]:
    if args.prompt:
        return [int(t) for t in args.prompt.replace(",", " ").split()]
    if args.prompt_len:
        import numpy as np

        rng = np.random.default_rng(args.prompt_seed)
        return [int(t) for t in rng.integers(0, vocab_size, size=args.prompt_len)]
    raise CliError("need --prompt or --prompt-len")


def _cmd_generate(args) -> int:
    model = _build_model(args)
    prompt = _parse_prompt(args, model.config.vocab_size)
    sampling = (
        Temperature(args.temperature, args.sample_seed)
        if args.temperature is not None
        else Greedy()
    )
    request = GenerationRequest(tuple(prompt), args.max_new_tokens, sampling)
    output = model.generate(request, emit_logits=args.emit_logits)
    doc = {
        "prompt_len": len(prompt),
        "tokens": output.tokens,
        "prefill_seconds": output.prefill_seconds,
        "decode_seconds_per_token": output.decode_seconds_per_token,
        "attention_flops": output.attention_flops,
        "cache_bytes": output.cache_stats.total_bytes,
    }
    if args.emit_logits:
        doc["logits"] = [[float(x) for x in row] for row in output.logits]
    with _open_out(args) as out:
        if args.format == "json":
            out.write(json.dumps(doc) + "\n")
        elif args.format == "csv":
            row = dict(doc)
            row.pop("logits", None)
            row["tokens"] = " ".join(str(t) for t in output.tokens)
            _emit({}, [row], "csv", out)
        else:
            out.write(" ".join(str(t) for t in output.tokens) + "\n")
            out.write(
                f"prefill_seconds: {output.prefill_seconds:.4f}  "
                f"decode_seconds_per_token: {output.decode_seconds_per_token:.6f}  "
                f"cache_bytes: {output.cache_stats.total_bytes}\n"
            )
    return 0


def _cmd_eval(args) -> int:
    model = _build_model(args)
    instances = taskgen.load_tasks(args.tasks)
    if args.limit:
        instances = instances[: args.limit]
    outputs = []
    for inst in instances:
        prompt = tuple(inst.context) + tuple(inst.query)
        req = GenerationRequest(prompt, max_new_tokens=len(inst.answer))
        outputs.append(model.generate(req).tokens)
    result = taskgen.score(outputs, instances)
    rows = [
        {"task_kind": kind, "accuracy": acc, "n": sum(1 for i in instances if i.task_kind == kind)}
        for kind, acc in sorted(result.accuracy_by_kind.items())
    ]
    with _open_out(args) as out:
        _emit({"tasks": args.tasks, "n_instances": len(instances), "overall": result.overall},
              rows, args.format, out)
    return 0


def _cmd_bench(args) -> int:
    rows = []
    for path in args.configs:
        config = _load_validated(path)
        name = os.path.splitext(os.path.basename(path))[0]
        report = bench_run(
            config,
            name,
            n_prompts=args.n_prompts,
            input_len=args.input_len,
            output_len=args.output_len,
            repeats=args.repeats,
            seed=args.seed,
            budget_bytes=args.budget_bytes,
            element_bytes=args.element_bytes,
            ceiling_bytes=args.ceiling_bytes,
        )
        rows.append(
            {
                "config": report.config_name,
                "n_prompts": report.n_prompts,
                "input_len": report.input_len,
                "output_len": report.output_len,
                "prefill_tokens_per_sec": report.prefill_tokens_per_sec,
                "decode_tokens_per_sec": report.decode_tokens_per_sec,
                "decode_attention_flops": report.decode_attention_flops,
                "flops_per_decoded_token": report.flops_per_decoded_token,
                "peak_cache_bytes": report.peak_cache_bytes,
                "capacity_tokens": report.capacity_tokens,
            }
        )
    meta = {"repeats": args.repeats, "seed": args.seed, "budget_bytes": args.budget_bytes}
    with _open_out(args) as out:
        _emit(meta, rows, args.format, out)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=["json", "csv", "text"], default="text")
    parser.add_argument("--out", help="write the report to this path instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixkv",
        description="Inference engine and cache analytics for mixed attention layouts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file against all layout rules")
    p.add_argument("config")
    _add_common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("presets", help="list shipped presets; optionally write their files")
    p.add_argument("--scale", choices=list(SCALES))
    p.add_argument("--write-dir", help="write preset config files into this directory")
    _add_common(p)
    p.set_defaults(func=_cmd_presets)

    p = sub.add_parser("footprint", help="exact KV cache bytes at a sequence length")
    p.add_argument("config")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--element-bytes", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=_cmd_footprint)

    p = sub.add_parser("capacity", help="max cached tokens under a byte budget")
    p.add_argument("config")
    p.add_argument("--budget-bytes", type=int, required=True)
    p.add_argument("--element-bytes", type=int, default=2)
    p.add_argument("--reserved-bytes", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_capacity)

    p = sub.add_parser("reach", help="per-layer attention lookback analysis")
    p.add_argument("config")
    p.add_argument("--T", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_reach)

    p = sub.add_parser("compare", help="side-by-side memory/capacity/reach table")
    p.add_argument("configs", nargs="+")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--budget-bytes", type=int, default=16 << 30)
    p.add_argument("--element-bytes", type=int, default=2)
    p.add_argument("--reserved-bytes", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("generate", help="run generation with a config or weight file")
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--seed", type=int, default=0, help="weight init seed when using --config")
    p.add_argument("--prompt", help="token ids, space or comma separated")
    p.add_argument("--prompt-len", type=int)
    p.add_argument("--prompt-seed", type=int, default=0)
    p.add_argument("--max-new-tokens", type=int, default=16)
    p.add_argument("--temperature", type=float)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--emit-logits", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="exact-match scoring of a model over a task file")
    p.add_argument("tasks", help="line-delimited JSON task file")
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="throughput/FLOP/memory benchmark across configs")
    p.add_argument("configs", nargs="+")
    p.add_argument("--n-prompts", type=int, default=8)
    p.add_argument("--input-len", type=int, default=4096)
    p.add_argument("--output-len", type=int, default=128)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-bytes", type=int, default=16 << 30)
    p.add_argument("--element-bytes", type=int, default=2)
    p.add_argument("--ceiling-bytes", type=int, default=DEFAULT_CEILING_BYTES)
    _add_common(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, BenchRefusedError, weights.WeightFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
