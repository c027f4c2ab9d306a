"""Synthetic long-context retrieval tasks over a small token-id vocabulary.

Tasks are built directly in token ids (no text, no tokenizer). The id space
is split into disjoint regions so scanning for a key or variable can never
collide with filler, which keeps exact-match scoring unambiguous:

    markers   query/assign/end control tokens
    filler    background tokens the model must ignore
    keys      retrieval keys (needle tasks)
    values    retrieval payloads
    vars      variable names (tracking tasks)

Generators are pure functions of their parameters and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAD = 0
QUERY_KEY = 1  # asks: what value was stored under the key that follows?
QUERY_VALUE = 2  # asks: which variables ended up holding the value that follows?
ASSIGN = 3
END = 4

FILLER = range(16, 116)
KEYS = range(116, 156)
VALUES = range(156, 206)
VARS = range(206, 246)

VOCAB_NEEDED = 246  # generators require vocab_size >= this

NIAH_SINGLE = "niah_single"
NIAH_MULTI = "niah_multi"
VT = "vt"

_NEEDLE_LEN = 2  # a needle is the pair (key, value)


@dataclass(frozen=True)
class TaskInstance:
    task_kind: str
    context: tuple[int, ...]
    query: tuple[int, ...]
    answer: tuple[int, ...]
    needle_depths: tuple[float, ...] = ()
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalResult:
    matches: tuple[bool, ...]
    accuracy_by_kind: dict[str, float]
    overall: float


def gen_niah(length: int, n_needles: int, depths: tuple[float, ...], seed: int) -> TaskInstance:
    """Hide key-value needles in filler; query one key, answer is its value.

    Each needle lands at floor(depth * (length - needle_len)). Keys and values
    are drawn without replacement so every key names exactly one value.
    """
    if n_needles < 1:
        raise ValueError("need at least one needle")
    if len(depths) != n_needles:
        raise ValueError(f"got {len(depths)} depths for {n_needles} needles")
    if list(depths) != sorted(set(depths)) or min(depths) < 0 or max(depths) > 1:
        raise ValueError("depths must be strictly increasing within [0, 1]")
    if length < n_needles * _NEEDLE_LEN:
        raise ValueError(f"length {length} too small for {n_needles} needles")

    starts = [int(d * (length - _NEEDLE_LEN)) for d in depths]
    for a, b in zip(starts, starts[1:]):
        if b - a < _NEEDLE_LEN:
            raise ValueError("depths place needles on top of each other")

    rng = np.random.default_rng(seed)
    context = rng.choice(np.arange(FILLER.start, FILLER.stop), size=length).astype(int)
    keys = rng.choice(np.arange(KEYS.start, KEYS.stop), size=n_needles, replace=False)
    values = rng.choice(np.arange(VALUES.start, VALUES.stop), size=n_needles, replace=False)
    for start, key, value in zip(starts, keys, values):
        context[start] = key
        context[start + 1] = value

    target = int(rng.integers(n_needles))
    return TaskInstance(
        task_kind=NIAH_SINGLE if n_needles == 1 else NIAH_MULTI,
        context=tuple(int(t) for t in context),
        query=(QUERY_KEY, int(keys[target])),
        answer=(int(values[target]),),
        needle_depths=tuple(depths),
        params={"n_needles": n_needles, "length": length, "seed": seed},
    )


def gen_vt(n_chains: int, chain_len: int, length: int, seed: int) -> TaskInstance:
    """Chains of variable assignments buried in filler.

    Chain c starts with `var = value` and continues with `var_j = var_{j-1}`;
    statements keep chain order but chains are interleaved at seeded points.
    The query names one chain's value; the answer is that chain's variables
    in first-assignment order.
    """
    if n_chains < 1 or chain_len < 1:
        raise ValueError("need at least one chain of at least one assignment")
    n_stmts = n_chains * chain_len
    stmt_tokens = 3 * n_stmts
    if length < stmt_tokens:
        raise ValueError(f"length {length} cannot hold {n_stmts} assignments")
    if n_chains * chain_len > len(VARS):
        raise ValueError("not enough variable names for that many chains")

    rng = np.random.default_rng(seed)
    all_vars = rng.choice(np.arange(VARS.start, VARS.stop), size=n_stmts, replace=False)
    chain_vars = [all_vars[c * chain_len : (c + 1) * chain_len] for c in range(n_chains)]
    chain_values = rng.choice(np.arange(VALUES.start, VALUES.stop), size=n_chains, replace=False)

    statements: list[list[list[int]]] = []
    for c in range(n_chains):
        chain = [[int(chain_vars[c][0]), ASSIGN, int(chain_values[c])]]
        for j in range(1, chain_len):
            chain.append([int(chain_vars[c][j]), ASSIGN, int(chain_vars[c][j - 1])])
        statements.append(chain)

    # random interleave that preserves each chain's internal order
    remaining = [chain_len] * n_chains
    order: list[list[int]] = []
    while any(remaining):
        live = [c for c in range(n_chains) if remaining[c]]
        c = live[int(rng.integers(len(live)))]
        order.append(statements[c][chain_len - remaining[c]])
        remaining[c] -= 1

    filler_len = length - stmt_tokens
    filler = rng.choice(np.arange(FILLER.start, FILLER.stop), size=filler_len).astype(int)
    cuts = np.sort(rng.integers(0, filler_len + 1, size=n_stmts))
    context: list[int] = []
    prev = 0
    for stmt, cut in zip(order, cuts):
        context.extend(int(t) for t in filler[prev:cut])
        context.extend(stmt)
        prev = cut
    context.extend(int(t) for t in filler[prev:])

    target = int(rng.integers(n_chains))
    return TaskInstance(
        task_kind=VT,
        context=tuple(context),
        query=(QUERY_VALUE, int(chain_values[target])),
        answer=tuple(int(v) for v in chain_vars[target]),
        params={
            "n_chains": n_chains,
            "chain_len": chain_len,
            "length": length,
            "seed": seed,
        },
    )


def scan_answer(instance: TaskInstance) -> tuple[int, ...]:
    """Recover the answer by scanning the context; generator self-consistency oracle."""
    if instance.task_kind in (NIAH_SINGLE, NIAH_MULTI):
        key = instance.query[1]
        ctx = instance.context
        for i, tok in enumerate(ctx):
            if tok == key:
                return (ctx[i + 1],)
        raise ValueError("queried key not present in context")
    if instance.task_kind == VT:
        value = instance.query[1]
        ctx = instance.context
        holders: list[int] = []
        for i in range(len(ctx) - 2):
            if ctx[i + 1] != ASSIGN:
                continue
            lhs, rhs = ctx[i], ctx[i + 2]
            if rhs == value or rhs in holders:
                holders.append(lhs)
        return tuple(holders)
    raise ValueError(f"unknown task kind {instance.task_kind!r}")


def trim_output(tokens: list[int] | tuple[int, ...]) -> tuple[int, ...]:
    """Strip trailing padding and end markers before exact-match comparison."""
    out = list(tokens)
    while out and out[-1] in (PAD, END):
        out.pop()
    return tuple(out)


def score(outputs: list[list[int]], instances: list[TaskInstance]) -> EvalResult:
    if len(outputs) != len(instances):
        raise ValueError(f"{len(outputs)} outputs for {len(instances)} instances")
    matches = tuple(
        trim_output(out) == inst.answer for out, inst in zip(outputs, instances)
    )
    by_kind: dict[str, list[bool]] = {}
    for inst, ok in zip(instances, matches):
        by_kind.setdefault(inst.task_kind, []).append(ok)
    accuracy = {kind: sum(oks) / len(oks) for kind, oks in by_kind.items()}
    overall = sum(matches) / len(matches) if matches else 0.0
    return EvalResult(matches=matches, accuracy_by_kind=accuracy, overall=overall)


def instance_to_json(instance: TaskInstance) -> str:
    doc = {
        "task_kind": instance.task_kind,
        "context": list(instance.context),
        "query": list(instance.query),
        "answer": list(instance.answer),
        "needle_depths": list(instance.needle_depths),
        "params": instance.params,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def instance_from_json(line: str) -> TaskInstance:
    doc = json.loads(line)
    return TaskInstance(
        task_kind=doc["task_kind"],
        context=tuple(doc["context"]),
        query=tuple(doc["query"]),
        answer=tuple(doc["answer"]),
        needle_depths=tuple(doc["needle_depths"]),
        params=doc.get("params", {}),
    )


def save_tasks(instances: list[TaskInstance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def load_tasks(path: str) -> list[TaskInstance]:
    with open(path, encoding="utf-8") as fh:
        return [instance_from_json(line) for line in fh if line.strip()]
