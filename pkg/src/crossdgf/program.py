"""Synthetic client/library programs and their deterministic interpreter.

A program is a set of functions, each owned by either the client or the
library. Functions are lists of basic blocks; a block runs its calls in order,
then follows an unconditional or guarded branch. Guards are predicates over
the raw input bytes, so the interpreter is a total function of the input.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from itertools import chain
from typing import Callable, Iterable, Optional, Union

from .errors import ParseError, ValidationError

CLIENT = "client"
LIBRARY = "library"
OWNERS = (CLIENT, LIBRARY)
RETURN = "return"

MAX_CALL_DEPTH = 64
DEFAULT_STEP_BUDGET = 100_000


# -- guards -----------------------------------------------------------------


@dataclass(frozen=True)
class ByteEq:
    offset: int
    value: int

    def evaluate(self, data: bytes) -> bool:
        return self.offset < len(data) and data[self.offset] == self.value


@dataclass(frozen=True)
class ByteGe:
    offset: int
    value: int

    def evaluate(self, data: bytes) -> bool:
        return self.offset < len(data) and data[self.offset] >= self.value


@dataclass(frozen=True)
class ByteLe:
    offset: int
    value: int

    def evaluate(self, data: bytes) -> bool:
        return self.offset < len(data) and data[self.offset] <= self.value


@dataclass(frozen=True)
class U16Eq:
    """Little-endian 16-bit comparison at ``offset``."""

    offset: int
    value: int

    def evaluate(self, data: bytes) -> bool:
        o = self.offset
        return o + 1 < len(data) and (data[o] | (data[o + 1] << 8)) == self.value


@dataclass(frozen=True)
class LenGe:
    n: int

    def evaluate(self, data: bytes) -> bool:
        return len(data) >= self.n


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"

    def evaluate(self, data: bytes) -> bool:
        return self.left.evaluate(data) and self.right.evaluate(data)


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"

    def evaluate(self, data: bytes) -> bool:
        return self.left.evaluate(data) or self.right.evaluate(data)


@dataclass(frozen=True)
class Not:
    inner: "Guard"

    def evaluate(self, data: bytes) -> bool:
        return not self.inner.evaluate(data)


Guard = Union[ByteEq, ByteGe, ByteLe, U16Eq, LenGe, And, Or, Not]

_BINARY_LEAVES = {"byte_eq": ByteEq, "byte_ge": ByteGe, "byte_le": ByteLe, "u16_eq": U16Eq}


def guard_to_json(g: Guard):
    if isinstance(g, (ByteEq, ByteGe, ByteLe, U16Eq)):
        name = {ByteEq: "byte_eq", ByteGe: "byte_ge", ByteLe: "byte_le", U16Eq: "u16_eq"}[type(g)]
        return {name: [g.offset, g.value]}
    if isinstance(g, LenGe):
        return {"len_ge": [g.n]}
    if isinstance(g, And):
        return {"and": [guard_to_json(g.left), guard_to_json(g.right)]}
    if isinstance(g, Or):
        return {"or": [guard_to_json(g.left), guard_to_json(g.right)]}
    if isinstance(g, Not):
        return {"not": [guard_to_json(g.inner)]}
    raise TypeError(f"not a guard: {g!r}")


def _int_arg(value, path, lo, hi):
    if isinstance(value, bool) or not isinstance(value, int) or not lo <= value <= hi:
        raise ParseError(f"expected integer in [{lo}, {hi}], got {value!r}", field=path)
    return value


def guard_from_json(obj, path="guard") -> Guard:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ParseError("guard must be an object with exactly one constructor key", field=path)
    (name, args), = obj.items()
    sub = f"{path}.{name}"
    if name in _BINARY_LEAVES:
        if not isinstance(args, list) or len(args) != 2:
            raise ParseError(f"{name} takes [offset, value]", field=sub)
        offset = _int_arg(args[0], sub, 0, 1 << 30)
        value = _int_arg(args[1], sub, 0, 0xFFFF if name == "u16_eq" else 0xFF)
        return _BINARY_LEAVES[name](offset, value)
    if name == "len_ge":
        if isinstance(args, int) and not isinstance(args, bool):
            args = [args]
        if not isinstance(args, list) or len(args) != 1:
            raise ParseError("len_ge takes [n]", field=sub)
        return LenGe(_int_arg(args[0], sub, 0, 1 << 30))
    if name in ("and", "or"):
        if not isinstance(args, list) or len(args) != 2:
            raise ParseError(f"{name} takes two guards", field=sub)
        cls = And if name == "and" else Or
        return cls(guard_from_json(args[0], sub + "[0]"), guard_from_json(args[1], sub + "[1]"))
    if name == "not":
        if isinstance(args, list):
            if len(args) != 1:
                raise ParseError("not takes one guard", field=sub)
            args = args[0]
        return Not(guard_from_json(args, sub))
    raise ParseError(f"unknown guard constructor {name!r}", field=path)


def compile_guard(g: Guard) -> Callable[[bytes], bool]:
    """Turn a guard tree into a closure; the hot path of the interpreter."""
    if isinstance(g, ByteEq):
        o, v = g.offset, g.value
        return lambda d: o < len(d) and d[o] == v
    if isinstance(g, ByteGe):
        o, v = g.offset, g.value
        return lambda d: o < len(d) and d[o] >= v
    if isinstance(g, ByteLe):
        o, v = g.offset, g.value
        return lambda d: o < len(d) and d[o] <= v
    if isinstance(g, U16Eq):
        o, v = g.offset, g.value
        return lambda d: o + 1 < len(d) and (d[o] | (d[o + 1] << 8)) == v
    if isinstance(g, LenGe):
        n = g.n
        return lambda d: len(d) >= n
    if isinstance(g, And):
        a, b = compile_guard(g.left), compile_guard(g.right)
        return lambda d: a(d) and b(d)
    if isinstance(g, Or):
        a, b = compile_guard(g.left), compile_guard(g.right)
        return lambda d: a(d) or b(d)
    if isinstance(g, Not):
        a = compile_guard(g.inner)
        return lambda d: not a(d)
    raise TypeError(f"not a guard: {g!r}")


# -- program structure ------------------------------------------------------


@dataclass(frozen=True)
class Uncond:
    target: str  # block id or RETURN


@dataclass(frozen=True)
class Cond:
    guard: Guard
    then: str
    orelse: str


Branch = Union[Uncond, Cond]


@dataclass(frozen=True)
class TriggerSpec:
    cve_id: str
    condition: Guard


@dataclass(frozen=True)
class BasicBlockDef:
    id: str
    calls: tuple = ()
    branch: Branch = Uncond(RETURN)
    trigger: Optional[TriggerSpec] = None

    def successors(self) -> tuple:
        if isinstance(self.branch, Uncond):
            targets = (self.branch.target,)
        else:
            targets = (self.branch.then, self.branch.orelse)
        return tuple(dict.fromkeys(t for t in targets if t != RETURN))


@dataclass(frozen=True)
class FunctionDef:
    name: str
    owner: str
    blocks: tuple

    @property
    def fbb(self) -> BasicBlockDef:
        return self.blocks[0]

    def block(self, block_id: str) -> BasicBlockDef:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(block_id)


def block_key(function: str, block_id: str) -> str:
    return f"{function}.{block_id}"


@dataclass(frozen=True)
class MicroProgram:
    name: str
    entry: str
    functions: tuple

    def __post_init__(self):
        validate_program(self)

    @cached_property
    def by_name(self) -> dict:
        return {f.name: f for f in self.functions}

    def function(self, name: str) -> FunctionDef:
        return self.by_name[name]

    def owner(self, name: str) -> str:
        return self.by_name[name].owner

    def fbb_key(self, name: str) -> str:
        return block_key(name, self.by_name[name].fbb.id)

    def call_graph(self) -> dict:
        """Function name -> set of callees, over every block."""
        return {f.name: {c for b in f.blocks for c in b.calls} for f in self.functions}

    def functions_of(self, owner: str) -> list:
        return [f.name for f in self.functions if f.owner == owner]

    @cached_property
    def block_keys(self) -> list:
        return [block_key(f.name, b.id) for f in self.functions for b in f.blocks]

    @cached_property
    def block_owner(self) -> dict:
        return {block_key(f.name, b.id): f.owner for f in self.functions for b in f.blocks}

    @cached_property
    def compiled(self) -> "_Compiled":
        return _Compiled(self)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "entry": self.entry,
            "functions": [
                {
                    "name": f.name,
                    "owner": f.owner,
                    "blocks": [_block_to_json(b) for b in f.blocks],
                }
                for f in self.functions
            ],
        }


def _block_to_json(b: BasicBlockDef) -> dict:
    out = {"id": b.id, "calls": list(b.calls)}
    if isinstance(b.branch, Uncond):
        out["branch"] = {"uncond": b.branch.target}
    else:
        out["branch"] = {
            "cond": {"guard": guard_to_json(b.branch.guard), "then": b.branch.then, "else": b.branch.orelse}
        }
    if b.trigger is not None:
        out["trigger"] = {"cve": b.trigger.cve_id, "condition": guard_to_json(b.trigger.condition)}
    return out


def validate_program(p: MicroProgram) -> None:
    if not p.functions:
        raise ValidationError("program has no functions")
    names = [f.name for f in p.functions]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ValidationError(f"duplicate function {sorted(dup)[0]}")
    by_name = {f.name: f for f in p.functions}
    if p.entry not in by_name:
        raise ValidationError(f"unknown entry function {p.entry}")
    if by_name[p.entry].owner != CLIENT:
        raise ValidationError(f"entry function {p.entry} must be client-owned")
    for f in p.functions:
        if f.owner not in OWNERS:
            raise ValidationError(f"function {f.name} has invalid owner {f.owner!r}")
        if not f.blocks:
            raise ValidationError(f"function {f.name} has no blocks")
        ids = [b.id for b in f.blocks]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate block id in function {f.name}")
        idset = set(ids)
        for b in f.blocks:
            for callee in b.calls:
                if callee not in by_name:
                    raise ValidationError(f"unknown function {callee} called from {f.name}.{b.id}")
            refs = (b.branch.target,) if isinstance(b.branch, Uncond) else (b.branch.then, b.branch.orelse)
            for r in refs:
                if r != RETURN and r not in idset:
                    raise ValidationError(f"unknown block {r} referenced from {f.name}.{b.id}")
            if b.trigger is not None and f.owner != LIBRARY:
                raise ValidationError(f"trigger on client-owned block {f.name}.{b.id}")


# -- loading ----------------------------------------------------------------


def _check_keys(obj, allowed, required, path):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", field=path)
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ParseError(f"unknown field {sorted(unknown)[0]!r}", field=path)
    for k in required:
        if k not in obj:
            raise ParseError(f"missing field {k!r}", field=path)


def _str(value, path):
    if not isinstance(value, str) or not value:
        raise ParseError("expected a non-empty string", field=path)
    return value


def _parse_block(obj, path) -> BasicBlockDef:
    _check_keys(obj, ("id", "calls", "branch", "trigger"), ("id", "branch"), path)
    calls = obj.get("calls", [])
    if not isinstance(calls, list):
        raise ParseError("calls must be a list", field=path + ".calls")
    calls = tuple(_str(c, f"{path}.calls[{i}]") for i, c in enumerate(calls))
    br = obj["branch"]
    bpath = path + ".branch"
    if not isinstance(br, dict) or len(br) != 1:
        raise ParseError("branch must have exactly one of 'uncond' or 'cond'", field=bpath)
    if "uncond" in br:
        branch = Uncond(_str(br["uncond"], bpath + ".uncond"))
    elif "cond" in br:
        c = br["cond"]
        _check_keys(c, ("guard", "then", "else"), ("guard", "then", "else"), bpath + ".cond")
        branch = Cond(
            guard_from_json(c["guard"], bpath + ".cond.guard"),
            _str(c["then"], bpath + ".cond.then"),
            _str(c["else"], bpath + ".cond.else"),
        )
    else:
        raise ParseError("branch must have exactly one of 'uncond' or 'cond'", field=bpath)
    trigger = None
    if obj.get("trigger") is not None:
        t = obj["trigger"]
        tpath = path + ".trigger"
        _check_keys(t, ("cve", "condition"), ("cve", "condition"), tpath)
        trigger = TriggerSpec(_str(t["cve"], tpath + ".cve"), guard_from_json(t["condition"], tpath + ".condition"))
    return BasicBlockDef(_str(obj["id"], path + ".id"), calls, branch, trigger)


def program_from_json(doc) -> MicroProgram:
    _check_keys(doc, ("name", "entry", "functions"), ("name", "entry", "functions"), "$")
    funcs = doc["functions"]
    if not isinstance(funcs, list):
        raise ParseError("functions must be a list", field="functions")
    parsed = []
    for i, f in enumerate(funcs):
        path = f"functions[{i}]"
        _check_keys(f, ("name", "owner", "blocks"), ("name", "owner", "blocks"), path)
        if f["owner"] not in OWNERS:
            raise ParseError(f"owner must be one of {OWNERS}", field=path + ".owner")
        if not isinstance(f["blocks"], list):
            raise ParseError("blocks must be a list", field=path + ".blocks")
        blocks = tuple(_parse_block(b, f"{path}.blocks[{j}]") for j, b in enumerate(f["blocks"]))
        parsed.append(FunctionDef(_str(f["name"], path + ".name"), f["owner"], blocks))
    return MicroProgram(_str(doc["name"], "name"), _str(doc["entry"], "entry"), tuple(parsed))


def load_program(text: str) -> MicroProgram:
    """Parse and validate a JSON program document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return program_from_json(doc)


# -- interpreter ------------------------------------------------------------


def bucket_hits(count: int) -> int:
    """Classic logarithmic hit-count bucket (0..7)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count <= 3:
        return count - 1
    if count <= 7:
        return 3
    if count <= 15:
        return 4
    if count <= 31:
        return 5
    if count <= 127:
        return 6
    return 7


@dataclass
class ExecutionTrace:
    steps: list  # (function, block id) in execution order
    hit_counts: dict  # block key -> executions
    client_path: list  # distinct client block keys, first-occurrence order
    library_path: list
    triggers_fired: list
    terminated: str  # "returned" | "step_budget_exhausted"
    edge_hits: dict = field(default_factory=dict, repr=False)  # (key, key) -> count

    def coverage_pairs(self) -> frozenset:
        return frozenset((e, bucket_hits(n)) for e, n in self.edge_hits.items())

    def path_digest(self) -> int:
        return hash(self.coverage_pairs())


class _Compiled:
    """Integer-indexed form of a program used by ``execute``."""

    def __init__(self, p: MicroProgram):
        self.keys = []
        self.names = []
        self.owner_is_client = []
        index = {}
        for f in p.functions:
            for b in f.blocks:
                index[(f.name, b.id)] = len(self.keys)
                self.keys.append(block_key(f.name, b.id))
                self.names.append((f.name, b.id))
                self.owner_is_client.append(f.owner == CLIENT)
        self.entry_of = {f.name: index[(f.name, f.fbb.id)] for f in p.functions}
        self.blocks = []
        for f in p.functions:
            for b in f.blocks:
                calls = tuple(self.entry_of[c] for c in b.calls)
                if isinstance(b.branch, Uncond):
                    nxt = -1 if b.branch.target == RETURN else index[(f.name, b.branch.target)]
                    br = (None, nxt, nxt)
                else:
                    t = -1 if b.branch.then == RETURN else index[(f.name, b.branch.then)]
                    e = -1 if b.branch.orelse == RETURN else index[(f.name, b.branch.orelse)]
                    br = (compile_guard(b.branch.guard), t, e)
                trig = None
                if b.trigger is not None:
                    trig = (b.trigger.cve_id, compile_guard(b.trigger.condition))
                self.blocks.append((calls, br[0], br[1], br[2], trig))
        self.entry = self.entry_of[p.entry]

    def run(self, data: bytes, step_budget: int, max_depth: int):
        """Execute from the entry block; returns (block indices, fired cves, termination)."""
        blocks = self.blocks
        steps = []
        append = steps.append
        fired = []
        frames = []  # (caller block, index of its next call, caller's first-visit map)
        seen = {}  # block -> step index of its first run in the current activation
        cur = self.entry
        n = 0
        while True:
            if cur >= 0:
                first = seen.get(cur)
                if first is not None:
                    # guards only read the input, so the same block under the same call
                    # stack repeats steps[first:] forever
                    cycle = steps[first:]
                    reps, rem = divmod(step_budget - n, len(cycle))
                    steps.extend(cycle * reps)
                    steps.extend(cycle[:rem])
                    return steps, fired, "step_budget_exhausted"
                if n >= step_budget:
                    return steps, fired, "step_budget_exhausted"
                seen[cur] = n
                append(cur)
                n += 1
                calls = blocks[cur][0]
                if calls:
                    if len(frames) + 1 >= max_depth:
                        return steps, fired, "step_budget_exhausted"
                    frames.append((cur, 1, seen))
                    seen = {}
                    cur = calls[0]
                    continue
                blk = cur
            else:
                # callee returned: resume the caller's remaining calls, then its branch
                if not frames:
                    return steps, fired, "returned"
                blk, pos, seen = frames.pop()
                calls = blocks[blk][0]
                if pos < len(calls):
                    frames.append((blk, pos + 1, seen))
                    seen = {}
                    cur = calls[pos]
                    continue
            _, guard, then, orelse, trig = blocks[blk]
            if trig is not None and trig[0] not in fired and trig[1](data):
                fired.append(trig[0])
            cur = then if guard is None or guard(data) else orelse


def execute(
    program: MicroProgram,
    data: bytes,
    step_budget: int = DEFAULT_STEP_BUDGET,
    max_depth: int = MAX_CALL_DEPTH,
) -> ExecutionTrace:
    """Run ``program`` on ``data`` and summarize the execution."""
    if step_budget < 1:
        raise ValueError("step_budget must be >= 1")
    c = program.compiled
    raw, fired, terminated = c.run(bytes(data), step_budget, max_depth)
    return _summarize(c, raw, fired, terminated)


def edge_counts(raw: list) -> Counter:
    """(previous block, block) -> count, with -1 standing for the program start."""
    return Counter(zip(chain((-1,), raw), raw))


def _summarize(c: _Compiled, raw: list, fired: list, terminated: str) -> ExecutionTrace:
    keys = c.keys
    hits = Counter(raw)
    edges = edge_counts(raw)
    client, library = [], []
    for i in hits:  # dict preserves first-occurrence order
        (client if c.owner_is_client[i] else library).append(keys[i])
    return ExecutionTrace(
        steps=[c.names[i] for i in raw],
        hit_counts={keys[i]: n for i, n in hits.items()},
        client_path=client,
        library_path=library,
        triggers_fired=list(fired),
        terminated=terminated,
        edge_hits={(keys[a] if a >= 0 else "<start>", keys[b]): n for (a, b), n in edges.items()},
    )


def iter_blocks(program: MicroProgram) -> Iterable[tuple]:
    """Yield (function def, block def) in declaration order."""
    for f in program.functions:
        for b in f.blocks:
            yield f, b
