"""Target tuple construction and per-function target weights."""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field

from .errors import EmptyTupleWarning, OwnerMismatch, ParseError, UnknownFunction, ValidationError
from .program import CLIENT, LIBRARY, MicroProgram


@dataclass(frozen=True)
class VulnerableFunction:
    function: str
    cve_id: str
    raw_weight: float = 1.0


@dataclass(frozen=True)
class KeyFunction:
    function: str
    cves: tuple


@dataclass(frozen=True)
class TargetSpec:
    vulnerable: tuple
    key_functions: tuple = ()

    def __post_init__(self):
        names = [v.function for v in self.vulnerable]
        if len(set(names)) != len(names):
            raise ValidationError("vulnerable function names must be distinct")
        for v in self.vulnerable:
            if not v.raw_weight > 0:
                raise ValidationError(f"weight of {v.function} must be > 0")
        cves = {v.cve_id for v in self.vulnerable}
        for k in self.key_functions:
            if not k.cves:
                raise ValidationError(f"key function {k.function} has no associated CVEs")
            for c in k.cves:
                if c not in cves:
                    raise ValidationError(f"key function {k.function} references unknown CVE {c}")

    @property
    def cve_ids(self) -> list:
        return list(dict.fromkeys(v.cve_id for v in self.vulnerable))

    def functions_for_cve(self, cve: str) -> list:
        return [v.function for v in self.vulnerable if v.cve_id == cve]

    def key_function(self, name: str):
        for k in self.key_functions:
            if k.function == name:
                return k
        return None

    def to_json(self) -> dict:
        return {
            "vulnerable": [{"function": v.function, "cve": v.cve_id, "weight": v.raw_weight} for v in self.vulnerable],
            "key_functions": [{"function": k.function, "cves": list(k.cves)} for k in self.key_functions],
        }


def _reject_unknown(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", field=path)
    extra = set(obj) - set(allowed)
    if extra:
        raise ParseError(f"unknown field {sorted(extra)[0]!r}", field=path)


def target_spec_from_json(doc) -> TargetSpec:
    _reject_unknown(doc, ("vulnerable", "key_functions"), "$")
    vulns = []
    for i, v in enumerate(doc.get("vulnerable", [])):
        path = f"vulnerable[{i}]"
        _reject_unknown(v, ("function", "cve", "weight", "cvss"), path)
        if not isinstance(v.get("function"), str) or not isinstance(v.get("cve"), str):
            raise ParseError("function and cve are required strings", field=path)
        # weight falls back to the CVSS score, then to 1.0
        weight = v.get("weight", v.get("cvss", 1.0))
        if isinstance(weight, bool) or not isinstance(weight, (int, float)):
            raise ParseError("weight must be a number", field=path + ".weight")
        vulns.append(VulnerableFunction(v["function"], v["cve"], float(weight)))
    keys = []
    for i, k in enumerate(doc.get("key_functions", [])):
        path = f"key_functions[{i}]"
        _reject_unknown(k, ("function", "cves"), path)
        if not isinstance(k.get("function"), str) or not isinstance(k.get("cves"), list):
            raise ParseError("function (string) and cves (list) are required", field=path)
        keys.append(KeyFunction(k["function"], tuple(k["cves"])))
    return TargetSpec(tuple(vulns), tuple(keys))


def load_target_spec(text: str) -> TargetSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return target_spec_from_json(doc)


EMPTY_CC_MESSAGE = "CC is empty: no client function calls a function that reaches V"


@dataclass(frozen=True)
class TargetTuple:
    V: frozenset
    A: frozenset
    CC: frozenset
    VT: frozenset  # (function, fbb id)
    CT: frozenset
    w_V: dict = field(hash=False)
    w_CC: dict = field(hash=False)

    def vt_keys(self) -> set:
        return {f"{f}.{b}" for f, b in self.VT}

    def ct_keys(self) -> set:
        return {f"{f}.{b}" for f, b in self.CT}

    def to_json(self) -> dict:
        return {
            "V": sorted(self.V),
            "A": sorted(self.A),
            "CC": sorted(self.CC),
            "VT": sorted(f"{f}.{b}" for f, b in self.VT),
            "CT": sorted(f"{f}.{b}" for f, b in self.CT),
            "w_V": dict(sorted(self.w_V.items())),
            "w_CC": dict(sorted(self.w_CC.items())),
        }

    @classmethod
    def from_json(cls, doc: dict, program: MicroProgram) -> "TargetTuple":
        V, CC = frozenset(doc["V"]), frozenset(doc["CC"])
        return cls(
            V=V,
            A=frozenset(doc["A"]),
            CC=CC,
            VT=frozenset((f, program.function(f).fbb.id) for f in V),
            CT=frozenset((f, program.function(f).fbb.id) for f in CC),
            w_V={k: float(v) for k, v in doc["w_V"].items()},
            w_CC={k: float(v) for k, v in doc["w_CC"].items()},
        )


def reachable_from(graph: dict, start: str) -> set:
    """Nodes reachable from ``start`` (inclusive) by BFS."""
    seen = {start}
    todo = deque([start])
    while todo:
        n = todo.popleft()
        for m in graph.get(n, ()):
            if m not in seen:
                seen.add(m)
                todo.append(m)
    return seen


def check_spec_against_program(program: MicroProgram, spec: TargetSpec) -> None:
    for v in spec.vulnerable:
        if v.function not in program.by_name:
            raise UnknownFunction(v.function)
        if program.owner(v.function) != LIBRARY:
            raise OwnerMismatch(f"vulnerable function {v.function} is not library-owned")
    for k in spec.key_functions:
        if k.function not in program.by_name:
            raise UnknownFunction(k.function)
        if program.owner(k.function) != LIBRARY:
            raise OwnerMismatch(f"key function {k.function} is not library-owned")


def build_target_tuple(program: MicroProgram, spec: TargetSpec, warn: bool = True) -> TargetTuple:
    check_spec_against_program(program, spec)
    cg = program.call_graph()
    V = {v.function for v in spec.vulnerable}
    library = set(program.functions_of(LIBRARY))
    lib_cg = {f: cg[f] & library for f in library}
    A = {g for g in library if reachable_from(lib_cg, g) & V} | V
    CC = {c for c in program.functions_of(CLIENT) if cg[c] & A}
    if warn and not CC:
        warnings.warn(EMPTY_CC_MESSAGE, EmptyTupleWarning, stacklevel=2)
    w_V, w_CC = distribute_weights(program, spec, A, CC)
    return TargetTuple(
        V=frozenset(V),
        A=frozenset(A),
        CC=frozenset(CC),
        VT=frozenset((f, program.function(f).fbb.id) for f in V),
        CT=frozenset((f, program.function(f).fbb.id) for f in CC),
        w_V=w_V,
        w_CC=w_CC,
    )


def distribute_weights(program: MicroProgram, spec: TargetSpec, A, CC) -> tuple:
    """Spread each vulnerable function's raw weight over the CC functions that reach it."""
    cg = program.call_graph()
    reach = {cc: reachable_from(cg, cc) for cc in CC}
    shares = {cc: [] for cc in CC}
    for v in spec.vulnerable:
        receivers = sorted(cc for cc in CC if v.function in reach[cc])
        for cc in receivers:
            shares[cc].append(v.raw_weight / len(receivers))
    top_v = max((v.raw_weight for v in spec.vulnerable), default=0.0)
    w_V = {v.function: v.raw_weight / top_v for v in spec.vulnerable}
    means = {cc: sum(s) / len(s) for cc, s in shares.items() if s}
    top_cc = max(means.values(), default=0.0)
    w_CC = {cc: (means[cc] / top_cc if cc in means else 0.0) for cc in CC}
    return w_V, w_CC
