"""Function-level and block-level distances to the target tuple."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .program import CLIENT, LIBRARY, MicroProgram, block_key
from .targets import TargetTuple

DEFAULT_C = 10.0


class _Invalid:
    """Marker for 'no target reachable'. Falsy, singleton, JSON-encoded as null."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INVALID"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Invalid, ())


INVALID = _Invalid()


def is_valid(d) -> bool:
    return d is not INVALID


def weighted_path_length(p_short: float, w_f: float) -> float:
    """Mean of the raw hop count and the weight-discounted hop count."""
    return (p_short + (1.0 - w_f) * p_short) / 2.0


def _bfs_lengths(graph: dict, source) -> dict:
    dist = {source: 0}
    todo = deque([source])
    while todo:
        n = todo.popleft()
        for m in graph.get(n, ()):
            if m not in dist:
                dist[m] = dist[n] + 1
                todo.append(m)
    return dist


def _reverse(graph: dict) -> dict:
    rev = {n: set() for n in graph}
    for n, succs in graph.items():
        for m in succs:
            rev.setdefault(m, set()).add(n)
    return rev


def _aggregate(terms, strict: bool) -> float:
    if any(t == 0 for t in terms):
        return 0.0
    inv = sum(1.0 / t for t in terms)
    return (len(terms) if strict else 1.0) / inv


def function_distance(call_graph: dict, weights: dict, targets, strict_harmonic: bool = False) -> dict:
    """d_f for every node of ``call_graph``.

    Targets are at distance 0. Other nodes aggregate the weighted path
    lengths to every reachable target by reciprocal sum (or the divided
    harmonic mean when ``strict_harmonic``).
    """
    targets = set(targets)
    rev = _reverse(call_graph)
    hops = {t: _bfs_lengths(rev, t) for t in sorted(targets)}
    out = {}
    for n in call_graph:
        if n in targets:
            out[n] = 0.0
            continue
        terms = [
            weighted_path_length(h[n], weights.get(t, 0.0))
            for t, h in hops.items()
            if n in h
        ]
        out[n] = _aggregate(terms, strict_harmonic) if terms else INVALID
    return out


def block_distance(program: MicroProgram, fn_distances: dict, target_blocks, c: float = DEFAULT_C,
                   functions=None, strict_harmonic: bool = False) -> dict:
    """d_b for every block of ``functions`` (default: all), keyed by block key.

    Blocks calling a function with a valid distance are anchors worth
    ``c * min d_f``; other blocks aggregate ``edges + anchor value`` over the
    anchors they reach in their own CFG.
    """
    target_blocks = set(target_blocks)
    names = functions if functions is not None else [f.name for f in program.functions]
    out = {}
    for name in names:
        f = program.function(name)
        cfg = {b.id: set(b.successors()) for b in f.blocks}
        rev = _reverse(cfg)
        anchors = {}
        for b in f.blocks:
            ds = [fn_distances[g] for g in b.calls if is_valid(fn_distances.get(g, INVALID))]
            if ds:
                anchors[b.id] = c * min(ds)
        back = {a: _bfs_lengths(rev, a) for a in anchors}
        for b in f.blocks:
            key = block_key(name, b.id)
            if key in target_blocks:
                out[key] = 0.0
                continue
            terms = [e[b.id] + anchors[a] for a, e in back.items() if b.id in e]
            out[key] = _aggregate(terms, strict_harmonic) if terms else INVALID
    return out


@dataclass(frozen=True)
class DistanceMap:
    d_f_client: dict
    d_f_library: dict
    d_b_CT: dict
    d_b_VT: dict
    c: float = DEFAULT_C

    def block(self, key: str):
        if key in self.d_b_VT:
            return self.d_b_VT[key]
        return self.d_b_CT.get(key, INVALID)

    def to_json(self) -> dict:
        def enc(m):
            return {k: (None if v is INVALID else v) for k, v in sorted(m.items())}

        d_f = enc({**self.d_f_client, **self.d_f_library})
        d_b = enc({**self.d_b_CT, **self.d_b_VT})
        return {"c": self.c, "d_f": d_f, "d_b": d_b}

    @classmethod
    def from_json(cls, doc: dict, program: MicroProgram) -> "DistanceMap":
        def dec(v):
            return INVALID if v is None else float(v)

        owner = program.block_owner
        d_f_c, d_f_l, d_b_c, d_b_l = {}, {}, {}, {}
        for k, v in doc["d_f"].items():
            (d_f_c if program.owner(k) == CLIENT else d_f_l)[k] = dec(v)
        for k, v in doc["d_b"].items():
            (d_b_c if owner[k] == CLIENT else d_b_l)[k] = dec(v)
        return cls(d_f_c, d_f_l, d_b_c, d_b_l, float(doc["c"]))


def compute_distances(program: MicroProgram, tt: TargetTuple, c: float = DEFAULT_C,
                      strict_harmonic: bool = False) -> DistanceMap:
    """Per-side distances: client code targets CC/CT, library code targets V/VT."""
    cg = program.call_graph()
    clients = program.functions_of(CLIENT)
    libs = program.functions_of(LIBRARY)
    cset, lset = set(clients), set(libs)
    client_cg = {f: cg[f] & cset for f in clients}
    lib_cg = {f: cg[f] & lset for f in libs}
    d_f_client = function_distance(client_cg, tt.w_CC, tt.CC, strict_harmonic)
    d_f_library = function_distance(lib_cg, tt.w_V, tt.V, strict_harmonic)
    d_b_CT = block_distance(program, d_f_client, tt.ct_keys(), c, clients, strict_harmonic)
    d_b_VT = block_distance(program, d_f_library, tt.vt_keys(), c, libs, strict_harmonic)
    return DistanceMap(d_f_client, d_f_library, d_b_CT, d_b_VT, c)


def compute_merged_distances(program: MicroProgram, tt: TargetTuple, c: float = DEFAULT_C,
                             strict_harmonic: bool = False) -> dict:
    """Block distances on the merged client+library graph, all targeting VT.

    This is the single-program view a classic directed fuzzer would build.
    """
    cg = program.call_graph()
    d_f = function_distance(cg, tt.w_V, tt.V, strict_harmonic)
    return block_distance(program, d_f, tt.vt_keys(), c, None, strict_harmonic)
