"""Seed risk: path-length-normalized target distance for each side of a trace."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .distance import INVALID, DistanceMap
from .errors import UnknownKeyFunction
from .program import ExecutionTrace
from .targets import TargetSpec

CT = "CT"
VT = "VT"


@dataclass(frozen=True)
class RiskTuple:
    R_client: float
    R_library: float
    d_s_CT: float
    d_s_VT: float
    d_r_CT: float
    d_r_VT: float
    IS: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NormalizedRisk:
    R_client: float
    R_library: float


def importance_score(key_fn: str, spec: TargetSpec, w_V: dict) -> float:
    k = spec.key_function(key_fn)
    if k is None:
        raise UnknownKeyFunction(key_fn)
    weights = []
    for cve in dict.fromkeys(k.cves):  # a repeated CVE counts once
        weights.extend(w_V[f] for f in spec.functions_for_cve(cve))
    return math.sqrt(sum(w * w for w in weights))


def aggregate_IS(trace: ExecutionTrace, spec: TargetSpec, w_V: dict, fbb_keys: dict) -> float:
    """Sum of importance scores of the distinct key functions entered by the trace.

    ``fbb_keys`` maps function name -> key of its first basic block.
    """
    visited = set(trace.library_path)
    total = 0.0
    for k in spec.key_functions:
        if fbb_keys[k.function] in visited:
            total += importance_score(k.function, spec, w_V)
    return total


def target_distance(path, d_b: dict, IS: float, side: str) -> float:
    ds = [d_b[m] for m in path if d_b.get(m, INVALID) is not INVALID]
    k = len(ds)
    if k == 0:
        return -1.0
    if side == CT:
        return sum(ds) / k
    return sum(ds) / (k + IS)


def reachable_count(path, d_b: dict) -> int:
    return sum(1 for m in path if d_b.get(m, INVALID) is not INVALID)


def path_length(k: int, d_s: float) -> float:
    """Estimated reachable path length: mean entry offset plus remaining distance."""
    return (k - 1) / 2.0 + d_s


def _ratio(d_s: float, d_r: float) -> float:
    if d_s == -1:
        return -1.0
    if d_r == 0:
        return 0.0
    return d_s / d_r


def side_terms(path, d_b: dict, IS: float, side: str) -> tuple:
    """(d_s, d_r, R) for one side of a trace."""
    d_s = target_distance(path, d_b, IS, side)
    if d_s == -1:
        return -1.0, -1.0, -1.0
    d_r = path_length(reachable_count(path, d_b), d_s)
    return d_s, d_r, _ratio(d_s, d_r)


def seed_risk(trace: ExecutionTrace, dist: DistanceMap, spec: TargetSpec, w_V: dict, fbb_keys: dict) -> RiskTuple:
    IS = aggregate_IS(trace, spec, w_V, fbb_keys)
    ds_c, dr_c, r_c = side_terms(trace.client_path, dist.d_b_CT, 0.0, CT)
    ds_v, dr_v, r_v = side_terms(trace.library_path, dist.d_b_VT, IS, VT)
    return RiskTuple(r_c, r_v, ds_c, ds_v, dr_c, dr_v, IS)


def _rescale(values: list) -> list:
    valid = [v for v in values if v != -1]
    if not valid:
        return list(values)
    lo, hi = min(valid), max(valid)
    if hi == lo:
        return [v if v == -1 else 0.5 for v in values]
    span = hi - lo
    return [v if v == -1 else (v - lo) / span for v in values]


def normalize_risks(corpus) -> list:
    """Min-max rescale each side over the valid entries; -1 passes through."""
    corpus = list(corpus)
    client = _rescale([r.R_client for r in corpus])
    library = _rescale([r.R_library for r in corpus])
    return [NormalizedRisk(c, l) for c, l in zip(client, library)]
