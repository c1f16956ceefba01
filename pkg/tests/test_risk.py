import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import CHAIN_SPEC, chain_distances, library_chain
from crossdgf.distance import INVALID, compute_distances
from crossdgf.errors import UnknownKeyFunction
from crossdgf.program import ExecutionTrace, execute
from crossdgf.risk import (
    CT, VT, RiskTuple, aggregate_IS, importance_score, normalize_risks, path_length, seed_risk, target_distance,
)
from crossdgf.targets import build_target_tuple, target_spec_from_json
from gen import random_case, random_input


def spec_doc(vulns, keys=()):
    return target_spec_from_json({
        "vulnerable": [{"function": f, "cve": c, "weight": 1.0} for f, c in vulns],
        "key_functions": [{"function": f, "cves": list(cs)} for f, cs in keys],
    })


def lib_trace(path):
    return ExecutionTrace(steps=[], hit_counts={}, client_path=[], library_path=list(path), triggers_fired=[],
                          terminated="returned")


def test_importance_score_norm():
    s = spec_doc([("v1", "C1"), ("v2", "C2")], [("k", ["C1", "C2"])])
    assert importance_score("k", s, {"v1": 0.6, "v2": 0.8}) == pytest.approx(1.0, abs=1e-12)


def test_importance_score_single_and_duplicate():
    s = spec_doc([("v1", "C1")], [("k", ["C1"]), ("d", ["C1", "C1"])])
    assert importance_score("k", s, {"v1": 0.37}) == pytest.approx(0.37)
    assert importance_score("d", s, {"v1": 0.5}) == pytest.approx(0.5)


def test_importance_score_unknown():
    with pytest.raises(UnknownKeyFunction):
        importance_score("nope", spec_doc([("v1", "C1")]), {"v1": 1.0})


def is_spec():
    return spec_doc([("v1", "C1"), ("v2", "C2")], [("k1", ["C1", "C2"]), ("k2", ["C2"])])


FBB = {"k1": "k1.b0", "k2": "k2.b0", "v1": "v1.b0", "v2": "v2.b0"}
W = {"v1": 0.6, "v2": 0.8}


def test_aggregate_is_sums_distinct_key_functions():
    s = spec_doc([("v1", "C1"), ("v2", "C2")], [("k1", ["C1", "C2"]), ("k2", ["C1"])])
    w = {"v1": 0.5, "v2": 0.5 * 3 ** 0.5}
    assert aggregate_IS(lib_trace(["k1.b0", "k2.b0", "x.b1"]), s, w, FBB) == pytest.approx(1.5)


def test_aggregate_is_empty_and_loops():
    s = is_spec()
    assert aggregate_IS(lib_trace(["x.b0"]), s, W, FBB) == 0.0
    assert aggregate_IS(lib_trace(["k1.b1"]), s, W, FBB) == 0.0  # inside k1 but its FBB never ran
    looped = ExecutionTrace(steps=[("k1", "b0")] * 40, hit_counts={"k1.b0": 40}, client_path=[],
                            library_path=["k1.b0"], triggers_fired=[], terminated="returned")
    assert aggregate_IS(looped, s, W, FBB) == pytest.approx(1.0)


def test_target_distance_examples():
    d_b = {f"b{i}": float(9 - i) for i in range(5)}
    assert target_distance(list(d_b), d_b, 0.0, CT) == pytest.approx(7.0)
    assert target_distance(list(d_b), d_b, 3.0, CT) == pytest.approx(7.0)  # IS ignored on the client side
    d_b = {"a": 5.0, "b": 5.0, "c": 5.0, "d": 5.0, "x": INVALID}
    assert target_distance(list(d_b), d_b, 1.0, VT) == pytest.approx(4.0)
    assert target_distance(list(d_b), d_b, 0.0, VT) == pytest.approx(5.0)
    assert target_distance(["x", "unknown"], d_b, 0.0, VT) == -1


@pytest.mark.parametrize("k, d_s, want", [(5, 7.0, 9.0), (1, 0.0, 0.0), (10, 4.5, 9.0)])
def test_path_length(k, d_s, want):
    assert path_length(k, d_s) == pytest.approx(want)


def chain_risk(n, k, dist=None):
    program = library_chain(n, call_vuln=dist is not None)
    spec = target_spec_from_json(CHAIN_SPEC)
    dist = dist or chain_distances(n)
    trace = execute(program, bytes(k - 1))
    assert len(trace.library_path) == k
    return seed_risk(trace, dist, spec, {"vuln": 1.0}, {f.name: program.fbb_key(f.name) for f in program.functions})


def test_chain_half_covered():
    r = chain_risk(10, 5)
    assert r.d_s_VT == pytest.approx(7.0)
    assert r.d_r_VT == pytest.approx(9.0)
    assert r.R_library == pytest.approx(7 / 9, abs=1e-12)


def test_chain_fully_covered():
    assert chain_risk(10, 10).R_library == pytest.approx(0.5, abs=1e-12)


def test_chain_with_engine_distances():
    # the real engine gives the same d_b on the chain until the final block calls vuln
    program = library_chain(10, call_vuln=True)
    spec = target_spec_from_json(CHAIN_SPEC)
    dist = compute_distances(program, build_target_tuple(program, spec))
    assert [dist.d_b_VT[f"chain.b{i}"] for i in range(10)] == [float(9 - i) for i in range(10)]
    assert chain_risk(10, 5, dist).R_library == pytest.approx(7 / 9, abs=1e-12)


def test_single_block_on_target_is_zero():
    r = chain_risk(1, 1)
    assert (r.d_s_VT, r.d_r_VT, r.R_library) == (0.0, 0.0, 0.0)


def test_never_entering_library():
    program = library_chain(4)
    spec = target_spec_from_json(CHAIN_SPEC)
    t = lib_trace([])
    r = seed_risk(t, chain_distances(4), spec, {"vuln": 1.0}, {f.name: program.fbb_key(f.name) for f in program.functions})
    assert (r.R_library, r.d_s_VT, r.d_r_VT) == (-1.0, -1.0, -1.0)
    assert r.R_client == -1.0


@pytest.mark.parametrize("raw, want", [
    ([0.2, 0.5, 0.8], [0.0, 0.5, 1.0]),
    ([0.7], [0.5]),
    ([-1, 0.4, 0.6], [-1, 0.0, 1.0]),
    ([-1, -1], [-1, -1]),
    ([0.3, 0.3, -1], [0.5, 0.5, -1]),
])
def test_normalize_examples(raw, want):
    corpus = [RiskTuple(r, -1.0, 0, 0, 0, 0, 0) for r in raw]
    got = [n.R_client for n in normalize_risks(corpus)]
    assert got == pytest.approx(want)
    assert all(n.R_library == -1 for n in normalize_risks(corpus))


@given(st.lists(st.one_of(st.just(-1.0), st.floats(0, 1)), max_size=20))
def test_normalize_properties(values):
    corpus = [RiskTuple(v, v, 0, 0, 0, 0, 0) for v in values]
    out = [n.R_client for n in normalize_risks(corpus)]
    assert [o == -1 for o in out] == [v == -1 for v in values]
    assert all(0 <= o <= 1 for o in out if o != -1)
    valid = [o for o in out if o != -1]
    if len(set(v for v in values if v != -1)) > 1:
        assert min(valid) == 0.0 and max(valid) == 1.0
        again = [n.R_client for n in normalize_risks([RiskTuple(o, o, 0, 0, 0, 0, 0) for o in out])]
        assert again == pytest.approx(out)


def risk_case(seed):
    program, spec, rng = random_case(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tt = build_target_tuple(program, spec)
    dist = compute_distances(program, tt)
    fbb = {f.name: program.fbb_key(f.name) for f in program.functions}
    return program, spec, tt, dist, fbb, rng


def check_bounds(r):
    for R, ds, dr in ((r.R_client, r.d_s_CT, r.d_r_CT), (r.R_library, r.d_s_VT, r.d_r_VT)):
        assert (R == -1) == (ds == -1) == (dr == -1)
        if R != -1:
            assert 0.0 <= R <= 1.0
            assert 0.0 <= ds <= dr


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_risk_matches_oracle_and_is_bounded(seed):
    program, spec, tt, dist, fbb, rng = risk_case(seed)
    d_ct, d_vt = oracles.undef_to_none(dist.d_b_CT), oracles.undef_to_none(dist.d_b_VT)
    for _ in range(10):
        t = execute(program, random_input(rng), 2000)
        r = seed_risk(t, dist, spec, tt.w_V, fbb)
        check_bounds(r)
        want = oracles.risk_from_steps(program, t.steps, d_ct, d_vt, spec, tt.w_V)
        assert (r.R_client, r.R_library, r.d_s_CT, r.d_s_VT, r.IS) == pytest.approx(want, abs=1e-9)
        if r.R_library == -1:
            assert all(d_vt.get(m) is None for m in t.library_path)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9), st.floats(0.0, 5.0))
def test_more_importance_never_increases_library_distance(seed, extra):
    d_b = {f"m{i}": float(i) for i in range(6)}
    path = list(d_b)[: 1 + seed % 6]
    base = target_distance(path, d_b, 0.3, VT)
    assert target_distance(path, d_b, 0.3 + extra, VT) <= base
