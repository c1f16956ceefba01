import json
from importlib import resources

import pytest

from crossdgf.distance import compute_distances
from crossdgf.program import load_program
from crossdgf.targets import build_target_tuple, load_target_spec


def _bench_text(name):
    return resources.files("crossdgf.benchmarks").joinpath(name).read_text()


def load_bench(name):
    program = load_program(_bench_text(f"{name}.json"))
    spec = load_target_spec(_bench_text(f"{name}.targets.json"))
    tt = build_target_tuple(program, spec, warn=False)
    dist = compute_distances(program, tt)
    return program, spec, tt, dist


@pytest.fixture(scope="session")
def figure1():
    return load_bench("figure1")


@pytest.fixture(scope="session")
def two_path():
    return load_bench("two_path")


def blk(id, calls=(), br="return", cond=None, trig=None):
    b = {"id": id, "calls": list(calls)}
    if cond:
        b["branch"] = {"cond": {"guard": cond[0], "then": cond[1], "else": cond[2]}}
    else:
        b["branch"] = {"uncond": br}
    if trig:
        b["trigger"] = trig
    return b


def make_program(functions, entry="main", name="t"):
    """Build a program from (name, owner, blocks) triples."""
    doc = {
        "name": name,
        "entry": entry,
        "functions": [{"name": n, "owner": o, "blocks": bs} for n, o, bs in functions],
    }
    return load_program(json.dumps(doc))


def library_chain(n, call_vuln=False):
    """Client ``main`` calls library ``chain`` of n blocks; with ``call_vuln`` the last one calls ``vuln``.

    Block b_i (i >= 1) runs only when the input is at least i bytes long, so an
    input of length k-1 covers exactly the first k chain blocks.
    """
    blocks = [blk(f"b{i}", cond=({"len_ge": [i + 1]}, f"b{i + 1}", "return")) for i in range(n - 1)]
    blocks.append(blk(f"b{n - 1}", ["vuln"] if call_vuln else []))
    return make_program([
        ("main", "client", [blk("b0", ["chain"])]),
        ("chain", "library", blocks),
        ("vuln", "library", [blk("b0")]),
    ])


def chain_distances(n):
    """Synthetic distance map for ``library_chain``: d_b(chain.b_i) = n - 1 - i."""
    from crossdgf.distance import DistanceMap

    d_b_vt = {f"chain.b{i}": float(n - 1 - i) for i in range(n)}
    d_b_vt["vuln.b0"] = 0.0
    return DistanceMap({"main": 0.0}, {"chain": 0.1, "vuln": 0.0}, {"main.b0": 0.0}, d_b_vt)


CHAIN_SPEC = {"vulnerable": [{"function": "vuln", "cve": "CVE-C", "weight": 1.0}]}


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
