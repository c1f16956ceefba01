import csv
import json
import subprocess
import sys
from importlib import resources

import pytest

from crossdgf.analysis import analyze_files
from crossdgf.campaign import CampaignReport
from crossdgf.cli import main
from crossdgf.distance import DistanceMap
from crossdgf.program import load_program
from crossdgf.risk import RiskTuple
from crossdgf.targets import TargetTuple

BENCH = resources.files("crossdgf.benchmarks")


@pytest.fixture
def fig1(tmp_path):
    for name in ("figure1.json", "figure1.targets.json"):
        (tmp_path / name).write_text(BENCH.joinpath(name).read_text())
    return tmp_path / "figure1.json", tmp_path / "figure1.targets.json"


def run(*argv):
    return main([str(a) for a in argv])


def test_analyze_writes_artifacts(fig1, tmp_path, capsys):
    prog, targets = fig1
    assert run("analyze", prog, targets, "--out", tmp_path / "a") == 0
    out = capsys.readouterr().out
    assert "analysis wall time:" in out and "(computed)" in out
    tup = json.loads((tmp_path / "a" / "tuple.json").read_text())
    assert tup["CT"] == ["dispatch.b0"]
    assert tup["VT"] == ["vuln.b0"]
    program = load_program(prog.read_text())
    a = analyze_files(prog, targets, use_cache=False)
    assert TargetTuple.from_json(tup, program) == a.tt
    dist = json.loads((tmp_path / "a" / "distances.json").read_text())
    assert DistanceMap.from_json(dist, program) == a.dist


def test_analyze_twice_identical_and_cached(fig1, tmp_path, capsys):
    prog, targets = fig1
    run("analyze", prog, targets, "--out", tmp_path / "a")
    run("analyze", prog, targets, "--out", tmp_path / "b")
    assert "(cache)" in capsys.readouterr().out
    run("analyze", prog, targets, "--out", tmp_path / "c", "--no-cache")
    assert "(computed)" in capsys.readouterr().out
    for name in ("tuple.json", "distances.json"):
        texts = {(tmp_path / d / name).read_bytes() for d in "abc"}
        assert len(texts) == 1


def test_analyze_c_changes_cache_key(fig1, tmp_path):
    prog, targets = fig1
    run("analyze", prog, targets, "--out", tmp_path / "a")
    run("analyze", prog, targets, "--out", tmp_path / "b", "-c", "5")
    a = json.loads((tmp_path / "a" / "distances.json").read_text())
    b = json.loads((tmp_path / "b" / "distances.json").read_text())
    assert a["c"] == 10 and b["c"] == 5
    assert a["d_b"]["api.b0"] != b["d_b"]["api.b0"]


def test_analyze_unknown_function(fig1, tmp_path, capsys):
    prog, _ = fig1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"vulnerable": [{"function": "no_such_fn", "cve": "C"}]}))
    assert run("analyze", prog, bad, "--out", tmp_path / "a") == 2
    assert "no_such_fn" in capsys.readouterr().err


def test_analyze_parse_error(fig1, tmp_path, capsys):
    _, targets = fig1
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"name\": ")
    assert run("analyze", bad, targets) == 2
    assert "line" in capsys.readouterr().err


def test_analyze_missing_file(tmp_path, capsys):
    assert run("analyze", tmp_path / "nope.json", tmp_path / "nope2.json") == 2


def test_analyze_empty_tuple_warns(tmp_path, capsys):
    prog = tmp_path / "p.json"
    prog.write_text(json.dumps({"name": "iso", "entry": "main", "functions": [
        {"name": "main", "owner": "client", "blocks": [{"id": "b0", "calls": [], "branch": {"uncond": "return"}}]},
        {"name": "vuln", "owner": "library", "blocks": [{"id": "b0", "calls": [], "branch": {"uncond": "return"}}]},
    ]}))
    targets = tmp_path / "t.json"
    targets.write_text(json.dumps({"vulnerable": [{"function": "vuln", "cve": "C"}]}))
    assert run("analyze", prog, targets, "--out", tmp_path / "a") == 0
    assert "CC is empty" in capsys.readouterr().err


def fuzz(fig1, out, *extra):
    prog, targets = fig1
    return run("fuzz", prog, targets, "--sim-clock", "--out", out, *extra)


def test_fuzz_writes_report(fig1, tmp_path, capsys):
    out = tmp_path / "f"
    assert fuzz(fig1, out, "--mode", "livefuzz", "--rng-seed", "7", "--budget-execs", "2000000",
                "--stop-when-all-triggered") == 0
    doc = json.loads((out / "report.json").read_text())
    assert "CVE-FIG1" in doc["tte"]
    assert doc["config"]["rng_seed"] == 7
    assert doc["config"]["sim_clock"] is True
    assert doc["config"]["cves"] == ["CVE-FIG1"]
    assert CampaignReport.from_json(doc).tte_execs == {"CVE-FIG1": doc["tte"]["CVE-FIG1"]["execs"]}
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert rows[0]["cve"] == "CVE-FIG1" and int(rows[0]["tte_execs"]) == doc["tte"]["CVE-FIG1"]["execs"]
    bins = sorted((out / "corpus").glob("*.bin"))
    assert len(bins) == doc["queue_size"]
    assert len(list((out / "corpus").glob("*.meta.json"))) == len(bins)


def test_fuzz_coverage_mode_well_formed(fig1, tmp_path):
    out = tmp_path / "f"
    assert fuzz(fig1, out, "--mode", "coverage", "--budget-execs", "20000") == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["mode"] == "coverage"
    assert doc["executions"] == 20000
    assert set(doc) >= {"tte", "triggered", "p_vt", "queue_size_over_time", "config", "volatile"}


def test_fuzz_reproducible(fig1, tmp_path):
    docs = []
    for name in ("a", "b"):
        fuzz(fig1, tmp_path / name, "--rng-seed", "11", "--budget-execs", "20000")
        doc = json.loads((tmp_path / name / "report.json").read_text())
        for key in doc["volatile"]:
            doc.pop(key)
        docs.append(json.dumps(doc, sort_keys=True))
    assert docs[0] == docs[1]


def test_fuzz_without_budget(fig1, tmp_path, capsys):
    assert fuzz(fig1, tmp_path / "f") == 2
    assert "no budget given" in capsys.readouterr().err


def test_fuzz_triggering_seed(fig1, tmp_path, capsys):
    seed = tmp_path / "seed.bin"
    seed.write_bytes(bytes([1, 5]))
    assert fuzz(fig1, tmp_path / "f", "--budget-execs", "10", "--seed-input", seed) == 3
    assert "CVE-FIG1" in capsys.readouterr().err


def test_seed_precedence(fig1, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rng_seed": 5, "budget_execs": 500, "mode": "aflgo"}))

    def seed_of(*extra):
        out = tmp_path / f"o{len(list(tmp_path.iterdir()))}"
        assert fuzz(fig1, out, "--config", cfg, *extra) == 0
        return json.loads((out / "report.json").read_text())["config"]

    assert seed_of()["rng_seed"] == 5
    assert seed_of()["mode"] == "aflgo"
    assert seed_of()["budget_execs"] == 500
    monkeypatch.setenv("DGF_LIVE_SEED", "9")
    assert seed_of()["rng_seed"] == 9
    got = seed_of("--rng-seed", "3", "--mode", "coverage", "--budget-execs", "300")
    assert (got["rng_seed"], got["mode"], got["budget_execs"]) == (3, "coverage", 300)


def test_config_unknown_key(fig1, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rng_sed": 5}))
    assert fuzz(fig1, tmp_path / "f", "--config", cfg, "--budget-execs", "5") == 2
    assert "rng_sed" in capsys.readouterr().err


def trace(fig1, tmp_path, data, *extra):
    prog, targets = fig1
    inp = tmp_path / "in.bin"
    inp.write_bytes(bytes(data))
    return run("trace", prog, targets, inp, *extra)


def test_trace_text(fig1, tmp_path, capsys):
    assert trace(fig1, tmp_path, [1, 5]) == 0
    out = capsys.readouterr().out
    assert "R_library=0.40" in out
    assert "CVE-FIG1" in out


def test_trace_outside_library(fig1, tmp_path, capsys):
    assert trace(fig1, tmp_path, [255]) == 0
    assert "R_library=-1" in capsys.readouterr().out


def test_trace_json_round_trip(fig1, tmp_path, capsys):
    assert trace(fig1, tmp_path, [1, 5], "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    risk = RiskTuple(**doc["risk"])
    assert risk.to_json() == doc["risk"]
    assert doc["triggers"] == ["CVE-FIG1"]
    assert doc["input"] == "0105"
    assert "vuln.b1" in doc["library_path"]


def test_trace_unreadable_input(fig1, tmp_path, capsys):
    prog, targets = fig1
    assert run("trace", prog, targets, tmp_path / "missing.bin") == 2


def test_bench_small_suite(fig1, tmp_path, capsys):
    suite = tmp_path / "suite.json"
    suite.write_text(json.dumps({"name": "s", "runs": 5, "cases": [{
        "name": "fig1", "program": "figure1.json", "targets": "figure1.targets.json", "budget_execs": 3000,
        "campaign": {"sim_clock": True, "initial_seeds": ["0000"]}}]}))
    out = tmp_path / "bench"
    assert run("bench", suite, "--modes", "livefuzz,coverage", "--out", out) == 0
    rows = list(csv.DictReader((out / "bench.csv").open()))
    assert len(rows) == 10
    assert {r["mode"] for r in rows} == {"livefuzz", "coverage"}
    assert "tte_execs:CVE-FIG1" in rows[0]
    summary = list(csv.DictReader((out / "summary.csv").open()))
    assert {s["mode"] for s in summary} == {"livefuzz", "coverage"}
    cov = [s for s in summary if s["mode"] == "coverage"][0]
    assert 0.0 <= float(cov["p_value_vs_livefuzz"]) <= 1.0
    assert "median TTE" in capsys.readouterr().out


def test_bench_unknown_mode(fig1, tmp_path, capsys):
    suite = tmp_path / "suite.json"
    suite.write_text(json.dumps({"cases": [{"name": "x", "program": "figure1.json",
                                            "targets": "figure1.targets.json", "budget_execs": 10}]}))
    assert run("bench", suite, "--modes", "livefuzz,nope", "--out", tmp_path / "b") == 2


def test_module_entry_point(fig1, tmp_path):
    prog, targets = fig1
    res = subprocess.run([sys.executable, "-m", "crossdgf", "analyze", str(prog), str(targets), "--out",
                          str(tmp_path / "m"), "-v"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "m" / "tuple.json").exists()


def test_shipped_suite_loads():
    from crossdgf.bench import load_suite

    with resources.as_file(BENCH.joinpath("two_path.suite.json")) as path:
        suite = load_suite(path)
    assert suite.runs == 20
    assert suite.cases[0].budget_execs == 5_000_000
    assert {"livefuzz", "aflgo", "coverage"} <= set(suite.modes)

