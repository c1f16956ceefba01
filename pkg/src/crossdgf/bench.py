"""Seeded multi-run comparison of campaign modes, with CSV output and rank-sum tests."""

from __future__ import annotations

import csv
import json
import logging
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from scipy.stats import mannwhitneyu

from .analysis import analyze_files
from .campaign import CampaignConfig, run_campaign
from .errors import ParseError, ValidationError
from .schedule import ScheduleConfig

log = logging.getLogger(__name__)

# bench mode name -> (campaign mode, extra config flags)
BENCH_MODES = {
    "livefuzz": ("livefuzz", {}),
    "aflgo": ("aflgo", {}),
    "coverage": ("coverage", {}),
    "no-apm": ("livefuzz", {"no_apm": True}),
    "no-mos": ("livefuzz", {"no_mos": True}),
}
REFERENCE_MODE = "livefuzz"

_CASE_FIELDS = {"name", "program", "targets", "budget_execs", "budget_secs", "campaign"}
_CAMPAIGN_FIELDS = {"t_x", "t_x_sim", "max_factor_exp", "base_energy", "step_budget", "initial_seeds",
                    "sim_clock", "max_input_len", "stop_when_all_triggered"}
_SCHEDULE_FIELDS = ("t_x", "t_x_sim", "max_factor_exp", "base_energy")


@dataclass
class BenchCase:
    name: str
    program: Path
    targets: Path
    budget_execs: Optional[int] = None
    budget_secs: Optional[float] = None
    campaign: dict = field(default_factory=dict)

    def config(self, mode: str, rng_seed: int) -> CampaignConfig:
        base_mode, flags = BENCH_MODES[mode]
        opts = dict(self.campaign)
        schedule = ScheduleConfig(**{k: opts.pop(k) for k in _SCHEDULE_FIELDS if k in opts})
        if "initial_seeds" in opts:
            opts["initial_seeds"] = [bytes.fromhex(s) for s in opts["initial_seeds"]]
        return CampaignConfig(mode=base_mode, budget_execs=self.budget_execs, budget_secs=self.budget_secs,
                              rng_seed=rng_seed, schedule=schedule, stats_every=0, **opts, **flags)


@dataclass
class Suite:
    name: str
    cases: list
    modes: list
    runs: int = 20
    seed_base: int = 0


def suite_from_json(doc, base_dir: Path) -> Suite:
    if not isinstance(doc, dict):
        raise ParseError("suite must be an object")
    extra = set(doc) - {"name", "cases", "modes", "runs", "seed_base"}
    if extra:
        raise ParseError(f"unknown field {sorted(extra)[0]!r}", field="$")
    modes = doc.get("modes", list(BENCH_MODES))
    for m in modes:
        if m not in BENCH_MODES:
            raise ValidationError(f"unknown bench mode {m!r}")
    cases = []
    for i, c in enumerate(doc.get("cases", [])):
        where = f"cases[{i}]"
        if not isinstance(c, dict) or set(c) - _CASE_FIELDS:
            raise ParseError("bad case entry", field=where)
        for key in ("name", "program", "targets"):
            if not isinstance(c.get(key), str):
                raise ParseError(f"{key} is required", field=f"{where}.{key}")
        camp = c.get("campaign", {})
        if set(camp) - _CAMPAIGN_FIELDS:
            raise ParseError(f"unknown field {sorted(set(camp) - _CAMPAIGN_FIELDS)[0]!r}", field=f"{where}.campaign")
        if c.get("budget_execs") is None and c.get("budget_secs") is None:
            raise ValidationError(f"case {c['name']}: no budget given")
        cases.append(BenchCase(c["name"], base_dir / c["program"], base_dir / c["targets"],
                               c.get("budget_execs"), c.get("budget_secs"), dict(camp)))
    if not cases:
        raise ValidationError("suite has no cases")
    runs = doc.get("runs", 20)
    if not isinstance(runs, int) or runs < 1:
        raise ValidationError("runs must be a positive integer")
    return Suite(doc.get("name", "suite"), cases, list(modes), runs, int(doc.get("seed_base", 0)))


def load_suite(path) -> Suite:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return suite_from_json(doc, path.parent)


_ANALYSES = {}  # per-process memo: (program, targets) -> Analysis


def _analysis(case: BenchCase):
    key = (str(case.program), str(case.targets))
    if key not in _ANALYSES:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _ANALYSES[key] = analyze_files(case.program, case.targets, use_cache=False)
    return _ANALYSES[key]


def run_one(case: BenchCase, mode: str, run: int, rng_seed: int) -> dict:
    a = _analysis(case)
    report = run_campaign(a.program, a.spec, a.tt, a.dist, case.config(mode, rng_seed))
    return {
        "case": case.name,
        "mode": mode,
        "run": run,
        "rng_seed": rng_seed,
        "executions": report.executions,
        "p_vt": report.p_vt,
        "tte_execs": dict(report.tte_execs),
        "cves": a.spec.cve_ids,
        "budget_execs": case.budget_execs,
    }


def _star(args):
    return run_one(*args)


def run_suite(suite: Suite, runs: Optional[int] = None, modes: Optional[list] = None, jobs: int = 1) -> list:
    """One row per campaign, ordered by (case, mode, run) regardless of scheduling."""
    runs = suite.runs if runs is None else runs
    modes = suite.modes if modes is None else modes
    for m in modes:
        if m not in BENCH_MODES:
            raise ValidationError(f"unknown bench mode {m!r}")
    tasks = [(case, mode, r, suite.seed_base + r) for case in suite.cases for mode in modes for r in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_star, tasks))
    else:
        rows = []
        for t in tasks:
            rows.append(run_one(*t))
            log.info("%s/%s run %d: tte=%s", t[0].name, t[1], t[2], rows[-1]["tte_execs"])
    return rows


def censored_tte(row: dict, cve: str) -> float:
    """TTE in executions; an untriggered run counts as its full execution count."""
    return row["tte_execs"].get(cve, row["executions"])


def summarize(rows: list) -> list:
    """Per (case, mode, cve): medians plus the rank-sum p-value against the reference mode."""
    out = []
    groups = {}
    for r in rows:
        for cve in r["cves"]:
            groups.setdefault((r["case"], cve), {}).setdefault(r["mode"], []).append(r)
    for (case, cve), by_mode in groups.items():
        ref = [censored_tte(r, cve) for r in by_mode.get(REFERENCE_MODE, [])]
        for mode, rs in by_mode.items():
            ttes = [censored_tte(r, cve) for r in rs]
            p = None
            if mode != REFERENCE_MODE and ref and ttes:
                p = float(mannwhitneyu(ref, ttes, alternative="two-sided").pvalue)
            out.append({
                "case": case,
                "mode": mode,
                "cve": cve,
                "runs": len(rs),
                "triggered_runs": sum(1 for r in rs if cve in r["tte_execs"]),
                "median_tte_execs": statistics.median(ttes),
                "median_p_vt": statistics.median(r["p_vt"] for r in rs),
                "p_value_vs_livefuzz": p,
            })
    return out


def write_bench_csv(rows: list, path) -> None:
    cves = list(dict.fromkeys(c for r in rows for c in r["cves"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "mode", "run", "rng_seed", "executions", "p_vt"] + [f"tte_execs:{c}" for c in cves])
        for r in rows:
            w.writerow([r["case"], r["mode"], r["run"], r["rng_seed"], r["executions"], r["p_vt"]]
                       + [r["tte_execs"].get(c, "") for c in cves])


SUMMARY_COLUMNS = ["case", "mode", "cve", "runs", "triggered_runs", "median_tte_execs", "median_p_vt",
                   "p_value_vs_livefuzz"]


def write_summary_csv(summary: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        for s in summary:
            w.writerow({k: ("" if s[k] is None else s[k]) for k in SUMMARY_COLUMNS})
