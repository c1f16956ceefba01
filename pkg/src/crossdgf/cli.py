"""Command-line entry points: analyze, fuzz, bench, trace."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import bench
from .analysis import analyze_files, dump_json
from .campaign import MODES, CampaignConfig, run_campaign
from .distance import DEFAULT_C
from .errors import CrossDGFError, EmptyTupleWarning, SeedTriggersTarget
from .program import DEFAULT_STEP_BUDGET, execute
from .risk import seed_risk
from .schedule import ScheduleConfig

log = logging.getLogger("crossdgf")

EXIT_OK, EXIT_INVALID, EXIT_SEED_TRIGGERS = 0, 2, 3
SEED_ENV = "DGF_LIVE_SEED"

_SCHEDULE_KEYS = ("t_x", "t_x_sim", "max_factor_exp", "base_energy")
CONFIG_KEYS = {
    "mode", "rng_seed", "budget_execs", "budget_secs", "sim_clock", "no_apm", "no_mos", "c",
    "strict_harmonic", "step_budget", "initial_seeds", "max_input_len", "stop_when_all_triggered",
    *_SCHEDULE_KEYS,
}
DEFAULTS = {
    "mode": "livefuzz",
    "rng_seed": 0,
    "budget_execs": None,
    "budget_secs": None,
    "sim_clock": False,
    "no_apm": False,
    "no_mos": False,
    "c": DEFAULT_C,
    "strict_harmonic": False,
    "step_budget": DEFAULT_STEP_BUDGET,
    "initial_seeds": ["00000000"],
    "max_input_len": 4096,
    "stop_when_all_triggered": False,
}


class UsageError(CrossDGFError):
    pass


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: expected an object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"config {path}: unknown key {sorted(unknown)[0]!r}")
    return doc


def resolve(args, keys) -> dict:
    """Merge flags > environment (rng seed only) > config file > defaults."""
    file_cfg = load_config_file(getattr(args, "config", None))
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        if flag is not None:
            out[k] = flag
        elif k == "rng_seed" and os.environ.get(SEED_ENV):
            try:
                out[k] = int(os.environ[SEED_ENV], 0)
            except ValueError:
                raise UsageError(f"{SEED_ENV} is not an integer") from None
        elif k in file_cfg:
            out[k] = file_cfg[k]
        elif k in DEFAULTS:
            out[k] = DEFAULTS[k]
        else:
            out[k] = None
    return out


def _schedule(cfg: dict) -> ScheduleConfig:
    return ScheduleConfig(**{k: cfg[k] for k in _SCHEDULE_KEYS if cfg.get(k) is not None})


def _analysis(args, cfg):
    return analyze_files(args.program, args.targets, c=float(cfg["c"]),
                         strict_harmonic=bool(cfg["strict_harmonic"]), use_cache=not args.no_cache)


# -- analyze ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    cfg = resolve(args, ("c", "strict_harmonic"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyTupleWarning)
        a = _analysis(args, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tuple.json").write_text(dump_json(a.tt.to_json()))
    (out / "distances.json").write_text(dump_json(a.dist.to_json()))
    source = "cache" if a.cached else "computed"
    print(f"analysis wall time: {a.seconds:.6f} s ({source})")
    print(f"wrote {out / 'tuple.json'} and {out / 'distances.json'}")
    return EXIT_OK


# -- fuzz --------------------------------------------------------------------


def _read_seeds(args, cfg) -> list:
    if args.seed_input:
        return [Path(p).read_bytes() for p in args.seed_input]
    seeds = cfg["initial_seeds"]
    try:
        return [bytes.fromhex(s) for s in seeds]
    except (TypeError, ValueError):
        raise UsageError("initial_seeds must be a list of hex strings") from None


def write_report_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "rng_seed", "cve", "tte_execs", "tte_seconds", "p_vt", "executions"])
        cves = report.config.get("cves") or sorted(report.tte_execs)
        for cve in cves:
            w.writerow([report.mode, report.config["rng_seed"], cve, report.tte_execs.get(cve, ""),
                        report.tte_seconds.get(cve, ""), report.p_vt, report.executions])


def cmd_fuzz(args) -> int:
    keys = tuple(CONFIG_KEYS)
    cfg = resolve(args, keys)
    a = _analysis(args, cfg)
    config = CampaignConfig(
        mode=cfg["mode"],
        budget_execs=cfg["budget_execs"],
        budget_secs=cfg["budget_secs"],
        rng_seed=int(cfg["rng_seed"]),
        schedule=_schedule(cfg),
        step_budget=int(cfg["step_budget"]),
        initial_seeds=_read_seeds(args, cfg),
        sim_clock=bool(cfg["sim_clock"]),
        no_apm=bool(cfg["no_apm"]),
        no_mos=bool(cfg["no_mos"]),
        stop_when_all_triggered=bool(cfg["stop_when_all_triggered"]),
        max_input_len=int(cfg["max_input_len"]),
    )
    config.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = dict(config.to_json(), c=float(cfg["c"]), strict_harmonic=bool(cfg["strict_harmonic"]))
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))

    report = run_campaign(a.program, a.spec, a.tt, a.dist, config, corpus_dir=out / "corpus",
                          stats_path=Path(args.stats) if args.stats else None)
    report.corpus_dir = "corpus"  # relative to the report, so reports from different --out dirs compare
    report.config = dict(resolved, cves=a.spec.cve_ids, program_sha256=a.program_sha,
                         targets_sha256=a.targets_sha)
    doc = report.to_json()
    doc["wall_clock"]["analysis_seconds"] = a.seconds
    doc["wall_clock"]["analysis_cached"] = a.cached
    (out / "report.json").write_text(dump_json(doc))
    write_report_csv(report, out / "report.csv")
    found = ", ".join(f"{c} after {n} execs" for c, n in sorted(report.tte_execs.items())) or "no triggers"
    print(f"{report.executions} executions, queue {report.queue_size}, P_vt {report.p_vt}: {found}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def cmd_bench(args) -> int:
    suite = bench.load_suite(args.suite)
    modes = args.modes.split(",") if args.modes else None
    rows = bench.run_suite(suite, runs=args.runs, modes=modes, jobs=args.jobs)
    summary = bench.summarize(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_bench_csv(rows, out / "bench.csv")
    bench.write_summary_csv(summary, out / "summary.csv")
    for s in summary:
        p = "" if s["p_value_vs_livefuzz"] is None else f"  p={s['p_value_vs_livefuzz']:.4g}"
        print(f"{s['case']:<12} {s['mode']:<9} {s['cve']:<10} median TTE {s['median_tte_execs']:>10}"
              f"  triggered {s['triggered_runs']}/{s['runs']}{p}")
    return EXIT_OK


# -- trace -------------------------------------------------------------------


def trace_document(a, data: bytes, step_budget: int = DEFAULT_STEP_BUDGET) -> dict:
    tr = execute(a.program, data, step_budget)
    fbb = {f.name: a.program.fbb_key(f.name) for f in a.program.functions}
    risk = seed_risk(tr, a.dist, a.spec, a.tt.w_V, fbb)
    return {
        "input": data.hex(),
        "client_path": list(tr.client_path),
        "library_path": list(tr.library_path),
        "risk": risk.to_json(),
        "triggers": list(tr.triggers_fired),
        "terminated": tr.terminated,
    }


def _fmt(x: float) -> str:
    return "-1 (no reachable block)" if x == -1 else f"{x:.6g}"


def cmd_trace(args) -> int:
    cfg = resolve(args, ("c", "strict_harmonic"))
    try:
        data = sys.stdin.buffer.read() if args.input == "-" else Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc.strerror}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyTupleWarning)
        a = _analysis(args, cfg)
    doc = trace_document(a, data)
    if args.json:
        print(dump_json(doc), end="")
        return EXIT_OK
    r = doc["risk"]
    print(f"input          {doc['input'] or '(empty)'}")
    print(f"client path    {' '.join(doc['client_path']) or '-'}")
    print(f"library path   {' '.join(doc['library_path']) or '-'}")
    print(f"client  d_s={_fmt(r['d_s_CT'])}  d_r={_fmt(r['d_r_CT'])}  R_client={_fmt(r['R_client'])}")
    print(f"library d_s={_fmt(r['d_s_VT'])}  d_r={_fmt(r['d_r_VT'])}  R_library={_fmt(r['R_library'])}")
    print(f"IS             {r['IS']:.6g}")
    print(f"triggers       {', '.join(doc['triggers']) or 'none'}")
    if doc["terminated"] != "returned":
        print(f"terminated     {doc['terminated']}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_analysis_flags(p):
    p.add_argument("program", help="program document (JSON)")
    p.add_argument("targets", help="target specification (JSON)")
    p.add_argument("-c", type=float, default=None, dest="c", help=f"block-distance call factor (default {DEFAULT_C:g})")
    p.add_argument("--strict-harmonic", action="store_true", default=None,
                   help="divide the reciprocal sum by the number of reachable targets")
    p.add_argument("--no-cache", action="store_true", help="recompute analysis instead of using the cache")
    p.add_argument("--config", help="JSON config document; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossdgf", description="Directed fuzzing of client/library targets.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="build the target tuple and distance maps")
    _add_analysis_flags(p)
    p.add_argument("--out", default=".", help="output directory for tuple.json and distances.json")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fuzz", parents=[common], help="run one campaign")
    _add_analysis_flags(p)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--rng-seed", type=lambda s: int(s, 0), default=None, help=f"falls back to ${SEED_ENV}")
    p.add_argument("--budget-execs", type=int, default=None)
    p.add_argument("--budget-secs", type=float, default=None)
    p.add_argument("--sim-clock", action=argparse.BooleanOptionalAction, default=None,
                   help="measure schedule time in executions instead of seconds")
    p.add_argument("--no-apm", action="store_true", default=None, help="rank seeds by average block distance per side")
    p.add_argument("--no-mos", action="store_true", default=None, help="always draw from the full operator set")
    p.add_argument("--t-x", type=float, default=None)
    p.add_argument("--t-x-sim", type=float, default=None)
    p.add_argument("--max-input-len", type=int, default=None)
    p.add_argument("--stop-when-all-triggered", action="store_true", default=None)
    p.add_argument("--seed-input", action="append", help="initial seed file (repeatable)")
    p.add_argument("--stats", help="write newline-delimited JSON events here")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("bench", parents=[common], help="seeded multi-run mode comparison")
    p.add_argument("suite", help="suite document (JSON)")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--modes", default=None, help=f"comma-separated subset of {','.join(bench.BENCH_MODES)}")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="bench-out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", parents=[common], help="show path and risk terms for one input")
    _add_analysis_flags(p)
    p.add_argument("input", help="input file, or - for stdin")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SeedTriggersTarget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEED_TRIGGERS
    except CrossDGFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
