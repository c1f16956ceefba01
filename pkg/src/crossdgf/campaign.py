"""The fuzzing loop: queue, coverage feedback, scheduling and metric accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .distance import INVALID, DistanceMap, compute_merged_distances
from .errors import BudgetZero, SeedTriggersTarget, ValidationError
from .mutation import MAX_INPUT_LEN, MutationContext, default_operator_sets, mutate, select_operator_stack
from .program import (DEFAULT_STEP_BUDGET, MAX_CALL_DEPTH, ExecutionTrace, MicroProgram, _summarize, bucket_hits,
                      edge_counts)
from .risk import NormalizedRisk, RiskTuple, normalize_risks, seed_risk
from .schedule import CampaignClock, ScheduleConfig, annealing_factor, assign_power, fine_ratio
from .targets import TargetSpec, TargetTuple

log = logging.getLogger(__name__)

MODES = ("livefuzz", "aflgo", "coverage")

_BUCKET = [0] + [bucket_hits(n) for n in range(1, 129)]


def _bucket(n: int) -> int:
    return _BUCKET[n] if n <= 128 else 7


class CoverageMap:
    """Observed (edge, hit bucket) pairs; grows monotonically."""

    def __init__(self):
        self._seen = {}  # edge -> bitmask of buckets

    def update(self, edge_counts: dict) -> bool:
        """Merge one execution's edge counts; True iff any pair was unseen."""
        seen = self._seen
        new = False
        for e, n in edge_counts.items():
            bit = 1 << (_BUCKET[n] if n <= 128 else 7)
            old = seen.get(e, 0)
            if not old & bit:
                seen[e] = old | bit
                new = True
        return new

    def pairs(self) -> set:
        return {(e, b) for e, mask in self._seen.items() for b in range(8) if mask >> b & 1}

    def __len__(self):
        return sum(bin(m).count("1") for m in self._seen.values())


def is_new_coverage(trace: ExecutionTrace, cmap: CoverageMap) -> bool:
    return cmap.update(trace.edge_hits)


def average_block_distance(path, d_b: dict) -> Optional[float]:
    """Classic seed distance: mean d_b over executed blocks that have one."""
    ds = [d_b[m] for m in path if d_b.get(m, INVALID) is not INVALID]
    if not ds:
        return None
    return sum(ds) / len(ds)


def baseline_seed_metric(trace: ExecutionTrace, mode: str, merged_d_b: dict) -> Optional[float]:
    if mode == "coverage":
        return None
    return average_block_distance(list(trace.client_path) + list(trace.library_path), merged_d_b)


@dataclass
class CampaignConfig:
    mode: str = "livefuzz"
    budget_execs: Optional[int] = None
    budget_secs: Optional[float] = None
    rng_seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    step_budget: int = DEFAULT_STEP_BUDGET
    initial_seeds: list = field(default_factory=lambda: [bytes(4)])
    sim_clock: bool = True
    no_apm: bool = False
    no_mos: bool = False
    stop_when_all_triggered: bool = False
    max_input_len: int = MAX_INPUT_LEN
    stats_every: int = 10_000

    def validate(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.budget_execs is None and self.budget_secs is None:
            raise BudgetZero("no budget given")
        if (self.budget_execs is not None and self.budget_execs <= 0) or (
            self.budget_secs is not None and self.budget_secs <= 0
        ):
            raise BudgetZero("budget must be positive")
        if not self.initial_seeds:
            raise ValidationError("at least one initial seed is required")
        if self.step_budget < 1:
            raise ValidationError("step_budget must be >= 1")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "budget_execs": self.budget_execs,
            "budget_secs": self.budget_secs,
            "rng_seed": self.rng_seed,
            "schedule": {
                "t_x": self.schedule.t_x,
                "t_x_sim": self.schedule.t_x_sim,
                "max_factor_exp": self.schedule.max_factor_exp,
                "base_energy": self.schedule.base_energy,
            },
            "step_budget": self.step_budget,
            "initial_seeds": [s.hex() for s in self.initial_seeds],
            "sim_clock": self.sim_clock,
            "no_apm": self.no_apm,
            "no_mos": self.no_mos,
            "stop_when_all_triggered": self.stop_when_all_triggered,
            "max_input_len": self.max_input_len,
        }


@dataclass
class Seed:
    id: int
    data: bytes
    digest: str
    client_path: list
    library_path: list
    risk: Optional[RiskTuple]
    metric: Optional[float]  # classic average distance (aflgo mode)
    discovered_at: int  # executions
    parent: Optional[int]
    norm: NormalizedRisk = NormalizedRisk(-1.0, -1.0)
    norm_metric: Optional[float] = None


@dataclass
class CampaignReport:
    mode: str
    config: dict
    executions: int = 0
    p_vt: int = 0
    tte_execs: dict = field(default_factory=dict)
    tte_seconds: dict = field(default_factory=dict)
    triggered: dict = field(default_factory=dict)  # cve -> first triggering input (hex)
    queue_size_over_time: list = field(default_factory=list)  # [executions, size]
    queue_size: int = 0
    corpus_dir: Optional[str] = None
    elapsed_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "executions": self.executions,
            "p_vt": self.p_vt,
            "tte": {c: {"execs": n} for c, n in sorted(self.tte_execs.items())},
            "triggered": dict(sorted(self.triggered.items())),
            "queue_size": self.queue_size,
            "queue_size_over_time": self.queue_size_over_time,
            "corpus_dir": self.corpus_dir,
            "wall_clock": {
                "elapsed_seconds": self.elapsed_seconds,
                "tte_seconds": dict(sorted(self.tte_seconds.items())),
            },
            "volatile": ["wall_clock"],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CampaignReport":
        wall = doc.get("wall_clock", {})
        return cls(
            mode=doc["mode"],
            config=doc["config"],
            executions=doc["executions"],
            p_vt=doc["p_vt"],
            tte_execs={c: v["execs"] for c, v in doc["tte"].items()},
            tte_seconds=dict(wall.get("tte_seconds", {})),
            triggered=dict(doc["triggered"]),
            queue_size_over_time=[list(x) for x in doc["queue_size_over_time"]],
            queue_size=doc["queue_size"],
            corpus_dir=doc.get("corpus_dir"),
            elapsed_seconds=wall.get("elapsed_seconds", 0.0),
        )


def _stable_digest(pairs) -> str:
    h = hashlib.sha256()
    for (a, b), bucket in sorted(pairs):
        h.update(f"{a}>{b}:{bucket};".encode())
    return h.hexdigest()[:16]


class Campaign:
    def __init__(self, program: MicroProgram, spec: TargetSpec, tt: TargetTuple, dist: DistanceMap,
                 config: CampaignConfig, corpus_dir: Optional[Path] = None, stats_path: Optional[Path] = None):
        config.validate()
        known = set(spec.cve_ids)
        for f in program.functions:
            for b in f.blocks:
                if b.trigger is not None and b.trigger.cve_id not in known:
                    raise ValidationError(f"trigger {b.trigger.cve_id} on {f.name}.{b.id} has no vulnerable entry")
        self.program = program
        self.spec = spec
        self.tt = tt
        self.dist = dist
        self.cfg = config
        self.corpus_dir = Path(corpus_dir) if corpus_dir else None
        self.stats_path = Path(stats_path) if stats_path else None
        self.compiled = program.compiled
        self.fbb_keys = {f.name: program.fbb_key(f.name) for f in program.functions}
        vt = tt.vt_keys()
        self.vt_idx = frozenset(i for i, k in enumerate(self.compiled.keys) if k in vt)
        self.merged = compute_merged_distances(program, tt, dist.c) if config.mode == "aflgo" else None
        self.sets = default_operator_sets()
        self.rng = random.Random(config.rng_seed)
        self.queue = []
        self.datas = []
        self.coverage = CoverageMap()
        self.paths_vt = set()
        self.execs = 0
        self.lib_start = None  # clock reading when a seed first had valid library risk
        self.dirty = True
        self.report = CampaignReport(mode=config.mode, config=config.to_json())
        self._stats = None

    # -- clock -------------------------------------------------------------

    def _now(self) -> float:
        if self.cfg.sim_clock:
            return float(self.execs)
        return time.monotonic() - self._t0

    def _t_x(self) -> float:
        return self.cfg.schedule.t_x_sim if self.cfg.sim_clock else self.cfg.schedule.t_x

    def clock(self) -> CampaignClock:
        t = self._now()
        t_lib = 0.0 if self.lib_start is None else t - self.lib_start
        return CampaignClock(t, t_lib)

    # -- bookkeeping -------------------------------------------------------

    def _event(self, kind: str, **payload):
        if self._stats is not None:
            self._stats.write(json.dumps({"event": kind, "execs": self.execs, **payload}, sort_keys=True) + "\n")

    def _exhausted(self) -> bool:
        cfg = self.cfg
        if cfg.budget_execs is not None and self.execs >= cfg.budget_execs:
            return True
        if cfg.budget_secs is not None and time.monotonic() - self._t0 >= cfg.budget_secs:
            return True
        if cfg.stop_when_all_triggered and len(self.report.triggered) == len(self.spec.cve_ids):
            return True
        return False

    def _run_one(self, data: bytes, parent: Optional[int]):
        raw, fired, terminated = self.compiled.run(data, self.cfg.step_budget, MAX_CALL_DEPTH)
        self.execs += 1
        edges = edge_counts(raw)
        if fired:
            for cve in fired:
                if cve not in self.report.triggered:
                    self.report.triggered[cve] = data.hex()
                    self.report.tte_execs[cve] = self.execs
                    self.report.tte_seconds[cve] = time.monotonic() - self._t0
                    self._event("trigger", cve=cve)
                    log.info("triggered %s after %d executions", cve, self.execs)
        if not self.vt_idx.isdisjoint(raw):
            self.paths_vt.add(frozenset((e, _bucket(n)) for e, n in edges.items()))
        if self.coverage.update(edges):
            self._admit(data, raw, fired, terminated, parent)
        if self.cfg.stats_every and self.execs % self.cfg.stats_every == 0:
            self._event("exec", queue=len(self.queue), p_vt=len(self.paths_vt))
        return fired

    def _admit(self, data, raw, fired, terminated, parent):
        trace = _summarize(self.compiled, raw, fired, terminated)
        risk = metric = None
        if self.cfg.mode == "livefuzz":
            risk = seed_risk(trace, self.dist, self.spec, self.tt.w_V, self.fbb_keys)
            if self.cfg.no_apm:
                # classic per-side average distance in place of the path-length ratio
                avg_c = average_block_distance(trace.client_path, self.dist.d_b_CT)
                avg_v = average_block_distance(trace.library_path, self.dist.d_b_VT)
                risk = RiskTuple(-1.0 if avg_c is None else avg_c, -1.0 if avg_v is None else avg_v,
                                 risk.d_s_CT, risk.d_s_VT, risk.d_r_CT, risk.d_r_VT, risk.IS)
            if risk.R_library != -1 and self.lib_start is None:
                self.lib_start = self._now()
        elif self.cfg.mode == "aflgo":
            metric = baseline_seed_metric(trace, "aflgo", self.merged)
        seed = Seed(
            id=len(self.queue),
            data=data,
            digest=_stable_digest(trace.coverage_pairs()),
            client_path=trace.client_path,
            library_path=trace.library_path,
            risk=risk,
            metric=metric,
            discovered_at=self.execs,
            parent=parent,
        )
        self.queue.append(seed)
        self.datas.append(data)
        self.dirty = True
        self.report.queue_size_over_time.append([self.execs, len(self.queue)])
        self._event("new_seed", id=seed.id, parent=parent, size=len(data))
        if self.corpus_dir is not None:
            self._write_seed(seed)

    def _write_seed(self, seed: Seed):
        self.corpus_dir.mkdir(parents=True, exist_ok=True)
        (self.corpus_dir / f"{seed.id:06d}.bin").write_bytes(seed.data)
        meta = {
            "id": seed.id,
            "parent": seed.parent,
            "discovered_at_execs": seed.discovered_at,
            "digest": seed.digest,
            "risk": seed.risk.to_json() if seed.risk else None,
            "distance": seed.metric,
            "client_path": seed.client_path,
            "library_path": seed.library_path,
        }
        (self.corpus_dir / f"{seed.id:06d}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    def _refresh(self):
        if not self.dirty:
            return
        if self.cfg.mode == "livefuzz":
            for s, n in zip(self.queue, normalize_risks([s.risk for s in self.queue])):
                s.norm = n
        elif self.cfg.mode == "aflgo":
            vals = [(-1.0 if s.metric is None else s.metric) for s in self.queue]
            lo_hi = [v for v in vals if v != -1]
            if lo_hi:
                lo, hi = min(lo_hi), max(lo_hi)
                for s in self.queue:
                    if s.metric is None:
                        s.norm_metric = None
                    else:
                        s.norm_metric = 0.5 if hi == lo else (s.metric - lo) / (hi - lo)
        self.dirty = False

    def energy(self, seed: Seed) -> int:
        cfg = self.cfg
        base = cfg.schedule.base_energy
        if cfg.mode == "coverage":
            return base
        if cfg.mode == "aflgo":
            if seed.norm_metric is None:
                return base
            f = annealing_factor(seed.norm_metric, self._now(), self._t_x(), cfg.schedule.max_factor_exp)
            return max(1, round(base * f))
        return assign_power(seed.norm, self.clock(), cfg.schedule, self._t_x())

    def fr(self, seed: Seed) -> float:
        if self.cfg.mode != "livefuzz" or self.cfg.no_mos:
            return 0.0
        return fine_ratio(self._now(), self._t_x(), seed.norm.R_client, seed.norm.R_library)

    # -- main loop ---------------------------------------------------------

    def run(self) -> CampaignReport:
        self._t0 = time.monotonic()
        if self.stats_path is not None:
            self.stats_path.parent.mkdir(parents=True, exist_ok=True)
            self._stats = self.stats_path.open("w")
        try:
            self._loop()
        finally:
            if self._stats is not None:
                self._stats.close()
                self._stats = None
        r = self.report
        r.executions = self.execs
        r.p_vt = len(self.paths_vt)
        r.queue_size = len(self.queue)
        r.corpus_dir = str(self.corpus_dir) if self.corpus_dir else None
        r.elapsed_seconds = time.monotonic() - self._t0
        return r

    def replay(self, inputs) -> CampaignReport:
        """Execute ``inputs`` in order instead of mutating; same accounting as ``run``."""
        self._t0 = time.monotonic()
        for data in inputs:
            self._run_one(bytes(data), None)
        r = self.report
        r.executions = self.execs
        r.p_vt = len(self.paths_vt)
        r.queue_size = len(self.queue)
        r.elapsed_seconds = time.monotonic() - self._t0
        return r

    def _loop(self):
        cfg = self.cfg
        for i, data in enumerate(cfg.initial_seeds):
            data = bytes(data[: cfg.max_input_len])
            raw, fired, terminated = self.compiled.run(data, cfg.step_budget, MAX_CALL_DEPTH)
            if fired:
                raise SeedTriggersTarget(i, fired)
        for data in cfg.initial_seeds:
            if self._exhausted():
                return
            self._run_one(bytes(data[: cfg.max_input_len]), None)
        if not self.queue:
            return
        ctx = MutationContext(self.datas, cfg.max_input_len)
        rng = self.rng
        sets = self.sets
        cursor = 0
        while not self._exhausted():
            self._refresh()
            seed = self.queue[cursor]
            cursor = (cursor + 1) % len(self.queue)
            n = self.energy(seed)
            for _ in range(n):
                stack = select_operator_stack(rng, self.fr(seed), sets)
                child = mutate(seed.data, stack, rng, ctx)
                self._run_one(child, seed.id)
                if self._exhausted():
                    return


def run_campaign(program: MicroProgram, spec: TargetSpec, tt: TargetTuple, dist: DistanceMap,
                 config: CampaignConfig, corpus_dir=None, stats_path=None) -> CampaignReport:
    return Campaign(program, spec, tt, dist, config, corpus_dir, stats_path).run()


def exhaustive_p_vt(program: MicroProgram, spec: TargetSpec, tt: TargetTuple, dist: DistanceMap,
                    inputs, step_budget: int = DEFAULT_STEP_BUDGET) -> CampaignReport:
    """Drive an explicit input enumeration through the campaign's accounting."""
    cfg = CampaignConfig(mode="coverage", budget_execs=1 << 62, step_budget=step_budget)
    return Campaign(program, spec, tt, dist, cfg).replay(inputs)
