"""Scenario configuration, multi-trial sweeps and result files."""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from earlyqnet import __version__
from earlyqnet.controller import Controller, Request, RequestKind
from earlyqnet.devents import Simulator
from earlyqnet.distengine import GHZ_LOCAL_FIDELITY, MemoryParams, RequestRunner, SwapPolicy
from earlyqnet.linkmodel import LinkParams
from earlyqnet.netmodel import default_topology

SCENARIOS = ("example2_bipartite", "example3_ghz")
HOUR = 3600.0
IDEAL_T = 1e12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation setting. Field names are the usual parameter symbols with units."""

    scenario: str = "example2_bipartite"
    V: float = 1.0
    s_q: float = 1.0
    L_km: float = 50.0
    p_L_dB_per_km: float = 0.2
    s_p: float = 1.0
    d_e: float = 1.0
    p_dc: float = 0.0
    T1_s: float = 10 * HOUR
    T2_s: float = 1.0
    cutoff_s: float = math.inf
    N: int = 2
    quantity: int = 2
    ghz_fidelity: float = GHZ_LOCAL_FIDELITY
    deadline_s: float = math.inf

    def validate(self) -> list[str]:
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        for name in ("V", "s_q", "d_e", "p_dc", "ghz_fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name}={v} outside [0, 1]")
        if not 0.0 < self.s_p <= 1.0:
            problems.append(f"s_p={self.s_p} outside (0, 1]")
        if self.d_e <= 0:
            problems.append("d_e must be positive")
        if not self.L_km > 0:
            problems.append(f"L_km={self.L_km} must be positive")
        if self.p_L_dB_per_km < 0:
            problems.append("p_L_dB_per_km must be non-negative")
        if self.T1_s <= 0 or self.T2_s <= 0:
            problems.append("T1_s and T2_s must be positive")
        elif self.T2_s > 2 * self.T1_s:
            problems.append(f"T2_s={self.T2_s} exceeds 2*T1_s")
        if self.cutoff_s < 0:
            problems.append("cutoff_s must be non-negative")
        if int(self.N) != self.N or self.N < 1:
            problems.append(f"N={self.N} must be a positive integer")
        if int(self.quantity) != self.quantity or self.quantity < 1:
            problems.append(f"quantity={self.quantity} must be a positive integer")
        return problems

    def link(self) -> LinkParams:
        return LinkParams(self.L_km, self.p_L_dB_per_km, self.V, self.d_e, self.p_dc, self.s_p, self.s_q)

    def memory(self) -> MemoryParams:
        return MemoryParams(self.T1_s, self.T2_s)

    def request(self) -> Request:
        if self.scenario == "example3_ghz":
            return Request("A.1", ("B.2", "D.1"), RequestKind.REMOTE_GHZ, int(self.quantity))
        return Request("A.1", ("C.1",), RequestKind.REMOTE_BIPARTITE, int(self.quantity))


PARAM_NAMES = tuple(f.name for f in fields(ScenarioConfig) if f.name != "scenario")


@dataclass(frozen=True)
class SweepConfig:
    base: ScenarioConfig = ScenarioConfig()
    sweep: dict[str, tuple] = field(default_factory=dict)
    trials: int = 100
    seed: int = 0
    name: str = "custom"
    per_index: bool = False
    log_time: bool = False

    def validate(self) -> list[str]:
        problems = []
        if self.trials < 1:
            problems.append("trials must be at least 1")
        for name, values in self.sweep.items():
            if name not in PARAM_NAMES:
                problems.append(f"unknown swept parameter {name!r}")
            elif not values:
                problems.append(f"empty range for {name}")
        if problems:
            return problems
        for point in self.points():
            problems.extend(p for p in point.validate() if p not in problems)
        return problems

    def points(self) -> list[ScenarioConfig]:
        names = list(self.sweep)
        return [replace(self.base, **dict(zip(names, combo))) for combo in itertools.product(*self.sweep.values())]


def grid(lo: float, hi: float, n: int = 11) -> tuple[float, ...]:
    return tuple(float(x) for x in np.round(np.linspace(lo, hi, n), 10))


# -- trials ----------------------------------------------------------------


@dataclass
class TrialResult:
    seed: int
    fidelities: list[float]
    completion_times: list[float]
    setup_time: float
    established: bool
    finished: bool

    @property
    def fidelity(self) -> float:
        return float(np.mean(self.fidelities)) if self.fidelities else math.nan

    @property
    def completion_time(self) -> float:
        return self.completion_times[-1] if self.finished else math.nan


def trial_seed(root: int, point: int, trial: int) -> int:
    return int(np.random.SeedSequence([root, point, trial]).generate_state(1, np.uint64)[0])


def run_trial(cfg: ScenarioConfig, seed: int, trace: list | None = None) -> TrialResult:
    """Connection setup followed by entanglement distribution, from t=0."""
    topo = default_topology(cfg.L_km)
    sim = Simulator(seed, distance=topo.classical_distance, trace=trace is not None)
    ctl = Controller(sim, topo, trace=trace is not None)
    outcome = ctl.establish_connection(cfg.request(), N=int(cfg.N), cutoff=cfg.cutoff_s)
    if not outcome.established:
        return TrialResult(seed, [], [], sim.now, False, False)
    plan = outcome.plan
    runner = RequestRunner(
        sim, topo, plan, cfg.link(), cfg.memory(), SwapPolicy(cfg.cutoff_s, cfg.s_p, cfg.s_q),
        ghz_fidelity=cfg.ghz_fidelity, trace=trace is not None,
    )
    delivered = runner.run(cfg.deadline_s)
    ctl.complete(plan)
    if trace is not None:
        trace.extend({"kind": "message", **m} for m in ctl.messages)
        trace.extend({"kind": "event", "time": t, "label": l} for t, l in sim.trace)
        trace.extend({"kind": "quantum", **e} for e in runner.log)
    return TrialResult(
        seed,
        [d.fidelity for d in delivered],
        [d.completion_time for d in delivered],
        plan.established_time,
        True,
        len(delivered) == cfg.quantity,
    )


def _run_point(args: tuple[ScenarioConfig, int, int, int]) -> list[TrialResult]:
    cfg, root, point, trials = args
    return [run_trial(cfg, trial_seed(root, point, t)) for t in range(trials)]


# -- statistics ------------------------------------------------------------


def _mean_std(xs: list[float]) -> tuple[float, float]:
    a = np.asarray([x for x in xs if not math.isnan(x)], dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


@dataclass
class PointSummary:
    params: dict[str, Any]
    fidelity_mean: float
    fidelity_std: float
    completion_time_mean_s: float
    completion_time_std_s: float
    trials: int
    per_index: list[dict[str, float]] = field(default_factory=list)


def summarize(params: dict[str, Any], results: list[TrialResult]) -> PointSummary:
    f_mean, f_std = _mean_std([r.fidelity for r in results])
    t_mean, t_std = _mean_std([r.completion_time for r in results])
    per_index = []
    width = max((len(r.fidelities) for r in results), default=0)
    for i in range(width):
        fi = [r.fidelities[i] for r in results if len(r.fidelities) > i]
        ti = [r.completion_times[i] for r in results if len(r.completion_times) > i]
        fm, fs = _mean_std(fi)
        tm, ts = _mean_std(ti)
        per_index.append({"index": i, "fidelity_mean": fm, "fidelity_std": fs,
                          "completion_time_mean_s": tm, "completion_time_std_s": ts, "trials": len(fi)})
    return PointSummary(params, f_mean, f_std, t_mean, t_std, len(results), per_index)


@dataclass
class SweepResult:
    config: SweepConfig
    points: list[PointSummary]
    raw: list[list[TrialResult]]


def run_sweep(config: SweepConfig, workers: int = 1) -> SweepResult:
    problems = config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    cfgs = config.points()
    jobs = [(cfg, config.seed, i, config.trials) for i, cfg in enumerate(cfgs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            raw = list(pool.map(_run_point, jobs))
    else:
        raw = [_run_point(j) for j in jobs]
    names = list(config.sweep)
    points = [
        summarize({n: getattr(cfg, n) for n in names}, results) for cfg, results in zip(cfgs, raw)
    ]
    return SweepResult(config, points, raw)


# -- presets ---------------------------------------------------------------


def _base(**kw) -> ScenarioConfig:
    return replace(ScenarioConfig(), **kw)


PRESETS: dict[str, SweepConfig] = {
    "fig5a": SweepConfig(
        _base(L_km=50, p_L_dB_per_km=0.2, s_p=1, d_e=1, N=2),
        {"V": grid(0.9, 1.0), "s_q": grid(0.8, 1.0)}, name="fig5a",
    ),
    "fig5b": SweepConfig(
        _base(V=1, s_q=1, s_p=1, d_e=1, N=2),
        {"L_km": grid(10, 190), "p_L_dB_per_km": grid(0.0, 0.3)}, name="fig5b", log_time=True,
    ),
    "fig5c": SweepConfig(
        _base(V=1, s_q=1, L_km=50, p_L_dB_per_km=0.2, N=2),
        {"s_p": grid(0.5, 1.0), "d_e": grid(0.1, 1.0)}, name="fig5c",
    ),
    "fig5d": SweepConfig(
        _base(V=1, s_q=1, p_L_dB_per_km=0.2, s_p=1, d_e=1, N=2),
        {"L_km": grid(10, 190), "T2_s": grid(1, 100)}, name="fig5d",
    ),
    "fig6": SweepConfig(
        _base(V=1, s_q=1, p_L_dB_per_km=0.2, s_p=1, N=2),
        {"L_km": (50.0, 100.0), "d_e": (0.2, 0.5, 1.0), "cutoff_s": grid(0.1, 1.0, 10)}, name="fig6",
    ),
    "fig7": SweepConfig(
        _base(scenario="example3_ghz", V=1, s_q=1, L_km=50, p_L_dB_per_km=0.2, s_p=1, quantity=10),
        {"d_e": (0.2, 0.5, 0.7, 1.0), "N": tuple(range(1, 102, 10))}, name="fig7",
    ),
    "fig8": SweepConfig(
        _base(scenario="example3_ghz", V=1, s_q=1, L_km=50, p_L_dB_per_km=0.2, s_p=1, d_e=0.2, quantity=10),
        {"N": (1, 6, 11, 16)}, name="fig8", per_index=True,
    ),
}


# -- config files ----------------------------------------------------------


def _number(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    return v


def _coerce(name: str, value):
    if name == "scenario":
        return value
    if name in ("N", "quantity") and float(value) == int(float(value)):
        return int(float(value))
    return float(value)


def load_config(text: str) -> SweepConfig:
    """Parse a YAML scenario file.

    Top-level keys are parameter names, ``trials``, ``seed`` and
    ``scenario``; a list value sweeps that parameter. An optional
    ``preset`` key starts from a named preset.
    """
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc = dict(doc)
    start = PRESETS[doc.pop("preset")] if "preset" in doc else SweepConfig()
    base_kw, sweep = {}, dict(start.sweep)
    trials = int(doc.pop("trials", start.trials))
    seed = int(doc.pop("seed", start.seed))
    per_index = bool(doc.pop("per_index", start.per_index))
    for key, value in doc.items():
        if key == "scenario":
            base_kw[key] = value
        elif key in PARAM_NAMES:
            if isinstance(value, list):
                sweep[key] = tuple(_number(v) for v in value)
            else:
                sweep.pop(key, None)
                base_kw[key] = _number(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        base = replace(start.base, **{k: _coerce(k, v) for k, v in base_kw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return SweepConfig(base, sweep, trials, seed, start.name, per_index, start.log_time)


# -- output ----------------------------------------------------------------

STAT_COLUMNS = ("fidelity_mean", "fidelity_std", "completion_time_mean_s", "completion_time_std_s", "trials")


def result_rows(result: SweepResult) -> tuple[list[str], list[dict[str, Any]]]:
    names = list(result.config.sweep)
    rows = []
    if result.config.per_index:
        header = names + ["index", *STAT_COLUMNS]
        for p in result.points:
            for row in p.per_index:
                rows.append({**p.params, **row})
    else:
        header = names + list(STAT_COLUMNS)
        for p in result.points:
            rows.append({**p.params, **{c: getattr(p, c) for c in STAT_COLUMNS}})
    if result.config.log_time:
        header.append("completion_time_log10_s")
        for row in rows:
            t = row["completion_time_mean_s"]
            row["completion_time_log10_s"] = math.log10(t) if t > 0 else math.nan
    return header, rows


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def emit_results(result: SweepResult, fmt: str, destination: str | Path) -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    header, rows = result_rows(result)
    path = Path(destination)
    try:
        with path.open("w", newline="") as fh:
            if fmt == "csv":
                writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
            else:
                cfg = result.config
                doc = {
                    "metadata": {
                        "tool": "earlyqnet",
                        "version": __version__,
                        "preset": cfg.name,
                        "seed": cfg.seed,
                        "trials": cfg.trials,
                        "base": {k: _jsonable(v) for k, v in asdict(cfg.base).items()},
                        "sweep": {k: [_jsonable(x) for x in v] for k, v in cfg.sweep.items()},
                    },
                    "columns": header,
                    "rows": [{k: _jsonable(row[k]) for k in header} for row in rows],
                }
                json.dump(doc, fh, indent=2)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror}") from exc


def dump_raw(result: SweepResult, destination: str | Path) -> None:
    """Per-trial results as JSON lines, one per (point, trial)."""
    with Path(destination).open("w") as fh:
        for point, trials in zip(result.points, result.raw):
            for i, r in enumerate(trials):
                fh.write(json.dumps({
                    "params": point.params, "trial": i, "seed": r.seed,
                    "fidelities": r.fidelities, "completion_times": r.completion_times,
                    "setup_time": r.setup_time, "finished": r.finished,
                }) + "\n")
