"""Scenario presets, paired Monte Carlo sweeps, result emission and timing."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .channels import draw_channels
from .errors import RsmarisError, ValidationError
from .kernel import SolverOptions
from .model import LN2, FeasibilitySet, NetworkConfig, PrecoderSet, db_to_linear, validate_config
from .optimizer import (
    Mode,
    OptimizerOptions,
    _design,
    _random_phases,
    _INIT_TAG,
    evaluate_allocation,
    optimize,
    random_precoders,
)
from .subproblems import ObjectiveKind, solve_maxmin_rate_W, solve_ris_unitdisc
from .surrogates import ExpansionPoint

SWEEP_PARAMS = ("P_dB", "n", "eps", "K", "N_u", "p_c")
COLUMNS = ("sweep_param", "value", "mode", "seed", "objective_bits", "iterations",
           "wall_ms", "status")
DESK_N_RIS = 8

_SCENARIOS = {
    "scenario1": dict(L=2, K=3, M=2, N_BS=2, N_u=2, N_RIS=20, P_dB=10.0, eps=1e-5, n=256),
    "scenario2": dict(L=1, K=3, M=1, N_BS=2, N_u=2, N_RIS=20, P_dB=10.0, eps=1e-5, n=256),
}


def scenario(name: str, desk: bool = False, **overrides) -> NetworkConfig:
    """Preset configuration; ``desk=True`` shrinks each RIS to ``DESK_N_RIS`` elements."""
    key = name.lower().replace("_", "").replace(" ", "")
    if key not in _SCENARIOS:
        raise ValidationError("scenario", f"unknown preset {name!r}")
    d = dict(_SCENARIOS[key])
    if desk:
        d["N_RIS"] = DESK_N_RIS
    d.update(overrides)
    return validate_config(NetworkConfig.from_dict(d))


def load_config(path: str) -> NetworkConfig:
    with open(path) as fh:
        return validate_config(NetworkConfig.from_dict(json.load(fh)))


def apply_value(cfg: NetworkConfig, param: str, value: float) -> NetworkConfig:
    """Copy of ``cfg`` with one swept parameter set."""
    if param == "P_dB":
        return cfg.replace(P=db_to_linear(float(value)))
    if param == "n":
        return cfg.replace(n=int(value))
    if param == "eps":
        return cfg.replace(eps_c=float(value) / 2.0, eps_p=float(value) / 2.0)
    if param == "K":
        # per-user weights are rebuilt for the new user count
        return cfg.replace(K=int(value), alpha=None, lam=None)
    if param == "N_u":
        return cfg.replace(N_u=int(value))
    if param == "p_c":
        return cfg.replace(p_c=float(value))
    raise ValidationError("param", f"must be one of {SWEEP_PARAMS}")


def trial_seed(master: int, trial: int) -> int:
    """Seed of one trial; shared by every mode and every swept value."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=(trial,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    trials: int = 20
    modes: tuple = ("RSMA", "TIN")
    base: str = "Scenario1"
    seed: int = 0
    desk: bool = True
    objective_kind: ObjectiveKind = ObjectiveKind.RATE
    ris_set: FeasibilitySet = FeasibilitySet.UNIT_DISC
    timing: bool = True
    max_outer: int = 100
    workers: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "modes", tuple(str(Mode.parse(m)) if isinstance(m, str)
                                                else str(m) for m in self.modes))
        object.__setattr__(self, "objective_kind", ObjectiveKind(self.objective_kind))
        object.__setattr__(self, "ris_set", FeasibilitySet(self.ris_set))
        if self.param not in SWEEP_PARAMS:
            raise ValidationError("param", f"must be one of {SWEEP_PARAMS}")
        if not self.values:
            raise ValidationError("values", "value list must be nonempty")
        if self.trials < 1:
            raise ValidationError("trials", "must be >= 1")
        if not self.modes:
            raise ValidationError("modes", "at least one mode is required")

    def base_config(self) -> NetworkConfig:
        if self.base.lower().replace("_", "") in _SCENARIOS:
            return scenario(self.base, desk=self.desk)
        return load_config(self.base)


@dataclass(frozen=True)
class ResultRow:
    sweep_param: str
    value: float
    mode: str
    seed: int
    objective_bits: float
    iterations: int
    wall_ms: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SweepResult:
    rows: list
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.ok]

    def table(self, value, mode) -> np.ndarray:
        """Objectives of one (value, mode) cell ordered by trial seed; NaN for failures."""
        rows = sorted((r for r in self.rows if r.value == value and r.mode == mode),
                      key=lambda r: r.seed)
        return np.array([r.objective_bits if r.ok else np.nan for r in rows])


def _run_trial(task) -> list:
    spec, cfg, value, seed = task
    out = []
    try:
        ch = draw_channels(cfg, seed=seed)
    except RsmarisError as exc:
        return [ResultRow(spec.param, value, m, seed, math.nan, 0, 0.0,
                          f"error:{type(exc).__name__}") for m in spec.modes]
    for m in spec.modes:
        opts = OptimizerOptions(mode=m, objective_kind=spec.objective_kind, ris_set=spec.ris_set,
                                timing=spec.timing, max_outer=spec.max_outer)
        t0 = time.perf_counter()
        try:
            alloc = optimize(cfg, ch, opts, seed=seed)
            audit = evaluate_allocation(cfg, ch, alloc)
            status = "ok" if audit.ok else "audit_failed"
            obj, its = alloc.objective / LN2, int(alloc.info["iterations"])
        except (RsmarisError, np.linalg.LinAlgError, FloatingPointError) as exc:
            status, obj, its = f"error:{type(exc).__name__}", math.nan, 0
        wall = 1e3 * (time.perf_counter() - t0) if spec.timing else 0.0
        out.append(ResultRow(spec.param, value, str(m), seed, float(obj), its, wall, status))
    return out


def worker_count(requested: Optional[int] = None) -> int:
    env = os.environ.get("RSMA_THREADS")
    n = requested or (int(env) if env else (os.cpu_count() or 1))
    return max(1, n)


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Paired Monte Carlo sweep; per-trial failures become rows, never exceptions."""
    base = spec.base_config()
    tasks = []
    for v in spec.values:
        cfg = validate_config(apply_value(base, spec.param, v))
        for t in range(spec.trials):
            tasks.append((spec, cfg, v, trial_seed(spec.seed, t)))
    workers = min(worker_count(spec.workers), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trial, tasks))
    else:
        chunks = [_run_trial(t) for t in tasks]
    order = {v: i for i, v in enumerate(spec.values)}
    morder = {m: i for i, m in enumerate(spec.modes)}
    rows = sorted((r for c in chunks for r in c),
                  key=lambda r: (order[r.value], r.seed, morder[r.mode]))
    return SweepResult(rows, summarize(rows), {"base": base.to_dict(), "spec": _spec_dict(spec)})


def _spec_dict(spec: SweepSpec) -> dict:
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d["values"] = list(spec.values)
    d["modes"] = list(spec.modes)
    d["objective_kind"] = spec.objective_kind.value
    d["ris_set"] = spec.ris_set.value
    return d


def summarize(rows: Sequence[ResultRow]) -> dict:
    """Per-point means and pairwise percentage gains, computed from ``rows`` alone.

    Gains use paired means: only trials where both modes succeeded count.
    """
    by = {}
    for r in rows:
        by.setdefault(r.value, {}).setdefault(r.mode, {})[r.seed] = r
    means, gains = [], []
    for v, modes in by.items():
        for m, trials in modes.items():
            ok = [r.objective_bits for r in trials.values() if r.ok]
            means.append({"value": v, "mode": m, "mean": float(np.mean(ok)) if ok else math.nan,
                          "ok": len(ok), "failed": len(trials) - len(ok)})
        names = list(modes)
        for a in names:
            for b in names:
                if a == b:
                    continue
                seeds = [s for s in modes[a] if s in modes[b] and modes[a][s].ok
                         and modes[b][s].ok]
                if not seeds:
                    continue
                ma = float(np.mean([modes[a][s].objective_bits for s in seeds]))
                mb = float(np.mean([modes[b][s].objective_bits for s in seeds]))
                diffs = [modes[a][s].objective_bits - modes[b][s].objective_bits for s in seeds]
                gains.append({"value": v, "a": a, "b": b, "paired": len(seeds),
                              "gain_pct": 100.0 * (ma - mb) / mb if mb else math.nan,
                              "median_diff": float(np.median(diffs))})
    return {"means": means, "gains": gains}


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def emit_results(table: Iterable[ResultRow], fmt: str, path: str,
                 config: Optional[dict] = None) -> str:
    """Write rows as CSV or JSON with a fixed column order; returns ``path``."""
    rows = list(table)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    elif fmt == "json":
        doc = {"columns": list(COLUMNS), "rows": [asdict(r) for r in rows],
               "config": config or {}}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, allow_nan=True)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def _parse_row(d: dict) -> ResultRow:
    return ResultRow(
        sweep_param=str(d["sweep_param"]),
        value=float(d["value"]),
        mode=str(d["mode"]),
        seed=int(d["seed"]),
        objective_bits=float(d["objective_bits"]),
        iterations=int(d["iterations"]),
        wall_ms=float(d["wall_ms"]),
        status=str(d["status"]),
    )


def read_results(path: str) -> list:
    """Inverse of ``emit_results`` for either format."""
    with open(path) as fh:
        if path.endswith(".json"):
            return [_parse_row(d) for d in json.load(fh)["rows"]]
        return [_parse_row(d) for d in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Complexity benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingRow:
    K: int
    N_BS: int
    N_RIS: int
    w_update_ms: float
    ris_update_ms: float
    w_newton: int
    ris_newton: int


def _time_updates(cfg: NetworkConfig, seed: int, repeats: int) -> TimingRow:
    ch = draw_channels(cfg, seed=seed)
    mode = Mode()
    opts = OptimizerOptions(latency=False)
    design = _design(cfg, opts)
    blocks = random_precoders(cfg, seed, mode)
    ris = _random_phases(cfg, seed, _INIT_TAG, cfg.feasibility_set)
    exp = ExpansionPoint.build(cfg, ch, PrecoderSet.from_blocks(blocks), ris, n=cfg.n)
    sopts = SolverOptions()
    tw, tr = [], []
    # the first pass warms caches and is discarded
    for _ in range(repeats + 1):
        t0 = time.perf_counter()
        wu = solve_maxmin_rate_W(exp, cfg, design.r_th, sopts, design=design)
        t1 = time.perf_counter()
        ru = solve_ris_unitdisc(exp, cfg, design.kind, sopts, design=design)
        t2 = time.perf_counter()
        tw.append(t1 - t0)
        tr.append(t2 - t1)
    return TimingRow(cfg.K, cfg.N_BS, cfg.N_RIS, 1e3 * float(np.median(tw[1:])),
                     1e3 * float(np.median(tr[1:])), wu.newton_steps, ru.newton_steps)


def benchmark_complexity(grid: Sequence[tuple], base: Optional[NetworkConfig] = None,
                         seed: int = 0, repeats: int = 3) -> dict:
    """Time one precoder and one RIS update per ``(K, N_BS, N_RIS)`` grid point.

    Returns the timing rows and log-log scaling exponents for every grid
    dimension that takes at least two distinct values.
    """
    base = scenario("Scenario1", desk=True) if base is None else base
    rows = []
    for K, N_BS, N_RIS in grid:
        cfg = validate_config(base.replace(K=int(K), N_BS=int(N_BS), N_RIS=int(N_RIS),
                                           alpha=None, lam=None))
        rows.append(_time_updates(cfg, seed, repeats))
    return {"rows": rows, "exponents": scaling_exponents(rows)}


def scaling_exponents(rows: Sequence[TimingRow]) -> dict:
    """Least-squares fit of ``log t`` against the logs of the varying dimensions."""
    dims = [d for d in ("K", "N_BS", "N_RIS") if len({getattr(r, d) for r in rows}) > 1]
    out = {}
    if not dims:
        return out
    X = np.column_stack([np.ones(len(rows))]
                        + [np.log([getattr(r, d) for r in rows]) for d in dims])
    for target in ("w_update_ms", "ris_update_ms"):
        y = np.log([max(getattr(r, target), 1e-9) for r in rows])
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        out[target] = {d: float(c) for d, c in zip(dims, coef[1:])}
    return out
