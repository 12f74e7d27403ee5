"""Alternating precoder / RIS optimization with minorize-maximize steps."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channels import ChannelSet, effective_channels
from .errors import InfeasibleError, InfeasibleStartError, ValidationError
from .kernel import SolverOptions
from .model import (
    Allocation,
    CommonRateSplit,
    FeasibilitySet,
    NetworkConfig,
    PrecoderSet,
    RISPhases,
    StreamMode,
    validate_config,
)
from .rates import (
    LinkStatistics,
    fbl_rate,
    inverse_q,
    latency_threshold_nats,
    network_rates,
    user_power,
)
from .subproblems import (
    Design,
    ObjectiveKind,
    Performance,
    evaluate_performance,
    solve_maxmin_ee_W,
    solve_maxmin_rate_W,
    solve_ris_unitdisc,
    solve_ris_unitmod,
)
from .surrogates import DEGENERATE_DISPERSION, ExpansionPoint

_INIT_TAG = 17


@dataclass(frozen=True)
class Mode:
    """Composable baseline flags.

    ``ris`` is one of ``"optimized"``, ``"random"`` (phases drawn once) or
    ``"none"`` (RIS links removed).
    """

    rsma: bool = True
    ris: str = "optimized"
    shannon: bool = False
    single_stream: bool = False

    _TOKENS = {
        "rsma": {"rsma": True},
        "tin": {"rsma": False},
        "sdma": {"rsma": False},
        "noris": {"ris": "none"},
        "randomris": {"ris": "random"},
        "optris": {"ris": "optimized"},
        "shannon": {"shannon": True},
        "shannondesign": {"shannon": True},
        "singlestream": {"single_stream": True},
    }

    def __post_init__(self):
        if self.ris not in ("optimized", "random", "none"):
            raise ValueError(f"unknown RIS mode {self.ris!r}")

    @classmethod
    def parse(cls, text: str) -> "Mode":
        """Parse names such as ``"RSMA"``, ``"TIN+NoRIS"`` or ``"SingleStream"``."""
        kw = {}
        for tok in text.replace(",", "+").split("+"):
            key = tok.strip().lower().replace("-", "").replace("_", "")
            if not key:
                continue
            if key not in cls._TOKENS:
                raise ValueError(f"unknown mode token {tok!r}")
            kw.update(cls._TOKENS[key])
        return cls(**kw)

    @property
    def name(self) -> str:
        parts = ["RSMA" if self.rsma else "TIN"]
        if self.ris == "none":
            parts.append("NoRIS")
        elif self.ris == "random":
            parts.append("RandomRIS")
        if self.shannon:
            parts.append("ShannonDesign")
        if self.single_stream:
            parts.append("SingleStream")
        return "+".join(parts)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class OptimizerOptions:
    gamma1: float = 1e-4
    gamma2: float = 1e-3
    max_outer: int = 100
    objective_kind: ObjectiveKind = ObjectiveKind.RATE
    mode: Mode = Mode()
    ris_set: FeasibilitySet = FeasibilitySet.UNIT_DISC
    gda_iterations: int = 20
    delta0: float = 0.05
    delta_min: float = 1e-3
    repair_iterations: int = 10
    latency: bool = True
    timing: bool = True
    solver: SolverOptions = SolverOptions()

    def __post_init__(self):
        object.__setattr__(self, "objective_kind", ObjectiveKind(self.objective_kind))
        object.__setattr__(self, "ris_set", FeasibilitySet(self.ris_set))
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode.parse(self.mode))
        for name in ("gamma1", "gamma2", "delta0", "delta_min"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be > 0")
        if self.max_outer < 1 or self.gda_iterations < 1:
            raise ValidationError("max_outer", "iteration caps must be >= 1")


@dataclass
class ConvergenceTrace:
    """Outer-loop history; ``records`` rows are plain dicts (JSON friendly)."""

    records: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r["objective"] for r in self.records])

    def is_monotone(self, rtol: float = 1e-6) -> bool:
        obj = self.objectives
        if obj.size < 2:
            return True
        return bool(np.all(np.diff(obj) >= -rtol * np.maximum(np.abs(obj[:-1]), 1e-12)))


# ---------------------------------------------------------------------------
# Problem set-up helpers
# ---------------------------------------------------------------------------

def _design(cfg: NetworkConfig, opts: OptimizerOptions, kind: Optional[ObjectiveKind] = None,
            enforce_latency: bool = True) -> Design:
    r_th = latency_threshold_nats(cfg.n, cfg.omega, cfg.tau) if opts.latency else 0.0
    p_c = None
    if opts.mode.ris == "none" and cfg.M > 0:
        p_c = cfg.p_c - (cfg.M / cfg.L) * cfg.ris_power / cfg.K
        if p_c <= 0:
            raise ValidationError("ris_power", "no-RIS static power would be non-positive")
    return Design(kind or opts.objective_kind, rsma=opts.mode.rsma, r_th=r_th, p_c=p_c,
                  enforce_latency=enforce_latency)


def _q_factors(cfg: NetworkConfig, shannon: bool) -> tuple[float, float]:
    if shannon:
        return 0.0, 0.0
    return inverse_q(cfg.eps_c), inverse_q(cfg.eps_p)


def effective_channel_set(ch: ChannelSet, mode: Mode) -> ChannelSet:
    return ch.without_ris() if mode.ris == "none" else ch


def _stream_mode(mode: Mode) -> StreamMode:
    return StreamMode.SINGLE if mode.single_stream else StreamMode.FULL


def _random_phases(cfg: NetworkConfig, seed: int, tag: int, fs: FeasibilitySet) -> RISPhases:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag,)))
    return RISPhases.random(cfg.M, cfg.N_RIS, rng, fs)


def _phases_for(ris: RISPhases, fs: FeasibilitySet) -> RISPhases:
    return RISPhases(ris.upsilon, fs)


@dataclass
class _State:
    blocks: np.ndarray
    ris: RISPhases
    perf: Performance


def _perf(cfg, ch, blocks, ris, design, qc, qp) -> Performance:
    H = effective_channels(ch, ris.upsilon)
    return evaluate_performance(cfg, H, blocks, design, qc, qp)


def _allocation(cfg, state: _State, mode: Mode, kind: ObjectiveKind, trace=(), info=None):
    perf = state.perf
    rates = perf.user_rates
    ees = rates / perf.powers
    return Allocation(
        precoders=PrecoderSet.from_blocks(state.blocks, _stream_mode(mode)),
        ris=state.ris,
        split=CommonRateSplit(perf.t),
        rates=rates,
        ees=ees,
        objective=perf.objective,
        objective_kind=kind.value,
        trace=tuple(trace),
        info=dict(info or {}),
    )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def random_precoders(cfg: NetworkConfig, seed: int, mode: Mode = Mode(),
                     common_share: float = 0.5) -> np.ndarray:
    """Random precoders scaled so every BS spends exactly its budget.

    With rate splitting the common precoder receives ``common_share`` of the
    budget so that the common stream starts with a positive rate.
    """
    d = 1 if mode.single_stream else cfg.N_BS
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_INIT_TAG,)))
    shape = (cfg.L, cfg.K + 1, cfg.N_BS, d)
    W = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    P = cfg.P_array[:, None, None]
    priv = np.sum(np.abs(W[:, :-1]) ** 2, axis=(1, 2, 3))[:, None, None, None]
    if mode.rsma:
        com = np.sum(np.abs(W[:, -1]) ** 2, axis=(1, 2))[:, None, None]
        W[:, :-1] *= np.sqrt((1.0 - common_share) * P[..., None] / priv)
        W[:, -1] *= np.sqrt(common_share * P / com)
    else:
        W[:, -1] = 0.0
        W[:, :-1] *= np.sqrt(P[..., None] / priv)
    return W


def initialize(cfg: NetworkConfig, ch: ChannelSet, seed: int = 0,
               opts: OptimizerOptions = OptimizerOptions()) -> Allocation:
    """Random feasible starting point.

    When the latency threshold is violated, up to ``opts.repair_iterations``
    max-min-rate rounds (latency constraints dropped) are run until it holds.
    """
    validate_config(cfg)
    mode = opts.mode
    ch = effective_channel_set(ch, mode)
    blocks = random_precoders(cfg, seed, mode)
    if ch.M == 0:
        ris = RISPhases(np.zeros((0, cfg.N_RIS if cfg.M else 0), complex), opts.ris_set)
    else:
        # random-RIS runs keep exactly the phases an optimized run starts from
        ris = _random_phases(cfg, seed, _INIT_TAG, opts.ris_set)
    qc, qp = _q_factors(cfg, mode.shannon)
    design = _design(cfg, opts)
    state = _State(blocks, ris, _perf(cfg, ch, blocks, ris, design, qc, qp))
    repairs = 0
    if not state.perf.latency_ok:
        rate_opts = replace(opts, objective_kind=ObjectiveKind.RATE)
        repair = _design(cfg, rate_opts, ObjectiveKind.RATE, enforce_latency=False)
        for repairs in range(1, opts.repair_iterations + 1):
            state = _outer_step(cfg, ch, state, rate_opts, repair, qc, qp, opts.delta0, {})
            state.perf = _perf(cfg, ch, state.blocks, state.ris, design, qc, qp)
            if state.perf.latency_ok:
                break
        if not state.perf.latency_ok:
            raise InfeasibleStartError(
                f"latency threshold not reached after {opts.repair_iterations} repair iterations")
    return _allocation(cfg, state, mode, opts.objective_kind,
                       info={"repair_iterations": repairs, "seed": seed})


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def _silence_weak(cfg, ch, state: _State, design: Design, smode, qc, qp, rec: dict) -> _State:
    """Set private streams whose dispersion is below the surrogate floor to zero.

    Kept only when the true objective does not drop; the zeroed streams are then
    held at zero by the precoder update.
    """
    exp = ExpansionPoint.build(cfg, ch, PrecoderSet.from_blocks(state.blocks, smode), state.ris,
                               n=cfg.n)
    K = cfg.K
    weak = (exp.zeta_p < DEGENERATE_DISPERSION) & np.any(state.blocks[:, :K] != 0, axis=(2, 3))
    if not np.any(weak):
        return state
    blocks = np.array(state.blocks)
    blocks[:, :K][weak] = 0.0
    perf = _perf(cfg, ch, blocks, state.ris, design, qc, qp)
    if perf.objective < state.perf.objective or (design.enforce_latency and not perf.latency_ok
                                                 and state.perf.latency_ok):
        return state
    rec["silenced"] = int(np.sum(weak))
    return _State(blocks, state.ris, perf)


def _outer_step(cfg, ch, state: _State, opts: OptimizerOptions, design: Design, qc, qp,
                delta: float, rec: dict) -> _State:
    """One precoder update followed by one RIS update; never decreases the objective."""
    mode = opts.mode
    n = cfg.n
    smode = _stream_mode(mode)
    if not mode.shannon:
        state = _silence_weak(cfg, ch, state, design, smode, qc, qp, rec)
    # precoder update
    exp = ExpansionPoint.build(cfg, ch, PrecoderSet.from_blocks(state.blocks, smode), state.ris,
                               shannon=mode.shannon, n=n)
    if design.kind is ObjectiveKind.RATE:
        wu = solve_maxmin_rate_W(exp, cfg, design.r_th, opts.solver, design=design)
    else:
        wu = solve_maxmin_ee_W(exp, cfg, design.r_th, opts.solver, design=design,
                               gamma2=opts.gamma2, max_iter=opts.gda_iterations)
    rec["newton_W"] = wu.newton_steps
    rec["mu_trace"] = list(wu.mu_trace)
    blocks = np.array(wu.precoders.blocks)
    perf = _perf(cfg, ch, blocks, state.ris, design, qc, qp)
    rec["objective_W"] = perf.objective
    if perf.objective < state.perf.objective or (design.enforce_latency and not perf.latency_ok
                                                 and state.perf.latency_ok):
        rec["reverted_W"] = True
        blocks, perf = state.blocks, state.perf
    state = _State(blocks, state.ris, perf)

    # RIS update
    if mode.ris != "optimized" or ch.M == 0:
        rec["objective_ris"] = state.perf.objective
        return state
    exp = ExpansionPoint.build(cfg, ch, PrecoderSet.from_blocks(state.blocks, smode), state.ris,
                               shannon=mode.shannon, n=n)
    if opts.ris_set is FeasibilitySet.UNIT_MODULUS:
        ru = solve_ris_unitmod(exp, cfg, design.kind, delta, opts.solver, design=design)
        rec["ris_accepted"] = bool(ru.accepted)
        rec["ris_modulus_dev"] = float(np.max(np.abs(np.abs(ru.ris.upsilon) - 1.0)))
    else:
        ru = solve_ris_unitdisc(exp, cfg, design.kind, opts.solver, design=design)
    rec["newton_ris"] = ru.newton_steps
    perf = _perf(cfg, ch, state.blocks, ru.ris, design, qc, qp)
    rec["objective_ris"] = perf.objective
    if perf.objective < state.perf.objective or (design.enforce_latency and not perf.latency_ok
                                                 and state.perf.latency_ok):
        rec["reverted_ris"] = True
        return state
    return _State(state.blocks, _phases_for(ru.ris, opts.ris_set), perf)


def optimize(cfg: NetworkConfig, ch: ChannelSet, opts: OptimizerOptions = OptimizerOptions(),
             seed: int = 0, start: Optional[Allocation] = None) -> Allocation:
    """Alternate precoder and RIS updates until the relative gain drops below ``gamma1``."""
    validate_config(cfg)
    mode = opts.mode
    ch_used = effective_channel_set(ch, mode)
    qc, qp = _q_factors(cfg, mode.shannon)
    design = _design(cfg, opts)
    alloc0 = initialize(cfg, ch, seed, opts) if start is None else start
    blocks = np.array(alloc0.precoders.blocks)
    ris = _phases_for(alloc0.ris, opts.ris_set) if alloc0.ris.upsilon.size else alloc0.ris
    state = _State(blocks, ris, _perf(cfg, ch_used, blocks, ris, design, qc, qp))
    trace = ConvergenceTrace()
    trace.records.append({"iteration": 0, "objective": state.perf.objective, "wall_ms": 0.0})
    delta = opts.delta0
    t_start = time.perf_counter()
    trace.stop_reason = "max_outer"
    for it in range(1, opts.max_outer + 1):
        rec = {"iteration": it, "delta": delta}
        prev = state.perf.objective
        state = _outer_step(cfg, ch_used, state, opts, design, qc, qp, delta, rec)
        rec["objective"] = state.perf.objective
        rec["wall_ms"] = 1e3 * (time.perf_counter() - t_start) if opts.timing else 0.0
        trace.records.append(rec)
        gain = (state.perf.objective - prev) / max(abs(prev), 1e-12)
        if gain < opts.gamma1:
            trace.stop_reason = "gamma1"
            break
        delta = max(delta / 2.0, opts.delta_min)
    info = {
        "mode": mode.name,
        "ris_set": opts.ris_set.value,
        "metric": "shannon" if mode.shannon else "fbl",
        "stop_reason": trace.stop_reason,
        "iterations": len(trace.records) - 1,
        "seed": seed,
        "r_th_nats": design.r_th,
        "static_power": design.static_power(cfg),
        "repair_iterations": alloc0.info.get("repair_iterations", 0),
    }
    return _allocation(cfg, state, mode, opts.objective_kind, trace.records, info)


# ---------------------------------------------------------------------------
# Audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    rates: np.ndarray          # clamped per-user rates (nats)
    raw_rates: np.ndarray
    private_rates: np.ndarray
    common_rates: np.ndarray   # per-cell transmittable common rate, raw
    ees: np.ndarray
    objective: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def evaluate_allocation(cfg: NetworkConfig, ch: ChannelSet, alloc: Allocation,
                        shannon: Optional[bool] = None, tol: float = 1e-6,
                        r_th: Optional[float] = None, p_c: Optional[float] = None) -> AuditReport:
    """Recompute every rate from scratch and list violated constraints.

    ``shannon`` defaults to the metric recorded in ``alloc.info``.
    """
    if shannon is None:
        shannon = alloc.info.get("metric") == "shannon"
    if r_th is None:
        r_th = float(alloc.info.get("r_th_nats", latency_threshold_nats(cfg.n, cfg.omega, cfg.tau)))
    if p_c is None:
        p_c = float(alloc.info.get("static_power", cfg.p_c))
    ups = alloc.ris.upsilon
    ch_used = ch.without_ris() if ups.size == 0 else ch
    H = effective_channels(ch_used, ups if ups.size else None)
    blocks = alloc.precoders.blocks
    qc, qp = _q_factors(cfg, shannon)
    nr = network_rates(H, blocks, cfg.sigma2, cfg.n, qc, qp)
    t = np.asarray(alloc.split.t)
    raw = nr.r_p + t
    violations = []
    if np.any(t < -tol):
        violations.append("negative common split")
    rc_min = nr.r_c.min(axis=1)
    for l in range(cfg.L):
        if t[l].sum() > max(rc_min[l], 0.0) + tol:
            violations.append(f"decodability cell {l}: sum t = {t[l].sum():.3e} > r_c = {rc_min[l]:.3e}")
        pw = float(np.sum(np.abs(blocks[l]) ** 2))
        if pw > cfg.P * (1 + tol):
            violations.append(f"power cell {l}: {pw:.6g} > {cfg.P:.6g}")
    if r_th > 0 and np.any(raw < r_th - tol):
        violations.append(f"latency: min rate {raw.min():.3e} < {r_th:.3e}")
    if ups.size:
        mod = np.abs(ups)
        if alloc.ris.feasibility_set is FeasibilitySet.UNIT_MODULUS:
            if np.max(np.abs(mod - 1)) > 1e-12:
                violations.append("unit modulus")
        elif np.max(mod) > 1 + 1e-12:
            violations.append("unit disc")
    pw_users = user_power(blocks, cfg, p_c)
    ees = raw / pw_users
    if alloc.objective_kind == ObjectiveKind.EE.value:
        obj = float(np.min(ees / cfg.lam_array))
    else:
        obj = float(np.min(raw / cfg.alpha_array))
    if abs(obj - alloc.objective) > tol * max(1.0, abs(obj)):
        violations.append(f"objective mismatch: {alloc.objective:.9g} vs {obj:.9g}")
    return AuditReport(np.maximum(raw, 0.0), raw, nr.r_p, rc_min, ees, obj, violations)


# ---------------------------------------------------------------------------
# Single-stream closed form
# ---------------------------------------------------------------------------

def single_stream_rate(ch: ChannelSet, ris: RISPhases, w_common: np.ndarray, w_private: np.ndarray,
                       l: int, k: int, cfg: NetworkConfig, which: str = "common") -> float:
    """Rate of user ``(l, k)`` for one-column precoders via the determinant identity.

    ``ln|I + D^{-1} h h^H| = ln(1 + h^H D^{-1} h)`` and
    ``2 Tr(h h^H (D + h h^H)^{-1}) = 2 s / (1 + s)`` with ``s = h^H D^{-1} h``.
    """
    H = effective_channels(ch, ris.upsilon if ris.upsilon.size else None)
    w_common = np.asarray(w_common, complex).reshape(cfg.L, cfg.N_BS)
    w_private = np.asarray(w_private, complex).reshape(cfg.L, cfg.K, cfg.N_BS)
    N_u = H.shape[3]
    Dc = cfg.sigma2 * np.eye(N_u, dtype=complex)
    for i in range(cfg.L):
        for j in range(cfg.K):
            v = H[l, k, i] @ w_private[i, j]
            Dc += np.outer(v, v.conj())
        if i != l:
            v = H[l, k, i] @ w_common[i]
            Dc += np.outer(v, v.conj())
    if which == "common":
        h = H[l, k, l] @ w_common[l]
        D, eps = Dc, cfg.eps_c
    elif which == "private":
        h = H[l, k, l] @ w_private[l, k]
        D, eps = Dc - np.outer(h, h.conj()), cfg.eps_p
    else:
        raise ValueError("which must be 'common' or 'private'")
    s = float(np.real(h.conj() @ np.linalg.solve(D, h)))
    if s <= 0:
        return 0.0
    zeta = 2.0 * s / (1.0 + s)
    return float(np.log1p(s) - inverse_q(eps) * np.sqrt(zeta / cfg.n))


def general_rate(ch, ris, precoders: PrecoderSet, l, k, cfg, which="common") -> float:
    """Same quantity through the matrix formulas (cross-check helper)."""
    from .rates import interference_covariances
    D, D_c, S, S_c = interference_covariances(ch, ris, precoders, l, k, cfg.sigma2)
    if which == "common":
        return fbl_rate(LinkStatistics(S_c, D_c, cfg.sigma2), cfg.n, cfg.eps_c).fbl
    return fbl_rate(LinkStatistics(S, D, cfg.sigma2), cfg.n, cfg.eps_p).fbl


__all__ = [
    "AuditReport",
    "ConvergenceTrace",
    "InfeasibleError",
    "Mode",
    "OptimizerOptions",
    "evaluate_allocation",
    "initialize",
    "optimize",
    "random_precoders",
    "single_stream_rate",
]
