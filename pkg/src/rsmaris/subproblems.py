"""Convexified precoder and RIS subproblems built on the barrier kernel.

Decision vector layout: ``[Re z, Im z, t (active cells), s]`` where ``z`` is
either the stacked free precoder blocks or the flattened RIS coefficients and
``s`` is the epigraph variable (min weighted rate, or EE level).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channels import ChannelSet, effective_channels
from .errors import InfeasibleError, NonmonotoneError
from .kernel import (
    SolverOptions,
    SolverStatus,
    SubproblemSpec,
    complex_quadratic_to_real,
    solve_subproblem,
)
from .model import CommonRateSplit, FeasibilitySet, NetworkConfig, PrecoderSet, RISPhases
from .rates import NetworkRates, network_rates, user_power
from .surrogates import ExpansionPoint, SurrogateBank, common_bank, private_bank, silent_private

COMMON_ACTIVE_RATE = 1e-9
COMMON_ACTIVE_DISPERSION = 1e-12


class ObjectiveKind(str, enum.Enum):
    RATE = "max_min_rate"
    EE = "max_min_ee"

    @classmethod
    def _missing_(cls, value):
        # short spellings used on the command line and in configs
        return {"rate": cls.RATE, "ee": cls.EE}.get(str(value).lower())


@dataclass(frozen=True)
class Design:
    """Problem-level settings shared by every subproblem of one run.

    ``r_th`` is the latency threshold in nats (0 disables it) and ``p_c`` the
    static power entering the EE denominators.
    """

    kind: ObjectiveKind = ObjectiveKind.RATE
    rsma: bool = True
    r_th: float = 0.0
    p_c: Optional[float] = None
    enforce_latency: bool = True

    def static_power(self, cfg: NetworkConfig) -> float:
        return cfg.p_c if self.p_c is None else self.p_c


# ---------------------------------------------------------------------------
# True-objective evaluation and the optimal rate split
# ---------------------------------------------------------------------------

def water_fill_split(r_p: np.ndarray, budget: np.ndarray, weights: np.ndarray,
                     r_th: float = 0.0) -> tuple[np.ndarray, bool]:
    """Split each cell's common rate to maximize ``min_k (r_p + t) / w``.

    Solves, per cell, ``max min_k (r_p,k + t_k)/w_k`` s.t. ``t_k >= max(0, r_th - r_p,k)``
    and ``sum_k t_k <= budget``.  Returns ``(t, feasible)``; when the floors
    exceed the budget they are scaled down and ``feasible`` is False.
    """
    r_p = np.asarray(r_p, float)
    L, K = r_p.shape
    t = np.zeros((L, K))
    ok = True
    for l in range(L):
        C = max(float(budget[l]), 0.0)
        f = np.maximum(0.0, r_th - r_p[l]) if r_th > 0 else np.zeros(K)
        if f.sum() > C:
            ok = False
            t[l] = f * (C / f.sum()) if f.sum() > 0 else 0.0
            continue
        if C == 0.0:
            continue
        w = weights[l]
        bp = (r_p[l] + f) / w
        order = np.argsort(bp)
        # raise the water level v; users with bp < v are lifted to v*w
        v = None
        for idx in range(K):
            lifted = order[: idx + 1]
            rest = order[idx + 1:]
            # level at which lifted users exhaust the budget
            need = C - f[rest].sum() + r_p[l][lifted].sum()
            cand = need / w[lifted].sum()
            nxt = bp[order[idx + 1]] if idx + 1 < K else np.inf
            if cand <= nxt:
                v = cand
                break
        t[l] = np.maximum(f, v * w - r_p[l])
        # rounding guard: never exceed the budget
        excess = t[l].sum() - C
        if excess > 0:
            j = int(np.argmax(t[l] - f))
            t[l, j] = max(f[j], t[l, j] - excess)
    return t, ok


@dataclass(frozen=True)
class Performance:
    rates: NetworkRates
    active: np.ndarray      # (L,) common stream usable
    budget: np.ndarray      # (L,) common rate available for splitting
    t: np.ndarray
    user_rates: np.ndarray  # raw r_p + t
    weights: np.ndarray     # divisor of the objective
    powers: np.ndarray
    objective: float
    latency_ok: bool


def common_activity(rates: NetworkRates, rsma: bool, q_c: float) -> np.ndarray:
    """Cells whose common stream carries a positive rate and has a usable expansion."""
    if not rsma:
        return np.zeros(rates.r_c.shape[0], dtype=bool)
    active = rates.r_c.min(axis=1) > COMMON_ACTIVE_RATE
    if q_c > 0:
        active &= rates.zeta_c.min(axis=1) > COMMON_ACTIVE_DISPERSION
    return active


def objective_weights(cfg: NetworkConfig, blocks: np.ndarray, design: Design) -> np.ndarray:
    if design.kind is ObjectiveKind.RATE:
        return cfg.alpha_array
    return cfg.lam_array * user_power(blocks, cfg, design.static_power(cfg))


def evaluate_performance(cfg: NetworkConfig, H: np.ndarray, blocks: np.ndarray, design: Design,
                         q_c: float, q_p: float, n: Optional[float] = None,
                         rates: Optional[NetworkRates] = None) -> Performance:
    """True objective with the rate split re-optimized for the given rates."""
    nr = network_rates(H, blocks, cfg.sigma2, cfg.n if n is None else n, q_c, q_p) \
        if rates is None else rates
    active = common_activity(nr, design.rsma, q_c)
    budget = np.where(active, np.maximum(nr.r_c.min(axis=1), 0.0), 0.0)
    w = objective_weights(cfg, blocks, design)
    t, ok = water_fill_split(nr.r_p, budget, w, design.r_th)
    ur = nr.r_p + t
    obj = float(np.min(ur / w))
    lat_ok = bool(np.all(ur >= design.r_th - 1e-9)) if design.r_th > 0 else True
    pw = user_power(blocks, cfg, design.static_power(cfg))
    return Performance(nr, active, budget, t, ur, w, pw, obj, ok and lat_ok)


# ---------------------------------------------------------------------------
# Affine maps z -> received blocks and quadratic assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineBlocks:
    """``Y = Y0 + T z`` for every user and transmitted block."""

    Y0: np.ndarray  # (L, K, L, K+1, N_u, d)
    T: np.ndarray   # (L, K, L, K+1, N_u, d, nz)


def precoder_map(H: np.ndarray, free: np.ndarray, d: int) -> AffineBlocks:
    L, K, _, N_u, N_BS = H.shape
    idx = np.argwhere(free)
    nz = len(idx) * N_BS * d
    T = np.zeros((L, K, L, K + 1, N_u, d, nz), complex)
    for q, (i, j) in enumerate(idx):
        o = q * N_BS * d
        for c in range(d):
            view = T[:, :, i, j, :, c, :]
            view[..., o + c + d * np.arange(N_BS)] = H[:, :, i]
    return AffineBlocks(np.zeros(T.shape[:-1], complex), T)


def ris_map(ch: ChannelSet, blocks: np.ndarray) -> AffineBlocks:
    L, K = ch.F.shape[:2]
    Y0 = np.einsum("lkiab,ijbd->lkijad", ch.F, blocks, optimize=True)
    V = np.einsum("minb,ijbc->mijnc", ch.G_br, blocks, optimize=True)
    T = np.einsum("lkman,mijnc->lkijacmn", ch.G_ru, V, optimize=True)
    return AffineBlocks(Y0, T.reshape(T.shape[:6] + (-1,)))


@dataclass(frozen=True)
class QuadForm:
    """Per-user ``c + 2 Re(g^H z) - z^H P z``."""

    c: np.ndarray  # (L, K)
    g: np.ndarray  # (L, K, nz)
    P: np.ndarray  # (L, K, nz, nz)

    def values(self, z: np.ndarray) -> np.ndarray:
        lin = 2.0 * np.real(np.einsum("lkz,z->lk", self.g.conj(), z))
        quad = np.real(np.einsum("z,lkzw,w->lk", z.conj(), self.P, z))
        return self.c + lin - quad


def assemble(bank: SurrogateBank, amap: AffineBlocks) -> QuadForm:
    mask = bank.quad_mask[..., None, None]
    Y0, T = amap.Y0, amap.T
    trB = np.real(np.trace(bank.B, axis1=-2, axis2=-1))
    c = bank.a - bank.sigma2 * trB
    c = c + 2.0 * np.real(np.einsum("lkijac,lkijac->lk", bank.A, Y0.conj()))
    Y0m = Y0 * mask
    c = c - np.real(np.einsum("lkijac,lkab,lkijbc->lk", Y0m.conj(), bank.B, Y0, optimize=True))
    Tm = T * mask[..., None]
    g = np.einsum("lkijacz,lkijac->lkz", T.conj(), bank.A, optimize=True)
    g = g - np.einsum("lkijacz,lkab,lkijbc->lkz", Tm.conj(), bank.B, Y0, optimize=True)
    BT = np.einsum("lkab,lkijbcw->lkijacw", bank.B, T, optimize=True)
    P = np.einsum("lkijacz,lkijacw->lkzw", Tm.conj(), BT, optimize=True)
    P = 0.5 * (P + np.swapaxes(P, -1, -2).conj())
    return QuadForm(c, g, P)


# ---------------------------------------------------------------------------
# Generic max-min problem over one block of variables
# ---------------------------------------------------------------------------

@dataclass
class BlockProblem:
    priv: QuadForm
    comm: Optional[QuadForm]
    active: np.ndarray            # (L,) cells with a t variable
    weights: np.ndarray           # (L, K) coefficient of s
    z0: np.ndarray
    t0: np.ndarray                # (L, K)
    r_th: float = 0.0
    extra_c: Optional[np.ndarray] = None     # (L, K) constant subtracted in objective rows
    extra_diag: Optional[np.ndarray] = None  # (L, K, nz) nonnegative diagonal weights
    power_groups: Optional[np.ndarray] = None  # (nz,) cell index of each entry, or None
    power_caps: Optional[np.ndarray] = None
    disc: bool = False
    ccp_center: Optional[np.ndarray] = None
    ccp_delta: float = 0.0


@dataclass
class BlockSolution:
    z: np.ndarray
    t: np.ndarray
    s: float
    status: SolverStatus
    newton_steps: int
    used_warm_start: bool
    spec: SubproblemSpec = field(repr=False, default=None)


def _build_spec(bp: BlockProblem) -> tuple[SubproblemSpec, np.ndarray]:
    L, K = bp.weights.shape
    nz = bp.z0.shape[0]
    nr = 2 * nz
    t_cells = np.flatnonzero(bp.active)
    nt = len(t_cells) * K
    t_index = -np.ones((L, K), dtype=int)
    for q, l in enumerate(t_cells):
        t_index[l] = nr + q * K + np.arange(K)
    n = nr + nt + 1
    s_idx = n - 1

    bP, QP = complex_quadratic_to_real(bp.priv.g, bp.priv.P)
    rows_q0, rows_b, rows_Q = [], [], []

    def add(q0, b, Q):
        rows_q0.append(q0)
        rows_b.append(b)
        rows_Q.append(Q)

    for l in range(L):
        for k in range(K):
            b = np.zeros(n)
            b[:nr] = bP[l, k]
            if t_index[l, k] >= 0:
                b[t_index[l, k]] = 1.0
            Q = np.zeros((n, n))
            Q[:nr, :nr] = QP[l, k]
            q0 = bp.priv.c[l, k]
            if bp.r_th > 0:
                add(q0 - bp.r_th, b.copy(), Q.copy())
            bo = b.copy()
            bo[s_idx] = -bp.weights[l, k]
            Qo = Q
            if bp.extra_diag is not None:
                Qo = Q.copy()
                dg = np.concatenate([bp.extra_diag[l, k], bp.extra_diag[l, k]])
                Qo[np.arange(nr), np.arange(nr)] += dg
            add(q0 - (0.0 if bp.extra_c is None else bp.extra_c[l, k]), bo, Qo)
    if nt:
        bC, QC = complex_quadratic_to_real(bp.comm.g, bp.comm.P)
        for l in t_cells:
            for k in range(K):
                b = np.zeros(n)
                b[:nr] = bC[l, k]
                b[t_index[l]] = -1.0
                Q = np.zeros((n, n))
                Q[:nr, :nr] = QC[l, k]
                add(bp.comm.c[l, k], b, Q)

    d0, db, dq = [], [], []
    for j in range(nr, nr + nt):
        row = np.zeros(n)
        row[j] = 1.0
        d0.append(0.0)
        db.append(row)
        dq.append(np.zeros(n))
    if bp.power_groups is not None:
        for l, cap in enumerate(bp.power_caps):
            members = np.flatnonzero(bp.power_groups == l)
            if members.size == 0:
                continue
            row = np.zeros(n)
            row[members] = 1.0
            row[members + nz] = 1.0
            d0.append(float(cap))
            db.append(np.zeros(n))
            dq.append(row)
    if bp.disc:
        for j in range(nz):
            row = np.zeros(n)
            row[j] = row[j + nz] = 1.0
            d0.append(1.0)
            db.append(np.zeros(n))
            dq.append(row)
    if bp.ccp_center is not None:
        cen = bp.ccp_center
        for j in range(nz):
            row = np.zeros(n)
            row[j] = 2.0 * cen[j].real
            row[j + nz] = 2.0 * cen[j].imag
            d0.append(-abs(cen[j]) ** 2 - (1.0 - bp.ccp_delta))
            db.append(row)
            dq.append(np.zeros(n))

    x0 = np.zeros(n)
    x0[:nz] = bp.z0.real
    x0[nz:nr] = bp.z0.imag
    for l in t_cells:
        x0[t_index[l]] = bp.t0[l]
    c = np.zeros(n)
    c[s_idx] = 1.0
    spec = SubproblemSpec(
        c=c, q0=np.array(rows_q0), qb=np.array(rows_b), qQ=np.array(rows_Q),
        d0=np.array(d0), db=np.array(db).reshape(-1, n), dq=np.array(dq).reshape(-1, n),
        x0=x0, obj_index=s_idx,
        labels={"nz": nz, "nt": nt, "t_cells": t_cells.tolist()})
    # epigraph value of the warm start
    g = spec.constraint_values(x0)
    obj_rows = -spec.qb[:, s_idx] > 0
    x0[s_idx] = float(np.min(g[:len(rows_q0)][obj_rows] / -spec.qb[obj_rows, s_idx]))
    spec.x0 = x0
    return spec, t_index


def solve_block(bp: BlockProblem, opts: SolverOptions) -> BlockSolution:
    spec, t_index = _build_spec(bp)
    res = solve_subproblem(spec, opts)
    if not np.isfinite(res.objective):
        raise InfeasibleError("subproblem has no feasible point (latency threshold unreachable)")
    nz = bp.z0.shape[0]
    x = res.x
    z = x[:nz] + 1j * x[nz:2 * nz]
    L, K = bp.weights.shape
    t = np.zeros((L, K))
    for l in range(L):
        if t_index[l, 0] >= 0:
            t[l] = np.maximum(x[t_index[l]], 0.0)
    return BlockSolution(z, t, float(x[-1]), res.status, res.newton_steps,
                         res.used_warm_start, spec)


# ---------------------------------------------------------------------------
# Precoder and RIS updates
# ---------------------------------------------------------------------------

def _split_at(exp: ExpansionPoint, cfg: NetworkConfig, design: Design) -> Performance:
    return evaluate_performance(cfg, exp.H, exp.precoders.blocks, design, exp.q_c, exp.q_p,
                                n=exp.n, rates=exp.rates())


def _banks(exp: ExpansionPoint, active: np.ndarray):
    pb = private_bank(exp, strict=False)
    cb = common_bank(exp, active, strict=False) if np.any(active) else None
    return pb, cb


def _free_blocks(exp: ExpansionPoint, design: Design) -> np.ndarray:
    L, K1 = exp.precoders.blocks.shape[:2]
    free = np.ones((L, K1), dtype=bool)
    if not design.rsma:
        free[:, -1] = False
    if exp.q_p > 0:
        free[:, :-1] &= ~silent_private(exp)
    return free


@dataclass
class WUpdate:
    precoders: PrecoderSet
    split: CommonRateSplit
    value: float
    newton_steps: int
    mu_trace: list = field(default_factory=list)


def _precoder_problem(exp, cfg, design, perf):
    blocks = exp.precoders.blocks
    d = blocks.shape[-1]
    free = _free_blocks(exp, design)
    pb, cb = _banks(exp, perf.active)
    amap = precoder_map(exp.H, free, d)
    priv = assemble(pb, amap)
    comm = assemble(cb, amap) if cb is not None else None
    z0 = blocks[free].reshape(-1)
    groups = np.repeat(np.argwhere(free)[:, 0], blocks.shape[2] * d)
    r_th = design.r_th if design.enforce_latency else 0.0
    return free, BlockProblem(priv=priv, comm=comm, active=perf.active, weights=perf.weights,
                              z0=z0, t0=perf.t, r_th=r_th, power_groups=groups,
                              power_caps=cfg.P_array)


def _unpack_precoders(exp, free, z):
    blocks = np.array(exp.precoders.blocks)
    shape = blocks[free].shape
    blocks[free] = z.reshape(shape)
    return PrecoderSet.from_blocks(blocks, exp.precoders.stream_mode)


def solve_maxmin_rate_W(exp: ExpansionPoint, cfg: NetworkConfig, r_th: float = 0.0,
                        opts: SolverOptions = SolverOptions(), design: Optional[Design] = None) -> WUpdate:
    """Max-min weighted surrogate rate over all precoders (channels frozen)."""
    design = Design(ObjectiveKind.RATE, r_th=r_th) if design is None else design
    perf = _split_at(exp, cfg, design)
    free, bp = _precoder_problem(exp, cfg, design, perf)
    sol = solve_block(bp, opts)
    return WUpdate(_unpack_precoders(exp, free, sol.z), CommonRateSplit(sol.t), sol.s,
                   sol.newton_steps)


def solve_maxmin_ee_W(exp: ExpansionPoint, cfg: NetworkConfig, r_th: float = 0.0,
                      opts: SolverOptions = SolverOptions(), design: Optional[Design] = None,
                      gamma2: float = 1e-3, max_iter: int = 20) -> WUpdate:
    """Dinkelbach-type iterations for the max-min weighted surrogate EE.

    Each step maximizes ``min_lk (rate_lk - mu lam_lk p_lk)`` and then sets
    ``mu = min_lk rate_lk / (lam_lk p_lk)`` with the surrogate rates.
    """
    design = Design(ObjectiveKind.EE, r_th=r_th) if design is None else design
    perf = _split_at(exp, cfg, design)
    free, bp = _precoder_problem(exp, cfg, design, perf)
    L, K = perf.weights.shape
    lam = cfg.lam_array
    p_c = design.static_power(cfg)
    blocks0 = exp.precoders.blocks
    d, N_BS = blocks0.shape[-1], blocks0.shape[-2]
    # diagonal power weights: own private block eta, own common block eta/K
    idx = np.argwhere(free)
    per_block = N_BS * d
    pw_diag = np.zeros((L, K, bp.z0.shape[0]))
    for q, (i, j) in enumerate(idx):
        sl = slice(q * per_block, (q + 1) * per_block)
        if j < K:
            pw_diag[i, j, sl] = cfg.eta
        else:
            pw_diag[i, :, sl] = cfg.eta / K

    def surrogate_numerators(z, t):
        return bp.priv.values(z) + t

    def powers(z):
        return p_c + np.einsum("lkz,z->lk", pw_diag, np.abs(z) ** 2)

    z, t = bp.z0, perf.t
    mu = float(np.min(surrogate_numerators(z, t) / (lam * powers(z))))
    mus = [mu]
    steps = 0
    for _ in range(max_iter):
        bp.z0, bp.t0 = z, t
        bp.weights = np.ones((L, K))
        bp.extra_c = mu * lam * p_c
        bp.extra_diag = mu * lam[..., None] * pw_diag
        sol = solve_block(bp, opts)
        steps += sol.newton_steps
        z, t = sol.z, sol.t
        new_mu = float(np.min(surrogate_numerators(z, t) / (lam * powers(z))))
        if new_mu < mu - 1e-9 * max(1.0, abs(mu)):
            raise NonmonotoneError(f"Dinkelbach parameter decreased from {mu} to {new_mu}")
        new_mu = max(new_mu, mu)
        mus.append(new_mu)
        done = abs(new_mu - mu) <= gamma2 * max(abs(mu), 1e-12)
        mu = new_mu
        if done:
            break
    return WUpdate(_unpack_precoders(exp, free, z), CommonRateSplit(t), mu, steps, mus)


@dataclass
class RISUpdate:
    ris: RISPhases
    split: CommonRateSplit
    value: float
    newton_steps: int
    accepted: bool = True


def _ris_problem(exp, cfg, design, perf, ccp_delta=None):
    ch = exp.channels
    pb, cb = _banks(exp, perf.active)
    amap = ris_map(ch, exp.precoders.blocks)
    priv = assemble(pb, amap)
    comm = assemble(cb, amap) if cb is not None else None
    z0 = np.asarray(exp.ris.upsilon).reshape(-1)
    r_th = design.r_th if design.enforce_latency else 0.0
    return BlockProblem(priv=priv, comm=comm, active=perf.active, weights=perf.weights,
                        z0=z0, t0=perf.t, r_th=r_th, disc=True,
                        ccp_center=None if ccp_delta is None else z0.copy(),
                        ccp_delta=0.0 if ccp_delta is None else ccp_delta)


def solve_ris_unitdisc(exp: ExpansionPoint, cfg: NetworkConfig,
                       objective_kind: ObjectiveKind = ObjectiveKind.RATE,
                       opts: SolverOptions = SolverOptions(),
                       design: Optional[Design] = None) -> RISUpdate:
    """Max-min surrogate objective over the RIS coefficients in the unit disc."""
    design = Design(ObjectiveKind(objective_kind)) if design is None else design
    perf = _split_at(exp, cfg, design)
    if exp.channels is None or exp.channels.M == 0 or exp.ris.upsilon.size == 0:
        return RISUpdate(exp.ris, CommonRateSplit(perf.t), perf.objective, 0)
    bp = _ris_problem(exp, cfg, design, perf)
    sol = solve_block(bp, opts)
    ups = sol.z.reshape(exp.ris.upsilon.shape)
    mod = np.abs(ups)
    ups = np.where(mod > 1.0, ups / np.maximum(mod, 1e-300), ups)
    return RISUpdate(RISPhases(ups, FeasibilitySet.UNIT_DISC), CommonRateSplit(sol.t), sol.s,
                     sol.newton_steps)


def solve_ris_unitmod(exp: ExpansionPoint, cfg: NetworkConfig,
                      objective_kind: ObjectiveKind = ObjectiveKind.RATE,
                      delta: float = 0.05, opts: SolverOptions = SolverOptions(),
                      design: Optional[Design] = None) -> RISUpdate:
    """Relaxed update with the linearized modulus constraint, then projection.

    The projected phases are accepted only when the true objective (with the
    rate split re-optimized) does not decrease; otherwise the previous phases
    are kept.
    """
    design = Design(ObjectiveKind(objective_kind)) if design is None else design
    perf = _split_at(exp, cfg, design)
    if exp.channels is None or exp.channels.M == 0 or exp.ris.upsilon.size == 0:
        return RISUpdate(exp.ris, CommonRateSplit(perf.t), perf.objective, 0, False)
    bp = _ris_problem(exp, cfg, design, perf, ccp_delta=delta)
    sol = solve_block(bp, opts)
    ups = sol.z.reshape(exp.ris.upsilon.shape)
    mod = np.abs(ups)
    prev = np.asarray(exp.ris.upsilon)
    safe = np.where(mod < 1e-9, 1.0, mod)
    ups_hat = np.where(mod < 1e-9, prev / np.abs(prev), ups / safe)
    ups_hat = ups_hat / np.abs(ups_hat)
    H_new = effective_channels(exp.channels, ups_hat)
    new = evaluate_performance(cfg, H_new, exp.precoders.blocks, design, exp.q_c, exp.q_p, n=exp.n)
    if new.objective >= perf.objective and new.latency_ok:
        return RISUpdate(RISPhases(ups_hat, FeasibilitySet.UNIT_MODULUS),
                         CommonRateSplit(new.t), new.objective, sol.newton_steps, True)
    return RISUpdate(exp.ris, CommonRateSplit(perf.t), perf.objective, sol.newton_steps, False)
