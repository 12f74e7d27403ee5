"""Log-barrier interior-point solver for small concave-quadratic programs.

Problem class (all in real variables ``x``)::

    maximize    c @ x
    subject to  q0[i] + qb[i] @ x - x @ qQ[i] @ x >= 0       (dense, qQ[i] PSD)
                d0[j] + db[j] @ x - dq[j] @ (x * x) >= 0     (diagonal, dq[j] >= 0)

Diagonal rows cover linear constraints (``dq = 0``), power budgets and
unit-disc bounds.  Phase I looks for a strictly interior point starting from
the warm start; the solution is never worse than a feasible warm start.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


_MIN_STEP = 2.0 ** -30


class SolverStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_ERROR = "numerical_error"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7           # duality-gap target m / t
    max_newton: int = 200       # total Newton steps, phase I and II
    mu: float = 20.0            # barrier growth factor
    t0: float = 1.0
    newton_tol: float = 1e-6    # half squared Newton decrement
    dump_path: Optional[str] = None


@dataclass
class SubproblemSpec:
    c: np.ndarray
    q0: np.ndarray
    qb: np.ndarray
    qQ: np.ndarray
    d0: np.ndarray
    db: np.ndarray
    dq: np.ndarray
    x0: np.ndarray
    obj_index: Optional[int] = None
    labels: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.q0.shape[0] + self.d0.shape[0]

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        gq = self.q0 + self.qb @ x - np.einsum("mij,i,j->m", self.qQ, x, x) if self.q0.size \
            else np.zeros(0)
        gd = self.d0 + self.db @ x - self.dq @ (x * x) if self.d0.size else np.zeros(0)
        return np.concatenate([gq, gd])

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}


@dataclass
class SubproblemResult:
    x: np.ndarray
    objective: float
    status: SolverStatus
    newton_steps: int
    used_warm_start: bool = False


class _Barrier:
    """Constraint evaluation with optional slack column ``v`` (phase I)."""

    def __init__(self, q0, qb, qQ, d0, db, dq):
        self.q0, self.qb, self.qQ = q0, qb, qQ
        self.d0, self.db, self.dq = d0, db, dq
        self.mq, self.md = q0.shape[0], d0.shape[0]

    def values(self, x):
        out = []
        if self.mq:
            Qx = self.qQ @ x
            out.append(self.q0 + self.qb @ x - Qx @ x)
        if self.md:
            out.append(self.d0 + self.db @ x - self.dq @ (x * x))
        return np.concatenate(out) if out else np.zeros(0)

    def derivatives(self, x):
        """Values, gradient of ``-sum log g`` and its Hessian."""
        n = x.shape[0]
        grad = np.zeros(n)
        hess = np.zeros((n, n))
        vals = []
        if self.mq:
            Qx = self.qQ @ x
            g = self.q0 + self.qb @ x - Qx @ x
            J = self.qb - 2.0 * Qx
            inv = 1.0 / g
            grad -= J.T @ inv
            Jw = J * inv[:, None]
            hess += Jw.T @ Jw + 2.0 * np.tensordot(inv, self.qQ, axes=1)
            vals.append(g)
        if self.md:
            g = self.d0 + self.db @ x - self.dq @ (x * x)
            J = self.db - 2.0 * self.dq * x[None, :]
            inv = 1.0 / g
            grad -= J.T @ inv
            Jw = J * inv[:, None]
            hess += Jw.T @ Jw
            hess[np.diag_indices(n)] += 2.0 * (self.dq.T @ inv)
            vals.append(g)
        return np.concatenate(vals), grad, hess


def _newton_direction(H, grad):
    """Solve ``H dx = -grad`` after symmetric diagonal equilibration."""
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]
    try:
        y = cho_solve(cho_factor(Hs, check_finite=False), -grad / d, check_finite=False)
    except (LinAlgError, ValueError):
        y = np.linalg.lstsq(Hs, -grad / d, rcond=None)[0]
    return y / d


def _barrier_method(c, bar: _Barrier, x, opts: SolverOptions, budget: int,
                    stop=None):
    """Maximize ``c @ x`` from a strictly feasible ``x``.  Returns ``(x, steps, converged)``."""
    m = bar.mq + bar.md
    scale = max(1.0, abs(float(c @ x)))
    t = opts.t0 / scale
    steps = 0
    while True:
        short = 0
        while steps < budget:
            g, gb, Hb = bar.derivatives(x)
            grad = -t * c + gb
            dx = _newton_direction(Hb, grad)
            dec = -float(grad @ dx)
            steps += 1
            if not np.isfinite(dec):
                return x, steps, False
            if dec / 2.0 <= opts.newton_tol:
                break
            # decrease measured through log ratios stays accurate when t is large
            alpha = 1.0
            while alpha >= _MIN_STEP:
                xn = x + alpha * dx
                gn = bar.values(xn)
                if np.all(gn > 0):
                    dphi = -t * alpha * float(c @ dx) - float(np.sum(np.log(gn / g)))
                    if dphi <= -0.01 * alpha * dec:
                        break
                alpha *= 0.5
            else:
                break
            x = xn
            # repeated short steps: the direction is limited by round-off
            short = short + 1 if alpha < 1e-3 else 0
            if short >= 5:
                break
            if stop is not None and stop(x):
                return x, steps, True
        if m / t < opts.tol:
            return x, steps, True
        if steps >= budget:
            return x, steps, False
        t *= opts.mu


def solve_subproblem(spec: SubproblemSpec, opts: SolverOptions = SolverOptions()) -> SubproblemResult:
    """Solve ``spec`` and never return something worse than a feasible warm start."""
    if opts.dump_path:
        with open(opts.dump_path, "w") as fh:
            json.dump(spec.to_dict(), fh)
    n = spec.n
    x0 = np.asarray(spec.x0, dtype=float).copy()
    s = spec.obj_index
    g0 = spec.constraint_values(x0)
    warm_ok = bool(np.all(g0 >= -1e-9))
    warm_obj = float(spec.c @ x0)

    # split rows into those touching the epigraph variable and the rest
    mq = spec.q0.shape[0]
    if s is not None:
        touch_q = spec.qb[:, s] != 0 if mq else np.zeros(0, bool)
        touch_d = spec.db[:, s] != 0 if spec.d0.size else np.zeros(0, bool)
    else:
        touch_q = np.zeros(mq, bool)
        touch_d = np.zeros(spec.d0.shape[0], bool)

    x = x0.copy()
    steps = 0
    if s is not None:
        x[s] = 0.0
    keep_q, keep_d = ~touch_q, ~touch_d
    cols = np.array([j for j in range(n) if j != s], dtype=int)
    base = _Barrier(spec.q0[keep_q], spec.qb[keep_q][:, cols],
                    spec.qQ[keep_q][:, cols][:, :, cols],
                    spec.d0[keep_d], spec.db[keep_d][:, cols], spec.dq[keep_d][:, cols])
    xr = x[cols]
    gb = base.values(xr)
    # a margin at round-off level is not interior: the barrier would stall on it
    if gb.size and np.min(gb) <= 1e-9 * (1.0 + float(np.max(np.abs(gb)))):
        # phase I: maximize -v subject to g_i(x) + v >= 0 and v <= v0 + 1
        nr = cols.size
        xa = np.append(xr, -np.min(gb) + 1.0)
        last = np.zeros((1, nr + 1))
        last[0, -1] = -1.0
        ph = _Barrier(base.q0, _with_col(base.qb, 1.0), _pad_q(base.qQ),
                      np.append(base.d0, xa[-1] + 1.0),
                      np.vstack([_with_col(base.db, 1.0), last]),
                      np.vstack([_with_col(base.dq, 0.0), np.zeros((1, nr + 1))]))
        ca = np.zeros(nr + 1)
        ca[-1] = -1.0
        target = -1e-6 * (1.0 + float(np.max(np.abs(gb))))
        xa, k, _ = _barrier_method(ca, ph, xa, SolverOptions(tol=1e-10, mu=opts.mu),
                                   opts.max_newton, stop=lambda z: z[-1] < target)
        steps += k
        if xa[-1] >= 0 or not np.all(base.values(xa[:nr]) > 0):
            return _fallback(spec, x0, warm_ok, warm_obj, steps)
        x[cols] = xa[:nr]

    if s is not None:
        # lift the epigraph variable just below its largest feasible value
        full = _Barrier(spec.q0, spec.qb, spec.qQ, spec.d0, spec.db, spec.dq)
        x[s] = 0.0
        g = full.values(x)
        w = -np.concatenate([spec.qb[:, s] if mq else np.zeros(0),
                             spec.db[:, s] if spec.d0.size else np.zeros(0)])
        rows = w > 0
        smax = float(np.min(g[rows] / w[rows])) if np.any(rows) else 0.0
        x[s] = smax - max(1e-3 * abs(smax), 1e-6)
    full = _Barrier(spec.q0, spec.qb, spec.qQ, spec.d0, spec.db, spec.dq)
    if not np.all(full.values(x) > 0):
        return _fallback(spec, x0, warm_ok, warm_obj, steps)
    x, k, conv = _barrier_method(spec.c, full, x, opts, opts.max_newton - steps)
    steps += k
    obj = float(spec.c @ x)
    if not np.all(np.isfinite(x)):
        return _fallback(spec, x0, warm_ok, warm_obj, steps, SolverStatus.NUMERICAL_ERROR)
    if warm_ok and obj < warm_obj:
        return SubproblemResult(x0, warm_obj, SolverStatus.OPTIMAL, steps, True)
    status = SolverStatus.OPTIMAL if conv else SolverStatus.ITERATION_LIMIT
    return SubproblemResult(x, obj, status, steps)


def _fallback(spec, x0, warm_ok, warm_obj, steps, status=SolverStatus.INFEASIBLE):
    if warm_ok:
        return SubproblemResult(x0, warm_obj, SolverStatus.OPTIMAL, steps, True)
    return SubproblemResult(x0, -math.inf, status, steps, True)


def _with_col(A, val):
    return np.hstack([A, np.full((A.shape[0], 1), val)])


def _pad_q(Q):
    m, n, _ = Q.shape
    out = np.zeros((m, n + 1, n + 1))
    out[:, :n, :n] = Q
    return out


def complex_quadratic_to_real(g: np.ndarray, P: np.ndarray):
    """Real form of ``2 Re(g^H z) - z^H P z`` over ``x = [Re z; Im z]``.

    Returns ``(b, Q)`` with ``b @ x - x @ Q @ x`` equal to the complex form.
    """
    b = 2.0 * np.concatenate([g.real, g.imag], axis=-1)
    PR, PI = P.real, P.imag
    top = np.concatenate([PR, -PI], axis=-1)
    bot = np.concatenate([PI, PR], axis=-1)
    Q = np.concatenate([top, bot], axis=-2)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return b, Q
