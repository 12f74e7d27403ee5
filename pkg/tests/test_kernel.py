import json

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsmaris.kernel import (
    SolverOptions,
    SolverStatus,
    SubproblemSpec,
    complex_quadratic_to_real,
    solve_subproblem,
)

from conftest import crandn


def make_spec(c, dense=(), diag=(), x0=None, obj_index=None):
    """``dense`` holds (q0, qb, qQ) triples and ``diag`` (d0, db, dq) triples."""
    n = len(c)
    def stack(rows, shapes):
        if not rows:
            return [np.zeros(s) for s in shapes]
        return [np.array([r[i] for r in rows], dtype=float) for i in range(3)]
    q0, qb, qQ = stack(list(dense), [(0,), (0, n), (0, n, n)])
    d0, db, dq = stack(list(diag), [(0,), (0, n), (0, n)])
    return SubproblemSpec(np.asarray(c, float), q0, qb, qQ, d0, db, dq,
                          np.zeros(n) if x0 is None else np.asarray(x0, float), obj_index)


def random_qcqp(rng, n=4, m=3):
    dense = []
    for _ in range(m):
        A = rng.standard_normal((n, n))
        dense.append((rng.uniform(0.5, 2.0), rng.standard_normal(n), A @ A.T / n))
    diag = [(1.0, np.zeros(n), np.ones(n))]  # ||x||^2 <= 1
    return make_spec(rng.standard_normal(n), dense, diag)


def cvxpy_optimum(spec):
    x = cp.Variable(spec.n)
    cons = [spec.q0[i] + spec.qb[i] @ x - cp.quad_form(x, spec.qQ[i]) >= 0
            for i in range(spec.q0.shape[0])]
    cons += [spec.d0[j] + spec.db[j] @ x - spec.dq[j] @ cp.square(x) >= 0
             for j in range(spec.d0.shape[0])]
    prob = cp.Problem(cp.Maximize(spec.c @ x), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


class TestExamples:
    def test_one_dimensional(self):
        # maximize r s.t. -w^2 + 2w >= r, w^2 <= 1
        spec = make_spec([0.0, 1.0],
                         dense=[(0.0, [2.0, -1.0], np.diag([1.0, 0.0]))],
                         diag=[(1.0, [0.0, 0.0], [1.0, 0.0])],
                         x0=[0.5, 0.0], obj_index=1)
        res = solve_subproblem(spec)
        assert res.status is SolverStatus.OPTIMAL
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)
        assert res.objective == pytest.approx(1.0, abs=1e-6)

    def test_only_warm_start_feasible(self):
        # x <= 0 and x >= 0
        spec = make_spec([1.0], diag=[(0.0, [-1.0], [0.0]), (0.0, [1.0], [0.0])], x0=[0.0])
        res = solve_subproblem(spec)
        assert res.status is SolverStatus.OPTIMAL and res.used_warm_start
        assert res.x[0] == 0.0

    def test_infeasible(self):
        spec = make_spec([1.0], diag=[(-1.0, [0.0], [1.0])], x0=[0.0])  # -1 - x^2 >= 0
        res = solve_subproblem(spec)
        assert res.status is SolverStatus.INFEASIBLE and res.objective == -np.inf

    def test_infeasible_start_is_repaired(self):
        # x in [1, 2], start at 0
        spec = make_spec([1.0], diag=[(-1.0, [1.0], [0.0]), (2.0, [-1.0], [0.0])], x0=[0.0])
        res = solve_subproblem(spec)
        assert res.status is SolverStatus.OPTIMAL and not res.used_warm_start
        assert res.x[0] == pytest.approx(2.0, abs=1e-6)

    def test_two_user_maxmin_vs_grid(self):
        # r <= a_k + b_k w_k - c_k w_k^2 - e_k w_other^2, w1^2 + w2^2 <= 1
        a, b, c, e = [0.1, 0.3], [1.0, 0.6], [0.5, 0.2], [0.3, 0.4]
        dense = []
        for k in range(2):
            Q = np.zeros((3, 3))
            Q[k, k], Q[1 - k, 1 - k] = c[k], e[k]
            qb = np.zeros(3)
            qb[k], qb[2] = b[k], -1.0
            dense.append((a[k], qb, Q))
        spec = make_spec([0, 0, 1.0], dense, [(1.0, [0, 0, 0], [1.0, 1.0, 0])], obj_index=2)
        res = solve_subproblem(spec)
        g = np.linspace(-1, 1, 2001)
        W1, W2 = np.meshgrid(g, g, indexing="ij")
        f1 = a[0] + b[0] * W1 - c[0] * W1 ** 2 - e[0] * W2 ** 2
        f2 = a[1] + b[1] * W2 - c[1] * W2 ** 2 - e[1] * W1 ** 2
        vals = np.where(W1 ** 2 + W2 ** 2 <= 1, np.minimum(f1, f2), -np.inf)
        assert res.objective == pytest.approx(vals.max(), abs=1e-3)
        assert res.objective >= vals.max() - 1e-9


class TestContract:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_cvxpy(self, seed):
        spec = random_qcqp(np.random.default_rng(seed))
        res = solve_subproblem(spec)
        assert res.status is SolverStatus.OPTIMAL
        assert res.objective == pytest.approx(cvxpy_optimum(spec), abs=1e-5)
        assert np.all(spec.constraint_values(res.x) >= -1e-7)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 6))
    def test_feasible_and_warm_start_dominance(self, seed, n):
        rng = np.random.default_rng(seed)
        spec = random_qcqp(rng, n=n)
        spec.x0 = 0.1 * rng.standard_normal(n) / np.sqrt(n)
        warm_ok = np.all(spec.constraint_values(spec.x0) >= 0)
        res = solve_subproblem(spec)
        assert np.all(spec.constraint_values(res.x) >= -1e-7)
        if warm_ok:
            assert res.objective >= spec.c @ spec.x0 - 1e-9

    def test_dump(self, tmp_path, rng):
        spec = random_qcqp(rng)
        path = tmp_path / "spec.json"
        solve_subproblem(spec, SolverOptions(dump_path=str(path)))
        doc = json.loads(path.read_text())
        np.testing.assert_allclose(doc["qQ"], spec.qQ)
        assert doc["obj_index"] is None

    def test_newton_budget_respected(self, rng):
        res = solve_subproblem(random_qcqp(rng), SolverOptions(max_newton=5))
        assert res.newton_steps <= 5
        assert res.status in (SolverStatus.ITERATION_LIMIT, SolverStatus.OPTIMAL)


class TestComplexToReal:
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_identity(self, seed, n):
        rng = np.random.default_rng(seed)
        g, z = crandn(rng, n), crandn(rng, n)
        A = crandn(rng, n, n)
        P = A @ A.conj().T
        b, Q = complex_quadratic_to_real(g, P)
        x = np.concatenate([z.real, z.imag])
        want = 2 * np.real(np.vdot(g, z)) - np.real(z.conj() @ P @ z)
        assert b @ x - x @ Q @ x == pytest.approx(want, abs=1e-10)
        np.testing.assert_allclose(Q, Q.T)
        assert np.min(np.linalg.eigvalsh(Q)) >= -1e-10
