import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldwind.exceptions import EvaluationError
from ldwind.nlp import LineSearchError, NlpSpec, bfgs_update, line_search, minimize


def quadratic(A, b):
    return lambda p: (0.5 * p @ A @ p - b @ p, A @ p - b)


def rosenbrock(p):
    x, y = p
    return (1 - x) ** 2 + 100 * (y - x * x) ** 2, np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])


def assert_monotone_merit(res):
    # merit is only comparable while the multiplier estimate is fixed
    for a, b in zip(res.history, res.history[1:]):
        if a.outer == b.outer:
            assert b.merit < a.merit


class TestMinimize:
    def test_scalar_quadratic(self):
        res = minimize(NlpSpec(1, lambda p: ((p[0] - 3) ** 2, 2 * (p - 3))), [0.0])
        assert res.converged and res.p_star[0] == pytest.approx(3.0, abs=1e-8)

    def test_rosenbrock(self):
        res = minimize(NlpSpec(2, rosenbrock), [-1.2, 1.0])
        assert res.converged
        np.testing.assert_allclose(res.p_star, [1.0, 1.0], atol=1e-6)
        assert_monotone_merit(res)

    def test_active_bound(self):
        res = minimize(NlpSpec(1, lambda p: (p[0] ** 2, 2 * p), lower=[1.0], upper=[2.0]), [1.5])
        assert res.converged and res.p_star[0] == 1.0

    def test_equality_constraint(self):
        spec = NlpSpec(2, lambda p: (p @ p, 2 * p, [p.sum()], [[1.0, 1.0]]), targets=[1.0])
        res = minimize(spec, [0.0, 0.0])
        assert res.converged and res.constraint_violation_final < 1e-6
        np.testing.assert_allclose(res.p_star, [0.5, 0.5], atol=1e-5)

    def test_nonsmooth_kinks(self):
        def f(p):
            g = np.array([np.sign(p[0]) or 1.0, 2 * (np.sign(p[1] - 1) or 1.0)])
            return abs(p[0]) + 2 * abs(p[1] - 1), g

        res = minimize(NlpSpec(2, f), [0.3, -0.7])
        assert res.status in ("converged", "line_search_failure")
        assert res.phi_star < 1e-6
        assert_monotone_merit(res)

    def test_evaluation_error(self):
        def f(p):
            if p[0] > 0.5:
                raise EvaluationError("model blew up", p=p)
            return (p[0] - 3) ** 2, 2 * (p - 3)

        res = minimize(NlpSpec(1, f, lower=[0.0], upper=[0.6]), [0.0])
        # the line search backs off from the failing region
        assert res.status in ("converged", "evaluation_error")
        assert res.p_star[0] <= 0.5

    def test_evaluation_error_at_start(self):
        def f(p):
            raise EvaluationError("no", p=p)

        res = minimize(NlpSpec(1, f), [1.0])
        assert res.status == "evaluation_error" and res.failed_p.tolist() == [1.0]

    def test_max_iter(self):
        res = minimize(NlpSpec(2, rosenbrock, max_iter=3), [-1.2, 1.0])
        assert res.status == "max_iter" and res.iterations == 3 == len(res.history)

    def test_log(self, tmp_path):
        path = tmp_path / "log.csv"
        res = minimize(NlpSpec(2, rosenbrock, log_path=str(path)), [-1.2, 1.0])
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iter", "phi", "merit", "step", "grad_norm", "constraint_violation"]
        assert len(rows) == res.iterations + 1

    def test_bad_start(self):
        with pytest.raises(ValueError):
            minimize(NlpSpec(1, lambda p: (p[0], np.ones(1)), lower=[0.0], upper=[1.0]), [2.0])

    @pytest.mark.parametrize("kw", [{"lower": [1.0], "upper": [0.0]}, {"grad_tol": 0.0}, {"max_iter": 0}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            NlpSpec(1, lambda p: (0.0, np.zeros(1)), **kw)


class TestProperties:
    @given(st.integers(2, 8), st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_quadratic_exactness(self, n, seed):
        rng = np.random.default_rng(seed)
        Q = rng.normal(size=(n, n))
        A = Q @ Q.T + n * np.eye(n)
        b = rng.normal(size=n)
        res = minimize(NlpSpec(n, quadratic(A, b), grad_tol=1e-8), np.zeros(n))
        assert res.converged and res.iterations <= n + 5
        np.testing.assert_allclose(res.p_star, np.linalg.solve(A, b), atol=1e-6)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_bounds_respected(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        A = np.diag(rng.uniform(1, 5, n))
        b = rng.normal(scale=5, size=n)
        lo, hi = -np.ones(n), np.ones(n)
        seen = []

        def f(p):
            seen.append(p.copy())
            return quadratic(A, b)(p)

        res = minimize(NlpSpec(n, f, lower=lo, upper=hi), np.zeros(n))
        assert all(np.all(p >= lo) and np.all(p <= hi) for p in seen)
        np.testing.assert_allclose(res.p_star, np.clip(b / np.diag(A), lo, hi), atol=1e-6)
        assert_monotone_merit(res)


class TestBfgsUpdate:
    def test_secant(self):
        H = bfgs_update(np.eye(2), [1.0, 0.0], [1.0, 0.0])
        np.testing.assert_allclose(H @ [1.0, 0.0], [1.0, 0.0])

    def test_skip_on_zero_curvature(self):
        H0 = np.array([[2.0, 0.1], [0.1, 1.0]])
        assert bfgs_update(H0, [1.0, 0.0], [0.0, 1.0]) is H0

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_secant_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=3)
        y = s + 0.1 * rng.normal(size=3)
        H = bfgs_update(np.eye(3), s, y)
        np.testing.assert_allclose(H, H.T)
        np.testing.assert_allclose(H @ y, s, atol=1e-10)


class TestLineSearch:
    def test_unit_step(self):
        gamma, q, _ = line_search(lambda p: float(p @ p), np.array([1.0]), np.array([-1.0]), np.array([2.0]))
        assert gamma == 1.0 and q[0] == 0.0

    def test_exponential_merit(self):
        merit = lambda p: float(np.exp(10 * p[0]))
        gamma, q, out = line_search(merit, np.array([0.0]), np.array([-1.0]), np.array([10.0]))
        # the accepted step is the largest one passing the Armijo test
        assert out < 1.0 and out <= 1.0 + 1e-4 * 10.0 * q[0]
        assert gamma == 1.0

    def test_steep_forces_backtrack(self):
        merit = lambda p: float(p[0] ** 2 * 1e4)
        gamma, _, out = line_search(merit, np.array([1.0]), np.array([-2e4]), np.array([2e4]))
        assert gamma < 1e-3 and out < 1e4

    def test_ascent_rejected(self):
        with pytest.raises(LineSearchError):
            line_search(lambda p: float(p @ p), np.array([1.0]), np.array([1.0]), np.array([2.0]))

    def test_no_decrease_found(self):
        with pytest.raises(LineSearchError):
            line_search(lambda p: 1.0 + float(abs(p[0])), np.array([0.0]), np.array([-1.0]), np.array([1.0]), f0=1.0)
