import numpy as np
import pytest
from scipy.optimize import linprog

from prtebounds.errors import InfeasibleError, SizeError, ValidationError
from prtebounds.lp import LpProblem, simplex, solve, solve_dual_form


def test_small_examples():
    # max x + y st x + 2y <= 4, 3x + y <= 6
    r = simplex(LpProblem([-1, -1], A_ub=[[1, 2], [3, 1]], b_ub=[4, 6]))
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [1.6, 1.2], atol=1e-12)
    assert r.fun == pytest.approx(-2.8)
    # duality: c @ x == b @ y
    assert r.fun == pytest.approx(np.dot([4, 6], r.y))
    r = simplex(LpProblem([1.0], A_eq=[[1.0]], b_eq=[-2.0], free=[True]))
    assert r.x[0] == pytest.approx(-2.0)


def test_infeasible_and_unbounded():
    p = LpProblem([1.0], A_ub=[[1.0]], b_ub=[-1.0])
    assert simplex(p).status == "infeasible"
    with pytest.raises(InfeasibleError):
        solve(p)
    assert simplex(LpProblem([-1.0], A_ub=[[-1.0]], b_ub=[1.0])).status == "unbounded"
    with pytest.raises(ValidationError):
        solve_dual_form(LpProblem([1.0], A_ub=[[1.0]], b_ub=[1.0]))
    with pytest.raises(SizeError):
        simplex(LpProblem(np.ones(3000), A_ub=np.ones((600, 3000)), b_ub=np.ones(600)))


def _random_lp(rng):
    n = int(rng.integers(2, 8))
    m = int(rng.integers(1, 10))
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n)
    b = A @ x0 + rng.uniform(0, 1, m)  # feasible at x0
    c = rng.normal(size=n)
    # box keeps the problem bounded
    A = np.vstack([A, np.eye(n)])
    b = np.concatenate([b, np.full(n, 3.0)])
    return c, A, b


def test_against_scipy_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c, A, b = _random_lp(rng)
        ref = linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        r = simplex(LpProblem(c, A_ub=A, b_ub=b))
        assert r.status == "optimal"
        assert r.fun == pytest.approx(ref.fun, abs=1e-8)
        assert np.all(A @ r.x <= b + 1e-9) and np.all(r.x >= -1e-12)


def test_dual_form_matches_primal():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 5))
        A = rng.normal(size=(30, n))
        b = A @ rng.normal(size=n) + rng.uniform(0.1, 1, 30)
        A = np.vstack([A, np.eye(n), -np.eye(n)])
        b = np.concatenate([b, np.full(2 * n, 5.0)])
        Aeq = rng.normal(size=(1, n))
        beq = [0.0]
        c = rng.normal(size=n)
        # keep the equality feasible: project the interior point
        p = LpProblem(c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq, free=np.ones(n, bool))
        ref = linprog(c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq, bounds=(None, None),
                      method="highs")
        if ref.status != 0:
            continue
        d = solve_dual_form(p)
        assert d.status == "optimal"
        assert d.fun == pytest.approx(ref.fun, abs=1e-7)
        assert np.all(A @ d.x <= b + 1e-7)
        p2 = simplex(p)
        assert p2.fun == pytest.approx(ref.fun, abs=1e-8)


def test_degenerate_problem():
    # many redundant constraints through the same vertex
    A = np.vstack([[1.0, 1.0]] * 20 + [[1.0, 0.0], [0.0, 1.0]])
    b = np.concatenate([np.ones(20), [1.0, 1.0]])
    r = simplex(LpProblem([-1.0, -1.0], A_ub=A, b_ub=b))
    assert r.status == "optimal" and r.fun == pytest.approx(-1.0)
