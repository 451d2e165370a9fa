import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prtebounds.errors import SizeError
from prtebounds.measures import EmpiricalMeasure
from prtebounds.ot1d import CouplingMode, ot_bruteforce, ot_product_extreme

LO, HI = CouplingMode.COUNTERMONOTONE, CouplingMode.COMONOTONE


@st.composite
def small_measures(draw):
    k = draw(st.integers(1, 8))
    atoms = draw(st.lists(st.integers(-20, 20), min_size=k, max_size=k, unique=True))
    w = draw(st.lists(st.integers(1, 9), min_size=k, max_size=k))
    w = np.asarray(w, float)
    return EmpiricalMeasure(np.asarray(atoms, float) / 4, w / w.sum())


def test_examples():
    half = EmpiricalMeasure([0, 1], [0.5, 0.5])
    assert ot_product_extreme(half, half, LO) == 0.0
    assert ot_product_extreme(half, half, HI) == 0.5
    mu = EmpiricalMeasure([1, 3], [0.5, 0.5])
    nu = EmpiricalMeasure([2, 4], [0.5, 0.5])
    assert ot_product_extreme(mu, nu, LO) == pytest.approx(5.0)
    assert ot_product_extreme(mu, nu, HI) == pytest.approx(7.0)
    c = EmpiricalMeasure.point(2.0)
    for mode in (LO, HI):
        assert ot_product_extreme(c, nu, mode) == pytest.approx(2.0 * nu.mean())


def test_bruteforce_examples():
    a = EmpiricalMeasure.point(1.5)
    b = EmpiricalMeasure.point(-2.0)
    assert ot_bruteforce(a, b) == (pytest.approx(-3.0), pytest.approx(-3.0))
    half = EmpiricalMeasure([0, 1], [0.5, 0.5])
    lo, hi = ot_bruteforce(half, half)
    assert (lo, hi) == (pytest.approx(0.0), pytest.approx(0.5))
    sym = EmpiricalMeasure([-1, 0, 1], [0.3, 0.4, 0.3])
    cost = np.subtract.outer(sym.atoms, sym.atoms) ** 3  # anti-symmetric
    lo, hi = ot_bruteforce(sym, sym, cost)
    assert lo == pytest.approx(-hi, abs=1e-12)


def test_bruteforce_size_limit():
    big = EmpiricalMeasure(np.arange(9), np.full(9, 1 / 9))
    with pytest.raises(SizeError):
        ot_bruteforce(big, big)


def test_bruteforce_against_linprog():
    # third route for the oracle itself
    from scipy.optimize import linprog

    rng = np.random.default_rng(3)
    for _ in range(20):
        m, n = rng.integers(1, 6, 2)
        mu = EmpiricalMeasure(rng.normal(size=m), rng.dirichlet(np.ones(m)))
        nu = EmpiricalMeasure(rng.normal(size=n), rng.dirichlet(np.ones(n)))
        cost = rng.normal(size=(len(mu), len(nu)))
        A = np.vstack([np.kron(np.eye(len(mu)), np.ones(len(nu))),
                       np.kron(np.ones(len(mu)), np.eye(len(nu)))])
        b = np.concatenate([mu.weights, nu.weights])
        ref_lo = linprog(cost.ravel(), A_eq=A, b_eq=b, method="highs").fun
        ref_hi = -linprog(-cost.ravel(), A_eq=A, b_eq=b, method="highs").fun
        lo, hi = ot_bruteforce(mu, nu, cost)
        assert lo == pytest.approx(ref_lo, abs=1e-9)
        assert hi == pytest.approx(ref_hi, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(small_measures(), small_measures())
def test_closed_form_matches_oracle(mu, nu):
    lo, hi = ot_bruteforce(mu, nu)
    assert ot_product_extreme(mu, nu, LO) == pytest.approx(lo, abs=1e-9)
    assert ot_product_extreme(mu, nu, HI) == pytest.approx(hi, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(small_measures(), small_measures(), st.floats(-3, 3))
def test_structural_properties(mu, nu, c):
    lo = ot_product_extreme(mu, nu, LO)
    hi = ot_product_extreme(mu, nu, HI)
    indep = mu.mean() * nu.mean()
    assert lo - 1e-12 <= indep <= hi + 1e-12
    # sign flip swaps the extremes
    assert ot_product_extreme(mu, nu.negated(), LO) == pytest.approx(-hi, abs=1e-12)
    # translation of nu shifts both by c * mean(mu)
    sh = nu.shifted(c)
    assert ot_product_extreme(mu, sh, LO) == pytest.approx(lo + c * mu.mean(), abs=1e-9)
    assert ot_product_extreme(mu, sh, HI) == pytest.approx(hi + c * mu.mean(), abs=1e-9)
