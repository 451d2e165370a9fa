import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.interpolate import BSpline

from prtebounds.baseline import (MomentSet, MtrSieve, bspline_basis, kernel_breaks,
                                 level_moments, moment_constraints, solve_mr_bounds,
                                 survival_kernel)
from prtebounds.errors import ValidationError
from prtebounds.weights import StepWeight

POINTMASS = level_moments([0.25, 0.75], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0])
OMEGA = StepWeight.indicator(0.25, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(-1, 5), st.integers(0, 10 ** 6))
def test_basis_matches_scipy(degree, continuity, seed):
    continuity = min(continuity, degree - 1) if degree > 0 else -1
    rng = np.random.default_rng(seed)
    knots = tuple(np.round(np.sort(rng.uniform(0.05, 0.95, 3)), 3))
    s = MtrSieve(degree, knots, continuity)
    x = np.linspace(0, 0.999999, 97)
    ref = BSpline.design_matrix(x, s.knot_vector, degree).toarray()
    np.testing.assert_allclose(s.basis(x), ref, atol=1e-12)


def test_basis_partition_of_unity_and_right_end():
    s = MtrSieve(3, (0.3, 0.6), breaks=(0.5,))
    B = s.basis(np.linspace(0, 1, 51))
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-13)
    assert B[-1, -1] == pytest.approx(1.0)


def test_integrals_against_quadrature():
    s = MtrSieve(4, (0.2, 0.55), continuity=2, breaks=(0.4,))
    for u in (0.1, 0.4, 0.73, 1.0):
        ref = [integrate.quad(lambda v: s.basis([v])[0, j], 0, u, points=[0.2, 0.4, 0.55],
                              epsabs=1e-14)[0] for j in range(s.size)]
        np.testing.assert_allclose(s.integral([u])[0], ref, atol=1e-12)
    k = StepWeight([0, 0.3, 0.8, 1], [1.0, -2.0, 0.5])
    ref = [sum(v * integrate.quad(lambda x: s.basis([x])[0, j], a, b, points=[0.4, 0.55],
                                  epsabs=1e-14)[0]
               for a, b, v in k.pieces()) for j in range(s.size)]
    np.testing.assert_allclose(s.weighted_integral(k), ref, atol=1e-12)


def test_sieve_validation():
    with pytest.raises(ValidationError):
        MtrSieve(3, (0.0, 0.5))
    with pytest.raises(ValidationError):
        MtrSieve(3, (0.5,), continuity=3)
    with pytest.raises(ValidationError):
        MtrSieve(3, breaks=(1.0,))
    assert MtrSieve(0, (), -1).size == 1


def test_moment_construction():
    ms = level_moments([0.0, 0.5, 1.0], [0.2, 0.5, 0.3], [9.0, 1.0, 2.0], [3.0, 4.0, 9.0])
    # empty arms are skipped
    assert len(ms) == 4
    A, b = moment_constraints(ms, MtrSieve(0, (), -1))
    np.testing.assert_allclose(A, [[0, 0.2], [0.25, 0], [0, 0.25], [0.3, 0]])
    np.testing.assert_allclose(b, [0.6, 0.25, 1.0, 0.6])
    k = survival_kernel([0.2, 0.6], [0.5, 0.5])
    assert k(0.1) == 1.0 and k(0.4) == 0.5 and k(0.7) == 0.0
    assert survival_kernel([0.2, 0.6], [0.5, 0.5], treated=False)(0.4) == 0.5
    with pytest.raises(ValidationError):
        MomentSet().add(2, k, 0.0)


def test_zero_weight_and_constant_sieve():
    b = solve_mr_bounds(POINTMASS, StepWeight.constant(0.0))
    assert (b.lower, b.upper) == (0.0, 0.0)
    # one constant per arm pinned by full-support moments: a point
    ms = MomentSet()
    ms.add(1, StepWeight.constant(), 0.3)
    ms.add(0, StepWeight.constant(), -0.2)
    b = solve_mr_bounds(ms, StepWeight.constant(), MtrSieve(0, (), -1), -1, 1)
    assert b.lower == pytest.approx(0.5, abs=1e-12) and b.upper == pytest.approx(0.5, abs=1e-12)


def test_pointmass_with_breaks_is_sharp_relaxation():
    s = MtrSieve(9, breaks=(0.25, 0.5, 0.75))
    b = solve_mr_bounds(POINTMASS, OMEGA, s, -1.0, 1.0)
    assert b.lower == pytest.approx(-0.5, abs=1e-6)
    assert b.upper == pytest.approx(0.5, abs=1e-6)
    assert kernel_breaks(POINTMASS, OMEGA) == (0.25, 0.5, 0.75)


def test_smooth_sieve_is_narrower_than_step_sieve():
    smooth = solve_mr_bounds(POINTMASS, OMEGA, MtrSieve(), -1.0, 1.0)
    assert 0.3 < smooth.upper < 0.5 and smooth.lower == pytest.approx(-smooth.upper, abs=1e-6)


def test_bounds_widen_with_degree():
    # fixed knots and continuity: the spline spaces are nested in the degree
    ms = level_moments([0.2, 0.5, 0.8], [0.3, 0.4, 0.3], [0.4, 0.5, 0.55], [0.2, 0.25, 0.1])
    w = StepWeight.indicator(0.2, 0.6)
    prev = None
    t0 = time.perf_counter()
    for d in (3, 9, 20):
        b = solve_mr_bounds(ms, w, MtrSieve(d, (0.25, 0.5, 0.75), continuity=2), 0.0, 1.0)
        if prev is not None:
            assert b.lower <= prev.lower + 1e-7 and b.upper >= prev.upper - 1e-7
        prev = b
    assert time.perf_counter() - t0 < 60
