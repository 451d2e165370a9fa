import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prtebounds.errors import DomainError, ValidationError
from prtebounds.weights import (PolicySpec, StepWeight, ate_weight, att_weight, atu_weight,
                                estimand_weight, late_weight, prte_weight)


def test_step_weight_basics():
    w = StepWeight([0, 0.25, 0.75, 1], [1.0, 0.5, 0.0])
    assert w(0.1) == 1.0 and w(0.5) == 0.5 and w(0.9) == 0.0
    assert w.integral() == pytest.approx(0.5)
    assert w.integral(0.2, 0.3) == pytest.approx(0.05 + 0.025)
    neg = w - StepWeight.constant(0.75)
    assert neg.positive_integral() == pytest.approx(0.0625)
    assert neg.negative_integral() == pytest.approx(-0.3125)
    assert neg.abs_integral() == pytest.approx(0.375)
    with pytest.raises(ValidationError):
        StepWeight([0, 0.5], [1.0])


def test_restricted_measure_is_law_of_weight():
    w = StepWeight([0, 0.25, 0.75, 1], [1.0, 0.5, 0.0])
    m = w.restricted_measure([(0.0, 0.5)])
    assert m.atoms.tolist() == [0.5, 1.0]
    np.testing.assert_allclose(m.weights, [0.5, 0.5])


def test_prte_explicit_targets():
    # binary instrument, baseline p = 1/2, targets 1/4 and 3/4
    policy = PolicySpec("explicit", targets={0: 0.25, 1: 0.75})
    w = prte_weight(([0.5, 0.5], [0.5, 0.5], [0, 1]), policy)
    total = w + StepWeight.indicator(0.0, 0.5)  # add back P(p >= u)
    for u, v in [(0.1, 1.0), (0.3, 0.5), (0.6, 0.5), (0.9, 0.0)]:
        assert total(u) == pytest.approx(v)


def test_prte_uniform_shift_example():
    w = prte_weight(([0.25, 0.75], [0.5, 0.5]), PolicySpec("uniform_shift", 0.05))
    for u, v in [(0.2, 0.0), (0.27, 0.5), (0.5, 0.0), (0.77, 0.5), (0.9, 0.0)]:
        assert w(u) == pytest.approx(v)
    assert w.integral() == pytest.approx(0.05)
    norm = prte_weight(([0.25, 0.75], [0.5, 0.5]), PolicySpec("uniform_shift", 0.05),
                       normalize=True)
    assert norm.integral() == pytest.approx(1.0)


def test_null_policy_is_exactly_zero():
    w = prte_weight(([0.1, 0.4, 0.8], [0.2, 0.3, 0.5]), PolicySpec("uniform_shift", 0.0))
    assert np.all(w.values == 0.0)
    with pytest.raises(DomainError):
        prte_weight(([0.1], [1.0]), PolicySpec(), normalize=True)


def test_standard_estimands():
    d = ([0.2, 0.6], [0.5, 0.5])
    assert ate_weight().integral() == 1.0
    att = att_weight(d)
    assert att.integral() == pytest.approx(1.0)
    assert att(0.1) == pytest.approx(1 / 0.4) and att(0.4) == pytest.approx(0.5 / 0.4)
    atu = atu_weight(d)
    assert atu.integral() == pytest.approx(1.0)
    assert atu(0.9) == pytest.approx(1 / 0.6)
    late = late_weight(0.2, 0.6)
    assert late(0.4) == pytest.approx(2.5) and late(0.1) == 0.0
    with pytest.raises(DomainError):
        late_weight(0.6, 0.6)
    assert estimand_weight("late", p0=0.2, p1=0.6)(0.3) == pytest.approx(2.5)
    with pytest.raises(ValidationError):
        estimand_weight("nope")


def test_policy_maps():
    p = np.array([0.0, 0.5, 0.98])
    assert PolicySpec("uniform_shift", 0.05).apply(p).tolist() == pytest.approx([0.05, 0.55, 1])
    np.testing.assert_allclose(PolicySpec("proportional", 0.1).apply(p), [0, 0.55, 1])
    pol = PolicySpec("explicit", targets={"1": 0.9})
    assert pol.apply([0.3, 0.4], [1, 2]).tolist() == [0.9, 0.4]
    assert pol.derivative([0.3, 0.4], [1.0, 2]).tolist() == [0.0, 1.0]
    with pytest.raises(ValidationError):
        PolicySpec("bogus")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(-0.3, 0.3))
def test_prte_weight_integrates_to_mean_shift(values, alpha):
    probs = np.full(len(values), 1 / len(values))
    pol = PolicySpec("uniform_shift", alpha)
    w = prte_weight((values, probs), pol)
    shift = float(np.dot(probs, pol.apply(values) - np.asarray(values)))
    assert w.integral() == pytest.approx(shift, abs=1e-12)
    # the mirrored policy acts on 1 - p
    back = 1 - pol.mirrored().apply(1 - np.asarray(values))
    np.testing.assert_allclose(back, pol.apply(values), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=5), st.floats(0.05, 0.9))
def test_arithmetic_and_reflection(vals, cut):
    b = np.linspace(0, 1, len(vals) + 1)
    w = StepWeight(b, vals)
    v = StepWeight([0, cut, 1], [1.0, -1.0])
    assert (w + v).integral() == pytest.approx(w.integral() + v.integral(), abs=1e-12)
    assert (w * 3).integral() == pytest.approx(3 * w.integral(), abs=1e-12)
    r = w.reflected()
    assert r.integral() == pytest.approx(w.integral(), abs=1e-12)
    assert r(0.5 * b[1]) == pytest.approx(w(1 - 0.5 * b[1]))
