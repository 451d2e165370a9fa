import numpy as np
import pytest

from prtebounds.dml import (ArmObs, DmlConfig, dml_estimate, fit_nuisances, levels_from_means,
                            single_linkage)
from prtebounds.errors import GapViolationError, InsufficientDataError, ValidationError
from prtebounds.plugin import closed_form_from_data
from prtebounds.simlab import DgpSpec, generate, uniform_shift
from prtebounds.weights import PolicySpec


def test_single_linkage():
    out = single_linkage([0.3, 0.1, 0.11, 0.5], 0.025)
    assert [c.tolist() for c in out] == [[1, 2], [0], [3]]
    with pytest.raises(GapViolationError):
        single_linkage([0.0, 0.025], 0.025)


def test_levels_from_means():
    p = {"a": 0.2, "b": 0.21, "c": 0.6}
    q = {"a": 0.25, "b": 0.26, "c": 0.6}
    lv = levels_from_means(p, q, 0.05)
    np.testing.assert_allclose(lv.values, [0.205, 0.6])
    assert len(lv.level_labels(1)) == 2
    free = [g for g in lv.groups if not g.merged]
    assert len(free) == 1 and free[0].value == pytest.approx(0.255) and free[0].interval == 1
    merged = [g for g in lv.groups if g.merged]
    assert merged[0].merged_level == 2
    # the mirrored layout reverses the levels
    np.testing.assert_allclose(lv.mirrored().values, [0.4, 0.795])
    with pytest.raises(ValidationError):
        levels_from_means(p, q, 0.0)


def test_null_policy_scores_are_zero():
    ds = generate(DgpSpec("discrete_two_point", 4000, 1))
    res = dml_estimate(ds, DmlConfig(policy=PolicySpec("uniform_shift", 0.0)))
    assert np.all(res.scores_lower == 0.0) and np.all(res.scores_upper == 0.0)
    assert res.lower.point == 0.0 and res.upper.point == 0.0


def test_zero_outcome_inside_identified_region():
    ds = generate(DgpSpec("pointmass_zero", 4000, 2))
    pol = PolicySpec("explicit", targets={0: 0.75})
    res = dml_estimate(ds, DmlConfig(policy=pol))
    assert res.lower.point == pytest.approx(0.0, abs=1e-12)
    assert res.upper.point == pytest.approx(0.0, abs=1e-12)


def test_deterministic_and_ordered():
    ds = generate(DgpSpec("discrete_two_point", 3000, 5))
    cfg = DmlConfig(policy=PolicySpec("uniform_shift", 0.05), seed=3)
    a = dml_estimate(ds, cfg)
    b = dml_estimate(ds, cfg)
    assert a.lower == b.lower and a.upper == b.upper
    assert np.array_equal(a.scores_lower, b.scores_lower)
    assert a.lower.point <= a.upper.point
    assert a.ci[0] < a.lower.point and a.ci[1] > a.upper.point


def test_agrees_with_plugin_at_large_n():
    ds = generate(DgpSpec("discrete_two_point", 40000, 7))
    pol = PolicySpec("uniform_shift", 0.05)
    res = dml_estimate(ds, DmlConfig(policy=pol, cross_fit=True))
    cf = closed_form_from_data(ds, pol)
    assert abs(res.lower.point - cf.lower) < 4 * res.lower.se + 1e-3
    assert abs(res.upper.point - cf.upper) < 4 * res.upper.se + 1e-3


def test_errors():
    ds = generate(DgpSpec("discrete_two_point", 80, 0))
    with pytest.raises(InsufficientDataError):
        dml_estimate(ds, DmlConfig(policy=PolicySpec("uniform_shift", 0.05)))
    cont = generate(DgpSpec("continuous_logistic", 200, 0))
    with pytest.raises(ValidationError):
        dml_estimate(cont)
    with pytest.raises(ValidationError):
        DmlConfig(c_gap=0.0)


def test_weighted_nuisances_are_weighted_means():
    rng = np.random.default_rng(5)
    n = 400
    z = rng.integers(0, 2, n).astype(float)
    w = (rng.random(n) < np.where(z == 1, 0.7, 0.3)).astype(np.int8)
    y = (rng.random(n) < 0.5).astype(float)
    wt = rng.uniform(0.5, 2.0, n)
    lv = levels_from_means({0.0: 0.3, 1.0: 0.7}, {0.0: 0.4, 1.0: 0.8}, 0.05)
    x = np.zeros((n, 0))
    obs = ArmObs(y, w, z, x, lv.obs_levels(z), lv.obs_groups(z))
    nv = fit_nuisances(obs, lv, uniform_shift(0.1), "binary", weights=wt).evaluate(x)
    for k in (1, 2):
        m = obs.lev == k
        assert nv.pi[k][0] == pytest.approx(wt[m].sum() / wt.sum(), abs=1e-9)
        assert nv.p[k][0] == pytest.approx(np.average(w[m], weights=wt[m]), abs=1e-9)
        assert nv.A_y[k][0] == pytest.approx(np.average(w[m] * y[m], weights=wt[m]),
                                             abs=1e-9)
    with pytest.raises(ValidationError):
        fit_nuisances(obs, lv, uniform_shift(0.1), "continuous", weights=wt)
