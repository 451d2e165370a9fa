import numpy as np
import pytest

from prtebounds.baseline import MtrSieve, solve_mr_bounds
from prtebounds.errors import ValidationError
from prtebounds.simlab import (HEADER, DEFAULT_ALPHAS, DgpSpec, generate, population,
                               population_bounds, rows_to_csv, run_experiment, true_theta,
                               uniform_shift)


def test_generate_is_deterministic():
    for kind in ("continuous_logistic", "discrete_two_point", "pointmass_zero", "bednet_like"):
        a = generate(DgpSpec(kind, 500, 11))
        b = generate(DgpSpec(kind, 500, 11))
        for f in ("y", "w", "z"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        c = generate(DgpSpec(kind, 500, 12))
        assert not np.array_equal(a.z, c.z) or kind == "pointmass_zero"


def test_empirical_propensities():
    ds = generate(DgpSpec("continuous_logistic", 100000, 0))
    near_one = ds.z > 0.98
    assert ds.w[near_one].mean() == pytest.approx(0.73, abs=0.02)
    ds = generate(DgpSpec("discrete_two_point", 100000, 0))
    assert ds.w[ds.z == 1].mean() == pytest.approx(0.75, abs=0.01)


def test_pointmass_and_bednet_shapes():
    ds = generate(DgpSpec("pointmass_zero", 1000, 0))
    assert np.all(ds.y == 0)
    bed = generate(DgpSpec("bednet_like", 5000, 0))
    assert len(bed.labels()) == 17
    assert set(np.unique(bed.y)) <= {0.0, 1.0}
    p = population(DgpSpec("bednet_like", 1, 0)).p_values
    assert np.all(np.diff(p) < 0)


def test_truth_values():
    disc = DgpSpec("discrete_two_point", 1, 0)
    assert true_theta(disc, 0.05) == pytest.approx(0.0287, abs=5e-5)
    assert true_theta(disc, 0.0) == 0.0
    cont = DgpSpec("continuous_logistic", 1, 0)
    # constant MTE: 0.5 alpha while no unit is clipped
    assert true_theta(cont, 0.05) == pytest.approx(0.025, abs=1e-12)
    for a in (0.01, 0.07, 0.12):
        assert true_theta(cont, -a) == pytest.approx(-true_theta(cont, a), abs=1e-12)


def test_population_bounds_contain_truth():
    for kind in ("continuous_logistic", "discrete_two_point", "bednet_like"):
        spec = DgpSpec(kind, 1, 0)
        for a in (-0.1, 0.05, 0.12):
            assert population_bounds(spec, a).contains(true_theta(spec, a), tol=1e-9)


@pytest.mark.parametrize("kind", ["discrete_two_point", "continuous_logistic",
                                  "pointmass_zero"])
def test_mr_contains_ivot_on_population_moments(kind):
    spec = DgpSpec(kind, 1, 0)
    pop = population(spec)
    for a in (-0.1, 0.05, 0.12):
        w = pop.weight(uniform_shift(a))
        ms = pop.moments()
        mr = solve_mr_bounds(ms, w, MtrSieve(), pop.y_min, pop.y_max)
        iv = population_bounds(spec, a)
        assert mr.lower <= iv.lower + 1e-6 and mr.upper >= iv.upper - 1e-6


def test_run_experiment_and_csv(tmp_path):
    spec = DgpSpec("discrete_two_point", 5000, 0)
    rows = run_experiment(spec, DEFAULT_ALPHAS, ("ivot_closed_form",))
    assert len(rows) == 25 and all(r.covered for r in rows)
    text = rows_to_csv(rows, tmp_path / "out.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(HEADER)
    assert len(lines) == 26
    assert (tmp_path / "out.csv").read_text() == text
    again = rows_to_csv(run_experiment(spec, DEFAULT_ALPHAS, ("ivot_closed_form",)))
    assert again == text
    with pytest.raises(ValidationError):
        run_experiment(spec, [0.05], ("magic",))


def test_failures_are_recorded_per_row():
    rows = run_experiment(DgpSpec("discrete_two_point", 60, 0), [0.05], ("ivot_dml",))
    assert rows[0].error.startswith("InsufficientDataError") and not rows[0].covered


def test_continuous_width_ratio():
    spec = DgpSpec("continuous_logistic", 5000, 0)
    rows = run_experiment(spec, [0.05], ("ivot_continuous", "mr_baseline"))
    iv, mr = rows
    assert (mr.upper - mr.lower) >= 5 * (iv.upper - iv.lower)


def test_parallel_grid_matches_sequential():
    spec = DgpSpec("discrete_two_point", 3000, 1)
    methods = ("ivot_closed_form", "ivot_dml")
    seq = rows_to_csv(run_experiment(spec, DEFAULT_ALPHAS[::3], methods))
    par = rows_to_csv(run_experiment(spec, DEFAULT_ALPHAS[::3], methods, workers=4))
    assert seq == par
