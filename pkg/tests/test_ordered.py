import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prtebounds.errors import (ConsistencyError, DegenerateGapError, MissingDataError,
                               StructureError)
from prtebounds.measures import EmpiricalMeasure
from prtebounds.ordered import (IntervalFamily, aggregate_levels, bound_ordered_choice,
                                bound_strict_monotone, build_dag_and_regions,
                                integrate_over_treatments, isolated_measures,
                                validate_pi_system)
from prtebounds.roy import arm_bounds
from prtebounds.weights import StepWeight

from popgen import random_population


def test_pi_system_examples():
    assert validate_pi_system(IntervalFamily({0: (0, 0.3), 1: (0, 0.6), 2: (0, 1)}))
    assert validate_pi_system(IntervalFamily({0: (0, 0.3), 1: (0.5, 0.8)}))
    # touching endpoints: null intersection
    assert validate_pi_system(IntervalFamily({0: (0, 0.5), 1: (0.5, 1)}))
    bad = IntervalFamily({0: (0, 0.6), 1: (0.4, 1)})
    assert not validate_pi_system(bad)
    with pytest.raises(StructureError):
        build_dag_and_regions(bad)


def test_dag_regions():
    dag = build_dag_and_regions(IntervalFamily({"a": (0.2, 0.8), "b": (0.3, 0.4),
                                                "c": (0.5, 0.6), "d": (0.3, 0.4)}))
    assert sorted(dag.nodes) == ["a", "b", "c"]
    assert dag.members["b"] == ["b", "d"]
    assert sorted(dag.children["a"]) == ["b", "c"]
    assert dag.regions["a"] == [(0.2, 0.3), (0.4, 0.5), (0.6, 0.8)]
    assert dag.unconstrained == [(0.0, 0.2), (0.8, 1.0)]
    total = sum(dag.region_length(k) for k in dag.nodes)
    total += sum(hi - lo for lo, hi in dag.unconstrained)
    assert total == pytest.approx(1.0)
    assert dag.node_of("d") == "b"
    with pytest.raises(MissingDataError):
        dag.node_of("zz")


def test_isolated_measure_recursion():
    dag = build_dag_and_regions(IntervalFamily({0: (0, 0.5), 1: (0, 1)}))
    inner = EmpiricalMeasure([0.0, 1.0], [0.5, 0.5])
    outer = EmpiricalMeasure([0.0, 1.0], [0.25, 0.75])
    iso = isolated_measures(dag, {0: inner, 1: outer})
    # (1 * outer - 0.5 * inner) / 0.5 = (0, 1)
    assert iso[1].atoms.tolist() == [1.0] and iso[1].weights.tolist() == [1.0]
    assert iso.mass_residual[1] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(MissingDataError):
        isolated_measures(dag, {0: inner})
    with pytest.raises(DegenerateGapError):
        covered = IntervalFamily({0: (0, 0.5), 1: (0.5, 1), 2: (0, 1)})
        isolated_measures(build_dag_and_regions(covered), {0: inner, 1: inner, 2: inner},
                          require=[2])
    tied = build_dag_and_regions(IntervalFamily({0: (0, 1), 1: (0, 1)}))
    with pytest.raises(ConsistencyError):
        isolated_measures(tied, {0: outer, 1: inner})


def test_strict_monotone_examples():
    one = StepWeight.constant()
    ident = [(0.0, 0.5)]
    assert bound_strict_monotone(lambda u: u, ident, one, 0, 1, "lower") == pytest.approx(0.125)
    assert bound_strict_monotone(lambda u: u, ident, one, 0, 1, "upper") == pytest.approx(0.625)
    # the indicator route agrees with the interval route
    ind = lambda u: u <= 0.5  # noqa: E731
    assert bound_strict_monotone(lambda u: u, ind, one, 0, 1, "upper") == pytest.approx(
        0.625, abs=1e-6)
    neg = StepWeight([0, 0.5, 1], [1.0, -1.0])
    # identified part 0.125, unidentified part -1 * [0, 1] * 0.5
    assert bound_strict_monotone(lambda u: u, ident, neg, 0, 1, "lower") == pytest.approx(-0.375)


def test_aggregation_helpers():
    vals = {(0, "x1"): 1.0, (1, "x1"): 2.0, (0, "x2"): 3.0}
    assert aggregate_levels(vals, {"x1": 0.5, "x2": 0.5}) == pytest.approx(3.0)
    assert aggregate_levels({(0, None): 1.5}) == 1.5
    assert integrate_over_treatments([0, 1, 2], [0, 1, 2]) == pytest.approx(2.0)


def _binary_as_ordered(pop, arm):
    if arm == "treated":
        fam = {k: (0.0, p) for k, p in enumerate(pop.levels)}
        obs = {k: pop.conditional(p, 1) for k, p in enumerate(pop.levels)}
    else:
        fam = {k: (p, 1.0) for k, p in enumerate(pop.levels)}
        obs = {k: pop.conditional(p, 0) for k, p in enumerate(pop.levels)}
    dag = build_dag_and_regions(IntervalFamily(fam))
    return dag, isolated_measures(dag, obs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_binary_treatment_as_ordered_choice(seed):
    rng = np.random.default_rng(seed)
    pop = random_population(rng, k_min=3, k_max=5)
    layout, data, _ = pop.gap_data()
    b = np.unique(np.concatenate([[0, 1], rng.uniform(0, 1, 3)]))
    w = StepWeight(b, rng.normal(size=b.size - 1))
    for arm in ("treated", "untreated"):
        dag, iso = _binary_as_ordered(pop, arm)
        ref = arm_bounds(layout, data, w, pop.y_min, pop.y_max, arm)
        lo = bound_ordered_choice(dag, iso, w, pop.y_min, pop.y_max, "lower")
        hi = bound_ordered_choice(dag, iso, w, pop.y_min, pop.y_max, "upper")
        assert lo == pytest.approx(ref.lower, abs=1e-9)
        assert hi == pytest.approx(ref.upper, abs=1e-9)
