import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prtebounds.errors import ValidationError
from prtebounds.learners import fit_learner, parse_kind, weighted_lower_quantile


def test_linear_slope():
    x = np.linspace(0, 1, 50)
    for kind in ("least_squares", "ridge(1e-9)"):
        m = fit_learner(kind, x[:, None], 2 * x)
        np.testing.assert_allclose(m.predict([[0.0], [1.0]]), [0.0, 2.0], atol=1e-6)


def test_pinball_median_and_constant():
    y = np.array([1.0, 2.0, 3.0, 100.0])
    m = fit_learner("pinball_quantile(0.5)", np.zeros((4, 0)), y)
    assert m.predict(np.zeros((1, 0)))[0] == 2.0
    c = fit_learner("constant", np.zeros((4, 1)), y)
    assert c.predict([[5.0]])[0] == pytest.approx(26.5)
    assert weighted_lower_quantile(y, np.array([1, 1, 1, 5.0]), 0.5) == 100.0


def test_logistic_recovers_probabilities():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 20000).astype(float)
    p = np.where(x == 1, 0.8, 0.3)
    w = (rng.uniform(size=x.size) < p).astype(float)
    m = fit_learner("logistic", x[:, None], w)
    np.testing.assert_allclose(m.predict([[0.0], [1.0]]), [0.3, 0.8], atol=0.02)


def test_knn_weighted_average():
    x = np.array([0.0, 0.1, 5.0, 5.1])
    y = np.array([1.0, 3.0, 10.0, 20.0])
    m = fit_learner("knn(2)", x[:, None], y)
    np.testing.assert_allclose(m.predict([[0.05], [5.05]]), [2.0, 15.0])


def test_parse_and_errors():
    assert parse_kind("ridge(0.5)") == ("ridge", {"lam": 0.5})
    assert parse_kind(("knn", 3)) == ("knn", {"k": 3})
    with pytest.raises(ValidationError):
        parse_kind("forest")
    with pytest.raises(ValidationError):
        parse_kind("logistic(2)")
    with pytest.raises(ValidationError):
        fit_learner("constant", np.zeros((2, 1)), [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        fit_learner("constant", np.zeros((2, 1)), [1.0, 2.0], [-1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=30), st.floats(0.05, 0.95))
def test_quantile_matches_sorted_sample(ys, tau):
    y = np.asarray(ys)
    q = weighted_lower_quantile(y, np.ones(y.size), tau)
    s = np.sort(y)
    assert q == s[int(np.ceil(tau * y.size - 1e-12)) - 1]


def test_deterministic():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 2))
    y = X @ [1.0, -1.0] + rng.normal(size=200)
    a = fit_learner("pinball_quantile(0.3)", X, y).predict(X)
    b = fit_learner("pinball_quantile(0.3)", X, y).predict(X)
    assert np.array_equal(a, b)
