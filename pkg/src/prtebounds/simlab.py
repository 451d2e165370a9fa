"""Synthetic data-generating processes, ground truth and experiment runner.

Each DGP is a threshold-crossing model ``W = 1(U <= p(Z))`` with ``U``
uniform and independent of ``Z``. Potential outcomes are either linear in
``U`` plus independent uniform noise, or Bernoulli with a success
probability linear in ``U``. That structure gives closed forms for the
ground truth, the identified complier laws and the conditional means, which
the population bounds and the tests rely on.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .baseline import survival_kernel
from .data import Dataset
from .errors import BoundsError, ValidationError
from .measures import EmpiricalMeasure
from .roy import ArmData, GapData, LivSegment, identified_bounds, make_layout
from .weights import PolicySpec, StepWeight, prte_weight

KINDS = ("continuous_logistic", "discrete_two_point", "pointmass_zero", "bednet_like")

BEDNET_PRICES = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 150, 190, 250)

DEFAULTS = {
    "continuous_logistic": dict(beta0=-1.0, beta1=2.0, slope=0.5, effect=0.5, noise=0.5,
                                y_min=-1.0, y_max=2.0),
    "discrete_two_point": dict(p_low=0.25, p_high=0.75, prob_high=0.5, base=0.1,
                               base_slope=0.22, effect=0.48, effect_slope=0.18, noise=0.1,
                               y_min=0.0, y_max=1.0),
    "pointmass_zero": dict(p_low=0.25, p_high=0.75, prob_high=0.5, y_min=-1.0, y_max=1.0),
    # illustrative constants: take-up falls linearly from 0.85 at price 0 to
    # 0.23 at price 150, more slowly beyond; usage falls with resistance
    "bednet_like": dict(p_free=0.85, p_ref=0.23, ref_price=150.0, tail_slope=0.001,
                        use_treated=0.9, use_treated_slope=-0.4, use_untreated=0.1,
                        y_min=0.0, y_max=1.0),
}

TAGS = {"z": 1, "u": 2, "eps": 3, "y1": 4, "y0": 5}


@dataclass(frozen=True)
class DgpSpec:
    """Kind, sample size, seed and parameter overrides of a synthetic DGP."""

    kind: str
    n: int = 1000
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown DGP kind {self.kind!r}")
        if int(self.n) < 1:
            raise ValidationError("n must be at least 1")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValidationError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    @property
    def resolved(self):
        return {**DEFAULTS[self.kind], **self.params}

    def with_n(self, n):
        return replace(self, n=int(n))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def stream(seed, tag):
    """Counter-based generator for one variable; draw ``i`` belongs to row ``i``."""
    ss = np.random.SeedSequence([int(seed) & (2**63 - 1), TAGS.get(tag, tag)])
    return np.random.Generator(np.random.Philox(ss))


def bednet_propensity(price, prm=None):
    prm = prm or DEFAULTS["bednet_like"]
    price = np.asarray(price, dtype=float)
    ref = prm["ref_price"]
    inner = prm["p_free"] + (prm["p_ref"] - prm["p_free"]) * np.minimum(price, ref) / ref
    return inner - prm["tail_slope"] * np.maximum(price - ref, 0.0)


# ---------------------------------------------------------------------------
# population models


@dataclass(frozen=True)
class LinearArm:
    """``Y(w) = intercept + slope * U + eps`` with ``eps ~ Unif(-noise, noise)``."""

    intercept: float
    slope: float
    noise: float = 0.0

    def mtr(self, u):
        return self.intercept + self.slope * u

    def cumulative(self, u):
        return self.intercept * u + 0.5 * self.slope * u * u

    def cdf(self, y, a, b):
        """CDF of the outcome for ``U`` uniform on ``(a, b)``."""
        y = np.asarray(y, dtype=float)
        e, c0, c1 = self.noise, self.intercept, self.slope
        if c1 == 0.0 or b == a:
            t = y - c0 - c1 * a
            return np.clip((t + e) / (2 * e), 0, 1) if e > 0 else (t >= 0).astype(float)
        if e == 0.0:
            lo, hi = sorted((c0 + c1 * a, c0 + c1 * b))
            return np.clip((y - lo) / (hi - lo), 0, 1)

        def H(t):  # antiderivative of the noise CDF
            return np.where(t < -e, 0.0, np.where(t > e, t, (t + e) ** 2 / (4 * e)))

        return (H(y - c0 - c1 * a) - H(y - c0 - c1 * b)) / (c1 * (b - a))

    def law(self, a, b, n_atoms=2000):
        """Quantile-midpoint discretization of the outcome law on ``U in (a, b)``."""
        if self.noise == 0.0 and self.slope == 0.0:
            return EmpiricalMeasure.point(self.intercept)
        t = (np.arange(n_atoms) + 0.5) / n_atoms
        ends = [self.intercept + self.slope * a, self.intercept + self.slope * b]
        lo = np.full(n_atoms, min(ends) - self.noise)
        hi = np.full(n_atoms, max(ends) + self.noise)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid, a, b) < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return EmpiricalMeasure(0.5 * (lo + hi), np.full(n_atoms, 1.0 / n_atoms))


@dataclass(frozen=True)
class BernoulliArm:
    """``Y(w) ~ Bernoulli(intercept + slope * U)``."""

    intercept: float
    slope: float

    def mtr(self, u):
        return self.intercept + self.slope * u

    def cumulative(self, u):
        return self.intercept * u + 0.5 * self.slope * u * u

    def law(self, a, b, n_atoms=None):
        m = (self.cumulative(b) - self.cumulative(a)) / (b - a)
        return EmpiricalMeasure([0.0, 1.0], [1.0 - m, m])


@dataclass
class Population:
    """Closed-form description of a DGP's observable law.

    ``labels``/``p_values``/``probs`` describe a discrete instrument; for a
    continuous one ``p_of_z`` maps ``Z ~ Unif(0, 1)`` to the propensity.
    """

    treated: object
    untreated: object
    y_min: float
    y_max: float
    labels: tuple = ()
    p_values: np.ndarray | None = None
    probs: np.ndarray | None = None
    p_of_z: object = None
    z_of_p: object = None

    @property
    def discrete(self):
        return self.p_of_z is None

    def arm(self, w):
        return self.treated if w == 1 else self.untreated

    def p_range(self):
        if self.discrete:
            return float(self.p_values.min()), float(self.p_values.max())
        return float(self.p_of_z(0.0)), float(self.p_of_z(1.0))

    def layout(self):
        if self.discrete:
            return make_layout(np.unique(self.p_values))
        return make_layout([self.p_range()])

    def weight(self, policy: PolicySpec, grid=20000):
        """PRTE weight ``P(q(Z) >= u) - P(p(Z) >= u)``."""
        if self.discrete:
            return prte_weight((self.p_values, self.probs, list(self.labels)), policy)
        lo, hi = self.p_range()
        if policy.kind == "uniform_shift":
            a = policy.alpha
            F = lambda v: np.clip(self.z_of_p(np.clip(v, 1e-300, 1 - 1e-16)), 0, 1) \
                if 0 < v < 1 else float(v >= 1)  # noqa: E731
            pts = np.concatenate([np.linspace(0, 1, grid + 1), [lo, hi, lo + a, hi + a]])
            pts = pts[(pts > 0) & (pts < 1)]
            return StepWeight.from_function(pts, lambda u: F(u) - F(u - a))
        z = (np.arange(grid) + 0.5) / grid
        return prte_weight((self.p_of_z(z), np.full(grid, 1.0 / grid)), policy)

    def gap_data(self, n_atoms=2000):
        layout = self.layout()
        arms = {}
        for w, name in ((1, "treated"), (0, "untreated")):
            model = self.arm(w)
            measures = [model.law(lo, hi, n_atoms) if hi > lo else None
                        for lo, hi in layout.gaps(name)]
            liv = [LivSegment(model.mtr, model.cumulative) for _ in layout.intervals]
            arms[name] = ArmData(measures, liv)
        return layout, GapData(arms["treated"], arms["untreated"])

    def truth(self, policy: PolicySpec):
        """``E[Y(q) - Y(p)]``: the MTE integrated between ``p(Z)`` and ``q(Z)``."""

        def gain(p, z=None):
            q = policy.apply(p, z)
            d1 = self.treated.cumulative(q) - self.treated.cumulative(p)
            d0 = self.untreated.cumulative(q) - self.untreated.cumulative(p)
            return d1 - d0

        if self.discrete:
            vals = gain(self.p_values, np.asarray(self.labels, dtype=object))
            return float(np.dot(self.probs, vals))
        lo, hi = self.p_range()
        kinks = []
        if policy.kind == "uniform_shift":
            for edge in (-policy.alpha, 1 - policy.alpha):
                if lo < edge < hi:
                    kinks.append(float(self.z_of_p(edge)))
        val, _ = integrate.quad(lambda z: float(gain(np.array(self.p_of_z(z)))), 0.0, 1.0,
                                points=kinks or None, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)

    def moments(self, bins=2):
        """Population MR moments ``(w, kernel, value)`` with ``int m_w kernel = value``.

        Discrete instruments give one treated and one untreated moment per
        propensity level; continuous instruments use ``bins`` equal-probability
        bins of ``Z``.
        """
        out = []
        if self.discrete:
            for p, pr in zip(self.p_values, self.probs):
                out.append((1, StepWeight.indicator(0.0, p, pr),
                            pr * self.treated.cumulative(p)))
                out.append((0, StepWeight.indicator(p, 1.0, pr),
                            pr * (self.untreated.cumulative(1.0) - self.untreated.cumulative(p))))
            return out
        grid = 4000
        edges = np.linspace(0.0, 1.0, bins + 1)
        for b in range(bins):
            z = edges[b] + (np.arange(grid) + 0.5) / grid * (edges[b + 1] - edges[b])
            p = self.p_of_z(z)
            pr = np.full(grid, (edges[b + 1] - edges[b]) / grid)
            for w in (1, 0):
                kern = survival_kernel(p, pr, treated=(w == 1))
                model = self.arm(w)
                val = np.dot(pr, model.cumulative(p)) if w == 1 else \
                    np.dot(pr, model.cumulative(1.0) - model.cumulative(p))
                out.append((w, kern, float(val)))
        return out


def population(spec: DgpSpec) -> Population:
    prm = spec.resolved
    if spec.kind == "continuous_logistic":
        b0, b1 = prm["beta0"], prm["beta1"]
        t1 = LinearArm(prm["effect"], prm["slope"], prm["noise"])
        t0 = LinearArm(0.0, prm["slope"], prm["noise"])
        p_of_z = lambda z: 1.0 / (1.0 + np.exp(-(b0 + b1 * np.asarray(z, float))))  # noqa
        z_of_p = lambda p: (np.log(p / (1 - p)) - b0) / b1  # noqa: E731
        return Population(t1, t0, prm["y_min"], prm["y_max"], p_of_z=p_of_z, z_of_p=z_of_p)
    if spec.kind == "discrete_two_point":
        t0 = LinearArm(prm["base"], prm["base_slope"], prm["noise"])
        t1 = LinearArm(prm["base"] + prm["effect"], prm["base_slope"] + prm["effect_slope"],
                       prm["noise"])
        return Population(t1, t0, prm["y_min"], prm["y_max"], (0, 1),
                          np.array([prm["p_low"], prm["p_high"]]),
                          np.array([1 - prm["prob_high"], prm["prob_high"]]))
    if spec.kind == "pointmass_zero":
        zero = LinearArm(0.0, 0.0, 0.0)
        return Population(zero, zero, prm["y_min"], prm["y_max"], (0, 1),
                          np.array([prm["p_low"], prm["p_high"]]),
                          np.array([1 - prm["prob_high"], prm["prob_high"]]))
    labels = BEDNET_PRICES
    t1 = BernoulliArm(prm["use_treated"], prm["use_treated_slope"])
    t0 = BernoulliArm(prm["use_untreated"], 0.0)
    return Population(t1, t0, prm["y_min"], prm["y_max"], labels,
                      bednet_propensity(labels, prm), np.full(len(labels), 1.0 / len(labels)))


def generate(spec: DgpSpec) -> Dataset:
    """Draw a dataset; identical specs give bit-identical data."""
    n, prm = int(spec.n), spec.resolved
    pop = population(spec)
    u = stream(spec.seed, "u").random(n)
    zdraw = stream(spec.seed, "z").random(n)
    if spec.kind == "continuous_logistic":
        z = zdraw
        p = pop.p_of_z(z)
    elif spec.kind == "bednet_like":
        idx = np.minimum((zdraw * len(BEDNET_PRICES)).astype(int), len(BEDNET_PRICES) - 1)
        z = np.asarray(BEDNET_PRICES, dtype=float)[idx]
        p = pop.p_values[idx]
    else:
        z = (zdraw < prm["prob_high"]).astype(float)
        p = np.where(z == 1.0, prm["p_high"], prm["p_low"])
    w = (u <= p).astype(np.int8)
    if spec.kind == "bednet_like":
        y1 = (stream(spec.seed, "y1").random(n) < pop.treated.mtr(u)).astype(float)
        y0 = (stream(spec.seed, "y0").random(n) < pop.untreated.mtr(u)).astype(float)
        y = np.where(w == 1, y1, y0)
    else:
        eps = (2.0 * stream(spec.seed, "eps").random(n) - 1.0) * prm.get("noise", 0.0)
        y = np.where(w == 1, pop.treated.mtr(u), pop.untreated.mtr(u)) + eps
        if spec.kind == "pointmass_zero":
            y = np.zeros(n)
    kind = "continuous" if spec.kind == "continuous_logistic" else "discrete"
    return Dataset(y, w, z, None, prm["y_min"], prm["y_max"], kind)


def uniform_shift(alpha):
    return PolicySpec("uniform_shift", float(alpha))


def true_theta(spec: DgpSpec, alpha, policy: PolicySpec | None = None) -> float:
    """Ground truth ``E[Y(q) - Y(p)]`` for the clipped uniform shift ``alpha``."""
    policy = policy or uniform_shift(alpha)
    if policy.is_null():
        return 0.0
    return population(spec).truth(policy)


def population_bounds(spec: DgpSpec, alpha, policy=None, n_atoms=2000):
    """Sharp bounds evaluated on the closed-form population law."""
    policy = policy or uniform_shift(alpha)
    pop = population(spec)
    layout, data = pop.gap_data(n_atoms)
    return identified_bounds(layout, data, pop.weight(policy), pop.y_min, pop.y_max)


# ---------------------------------------------------------------------------
# experiment runner

METHODS = ("ivot_closed_form", "ivot_dml", "ivot_continuous", "mr_baseline")
HEADER = ("alpha", "truth", "method", "lower", "upper", "se_lower", "se_upper", "covered")
DEFAULT_ALPHAS = tuple(np.round(np.arange(-12, 13) / 100.0, 2))


@dataclass
class ResultRow:
    alpha: float
    truth: float
    method: str
    lower: float = float("nan")
    upper: float = float("nan")
    se_lower: float = float("nan")
    se_upper: float = float("nan")
    error: str = ""
    tol: float = 0.0

    @property
    def covered(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            return False
        return bool(self.lower - self.tol <= self.truth <= self.upper + self.tol)

    def as_tuple(self):
        return (self.alpha, self.truth, self.method, self.lower, self.upper,
                self.se_lower, self.se_upper, self.covered)


def _estimate(method, ds, spec, policy, options):
    from .baseline import mr_bounds_from_data
    from .continuous import ContConfig, continuous_estimate
    from .dml import DmlConfig, dml_estimate
    from .plugin import closed_form_from_data

    if method == "ivot_closed_form":
        b = closed_form_from_data(ds, policy)
        return b.lower, b.upper, float("nan"), float("nan")
    if method == "ivot_dml":
        cfg = DmlConfig(policy=policy, **options.get("dml", {}))
        r = dml_estimate(ds, cfg)
        return r.lower.point, r.upper.point, r.lower.se, r.upper.se
    if method == "ivot_continuous":
        cfg = ContConfig(policy=policy, **options.get("continuous", {}))
        b = continuous_estimate(ds, cfg)
        return b.lower, b.upper, float("nan"), float("nan")
    if method == "mr_baseline":
        b = mr_bounds_from_data(ds, policy, **options.get("mr", {}))
        return b.lower, b.upper, float("nan"), float("nan")
    raise ValidationError(f"unknown method {method!r}")


def run_experiment(spec: DgpSpec, alphas=DEFAULT_ALPHAS, methods=("ivot_closed_form",),
                   seeds=None, options=None, tol=0.0, workers=1):
    """Simulate and estimate over an ``alpha`` grid.

    One dataset is drawn per seed (default: the design's own seed) and reused
    across the grid, mirroring a fixed sample evaluated under many
    policies. Estimator failures are recorded in the row's ``error`` field
    instead of aborting the grid. With ``workers > 1`` the grid points run
    in a thread pool; rows come back in grid order and are identical to a
    sequential run.
    """
    options = options or {}
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValidationError(f"unknown methods {sorted(bad)}")
    seeds = [spec.seed] if seeds is None else list(seeds)

    def point(ds, alpha):
        policy = uniform_shift(alpha)
        truth = true_theta(spec, alpha)
        out = []
        for method in methods:
            row = ResultRow(float(alpha), truth, method, tol=tol)
            try:
                row.lower, row.upper, row.se_lower, row.se_upper = _estimate(
                    method, ds, spec, policy, options)
            except BoundsError as exc:
                row.error = f"{type(exc).__name__}: {exc}"
            out.append(row)
        return out

    rows = []
    for seed in seeds:
        ds = generate(spec.with_seed(seed))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=int(workers)) as pool:
                parts = list(pool.map(lambda a: point(ds, a), alphas))
        else:
            parts = [point(ds, a) for a in alphas]
        for part in parts:
            rows.extend(part)
    return rows


def _num(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def rows_to_csv(rows, path=None):
    """Write rows with the fixed header; returns the text when ``path`` is None."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(HEADER)
    for r in rows:
        out.writerow([_num(v) for v in r.as_tuple()])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
