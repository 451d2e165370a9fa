"""Plug-in bounds for a continuous instrument.

Three folds: the propensity and its range on ``I0``; a kernel grid for
``g1(u, x) = E[Y W | p = u, x]`` and the boundary quantile function on
``I1``; averaging on ``I2``. For each evaluation row the treated-arm lower
bound integrand is

* ``-pl * int_{min(1, q/pl)}^1 Q(s) ds`` (coupling on the gap below ``pl``),
* ``g1(clip(q, pl, pu)) - g1(p)`` (identified interval),
* ``y_min * max(0, q - pu)`` (region above the propensity range),

where ``pl``/``pu`` are the smallest/largest propensities. The upper bound
uses ``Q(1 - s)`` and ``y_max``. The untreated arm is the same computation
on the reflected problem ``W -> 1 - W``, ``p -> 1 - p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import InsufficientDataError, ValidationError
from .learners import fit_learner, weighted_lower_quantile
from .roy import BoundPair
from .weights import PolicySpec


@dataclass
class ContConfig:
    """Settings for ``continuous_estimate``; ``None`` means the rate-based default."""

    policy: PolicySpec = field(default_factory=PolicySpec)
    kernel: str = "epanechnikov"
    bandwidth: float | None = None
    delta: float | None = None
    grid: int | None = None
    local_degree: int = 1
    prop_learner: str = "logistic"
    g_learner: str = "auto"
    q_learner: str = "auto"
    seed: int = 0
    min_local: int = 30
    cross_fit: bool = False

    def __post_init__(self):
        if self.kernel not in ("epanechnikov", "gaussian"):
            raise ValidationError("kernel must be epanechnikov or gaussian")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValidationError("bandwidth must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValidationError("delta must be positive")
        if self.grid is not None and self.grid < 2:
            raise ValidationError("grid size M must be at least 2")
        if self.local_degree not in (0, 1):
            raise ValidationError("local_degree must be 0 or 1")

    def resolved(self, n1):
        h = self.bandwidth if self.bandwidth is not None else n1 ** (-1 / 5)
        delta = self.delta if self.delta is not None else n1 ** (-1 / 3)
        M = self.grid if self.grid is not None else max(2, math.ceil(math.sqrt(n1 * h)))
        return h, delta, M


def kernel_weights(t, kind="epanechnikov"):
    t = np.asarray(t, dtype=float)
    if kind == "epanechnikov":
        return 0.75 * np.clip(1.0 - t * t, 0.0, None)
    return np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def pava(values, weights=None):
    """Weighted isotonic (non-decreasing) least-squares fit by pooling."""
    v = np.asarray(values, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    means, wts, sizes = [], [], []
    for vi, wi in zip(v, w):
        means.append(vi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wts.pop(), sizes.pop()
            tot = wts[-1] + w2
            means[-1] = (means[-1] * wts[-1] + m2 * w2) / tot if tot > 0 else 0.5 * (means[-1] + m2)
            wts[-1] = tot
            sizes[-1] += s2
    return np.repeat(means, sizes)


def _interp_rows(nodes, u):
    """Linear interpolation of per-row node values at ``u`` (uniform grid on [0, 1])."""
    M = nodes.shape[1] - 1
    pos = np.clip(np.asarray(u, float), 0.0, 1.0) * M
    m = np.minimum(pos.astype(int), M - 1)
    lam = pos - m
    rows = np.arange(nodes.shape[0])
    return (1.0 - lam) * nodes[rows, m] + lam * nodes[rows, m + 1]


def _integral_to(nodes, a):
    """``int_0^a`` of the per-row piecewise-linear interpolant, exactly."""
    M = nodes.shape[1] - 1
    seg = 0.5 * (nodes[:, 1:] + nodes[:, :-1]) / M
    cum = np.concatenate([np.zeros((nodes.shape[0], 1)), np.cumsum(seg, axis=1)], axis=1)
    a = np.clip(np.asarray(a, float), 0.0, 1.0)
    pos = a * M
    m = np.minimum(pos.astype(int), M - 1)
    rows = np.arange(nodes.shape[0])
    left = nodes[rows, m]
    at_a = _interp_rows(nodes, a)
    return cum[rows, m] + (a - m / M) * 0.5 * (left + at_a)


@dataclass
class G1Grid:
    """Node fits ``f_m`` at ``u_m = m / M``; evaluation interpolates linearly in ``u``."""

    M: int
    models: list
    flags: dict = field(default_factory=dict)

    @property
    def nodes(self):
        return np.arange(self.M + 1) / self.M

    def node_values(self, X):
        X = np.asarray(X, dtype=float)
        cols = []
        for kind, model in self.models:
            if kind == "local_linear":
                cols.append(model.predict(np.column_stack([np.zeros(X.shape[0]), X])))
            else:
                cols.append(model.predict(X))
        return np.column_stack(cols)

    def __call__(self, u, X):
        return _interp_rows(self.node_values(X), u)

    def lipschitz(self, X):
        """``M * max_m |f_{m+1} - f_m|`` over the rows of ``X``."""
        vals = self.node_values(X)
        return float(self.M * np.max(np.abs(np.diff(vals, axis=1))))


def fit_g1_grid(target, p_hat, X, kernel="epanechnikov", h=0.2, M=10, learner="auto",
                local_degree=1) -> G1Grid:
    """Kernel-weighted fits of ``target`` (``Y W``) at each grid node.

    Parameters
    ----------
    target : ndarray
        ``Y * W`` on the nuisance fold.
    p_hat : ndarray
        Estimated propensities of the same rows (fitted on another fold).
    X : ndarray, shape (n, d)
    kernel : {"epanechnikov", "gaussian"}
    h : float
    M : int
    learner : str
        Covariate learner; ``"auto"`` is least squares (constant without
        covariates).
    local_degree : {0, 1}
        ``1`` adds the centred propensity as a regressor (local linear),
        which removes the first-order boundary bias of the local mean.
    """
    target = np.asarray(target, float)
    if target.size == 0:
        raise InsufficientDataError("empty fold for the g1 grid")
    if h <= 0 or M < 2:
        raise ValidationError("need h > 0 and M >= 2")
    X = np.asarray(X, dtype=float).reshape(target.size, -1)
    d = X.shape[1]
    base = ("constant" if d == 0 else "least_squares") if learner == "auto" else learner
    models, fitted, flags = [], [], {}
    for m in range(M + 1):
        u = m / M
        w = kernel_weights((u - p_hat) / h, kernel)
        if w.sum() < 1e-6:
            models.append(None)
            continue
        fitted.append(m)
        spread = np.sum(w * (p_hat - u) ** 2) / w.sum()
        if local_degree == 1 and base in ("constant", "least_squares", "ridge") and spread > 1e-12:
            kind = "least_squares" if base == "constant" else base
            feats = np.column_stack([p_hat - u, X])
            models.append(("local_linear", fit_learner(kind, feats, target, w)))
        else:
            models.append(("local_mean", fit_learner(base, X, target, w)))
    if not fitted:
        raise InsufficientDataError("no grid node has kernel weight")
    inherited = []
    for m in range(M + 1):
        if models[m] is None:
            nearest = min(fitted, key=lambda j: (abs(j - m), j))
            models[m] = models[nearest]
            inherited.append(m)
    if inherited:
        flags["inherited_nodes"] = inherited
    return G1Grid(M, models, flags)


@dataclass
class BoundaryQuantile:
    """Quantile function at the lower propensity boundary on levels ``m / M``."""

    M: int
    models: list

    def node_values(self, X):
        X = np.asarray(X, dtype=float)
        vals = np.column_stack([mdl.predict(X) for mdl in self.models])
        bad = np.flatnonzero(np.any(np.diff(vals, axis=1) < 0, axis=1))
        for i in bad:
            vals[i] = pava(vals[i])
        return vals

    def __call__(self, t, X):
        return _interp_rows(self.node_values(X), t)

    def integral(self, a, b, X):
        """``int_a^b Q(s) ds`` per row (exact for the interpolant)."""
        vals = self.node_values(X)
        return _integral_to(vals, b) - _integral_to(vals, a)


def fit_boundary_quantile(y, w, p_hat, p_lower, X, delta, M, learner="auto", min_rows=30):
    """Quantiles of treated outcomes whose propensity is within ``delta`` of the minimum.

    Levels ``0`` and ``1`` map to the smallest and largest localized outcome.
    """
    y = np.asarray(y, float)
    X = np.asarray(X, dtype=float).reshape(y.size, -1)
    sel = (np.asarray(w) == 1) & (p_hat <= p_lower + delta)
    if int(sel.sum()) < min_rows:
        raise InsufficientDataError(
            f"only {int(sel.sum())} treated rows near the propensity boundary (< {min_rows})")
    ys, Xs = y[sel], X[sel]
    kind = "pinball_quantile" if learner == "auto" else learner
    models = []
    for m in range(M + 1):
        models.append(fit_learner((kind, m / M), Xs, ys))
    return BoundaryQuantile(M, models)


def _strata(X):
    if X.shape[1] == 0:
        return np.zeros(X.shape[0], dtype=int), 1
    _, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.ravel()
    return inv, int(inv.max()) + 1


def propensity_range(p_all, X_all):
    """Per-row smallest and largest propensity within the row's covariate stratum."""
    strata, s = _strata(X_all)
    if s > max(1, X_all.shape[0] // 5):
        raise ValidationError("propensity range needs discrete covariate strata")
    lo = np.full(s, np.inf)
    hi = np.full(s, -np.inf)
    np.minimum.at(lo, strata, p_all)
    np.maximum.at(hi, strata, p_all)
    return lo[strata], hi[strata]


@dataclass
class ArmFit:
    g1: G1Grid
    quantile: BoundaryQuantile | None


def _arm_terms(fit: ArmFit, p, q, pl, pu, X, y_min, y_max, side):
    """Per-row integrand of one side of the (reflected-)treated arm bound."""
    n = p.size
    psi2 = fit.g1(np.clip(q, pl, pu), X) - fit.g1(p, X)
    bound = y_min if side == "lower" else y_max
    psi3 = bound * np.maximum(0.0, q - pu)
    psi1 = np.zeros(n)
    flagged = 0
    need = q < pl
    if np.any(need):
        if fit.quantile is None:
            raise InsufficientDataError("boundary quantile needed but not fitted")
        safe = pl > 0
        flagged = int(np.sum(need & ~safe))
        rows = np.flatnonzero(need & safe)
        s0 = np.clip(q[rows] / pl[rows], 0.0, 1.0)
        Xr = X[rows]
        if side == "lower":
            integ = fit.quantile.integral(s0, np.ones(rows.size), Xr)
        else:  # int_{s0}^1 Q(1 - s) ds = int_0^{1 - s0} Q(t) dt
            integ = fit.quantile.integral(np.zeros(rows.size), 1.0 - s0, Xr)
        psi1[rows] = -pl[rows] * integ
    return psi1, psi2, psi3, flagged


@dataclass
class ContinuousFit:
    """Fitted nuisances; ``bounds(policy)`` evaluates on the evaluation fold."""

    config: ContConfig
    prop_model: object
    arms: dict
    eval_z: np.ndarray
    eval_x: np.ndarray
    p_eval: np.ndarray
    pl_eval: np.ndarray
    pu_eval: np.ndarray
    y_min: float
    y_max: float
    settings: dict = field(default_factory=dict)

    def terms(self, policy: PolicySpec):
        """Per-row components ``{(arm, side): (psi1, psi2, psi3)}``."""
        p, pl, pu, X = self.p_eval, self.pl_eval, self.pu_eval, self.eval_x
        q = np.asarray(policy.apply(p, self.eval_z), dtype=float)
        out, flagged = {}, 0
        for arm, (pp, qq, lo, hi) in (("treated", (p, q, pl, pu)),
                                      ("untreated", (1 - p, 1 - q, 1 - pu, 1 - pl))):
            for side in ("lower", "upper"):
                *parts, f = _arm_terms(self.arms[arm], pp, qq, lo, hi, X,
                                       self.y_min, self.y_max, side)
                out[(arm, side)] = tuple(parts)
                flagged += f
        return out, flagged

    def bounds(self, policy: PolicySpec) -> BoundPair:
        terms, flagged = self.terms(policy)
        comp = {}
        vals = {}
        for side in ("lower", "upper"):
            tot = 0.0
            for arm in ("treated", "untreated"):
                parts = [float(np.mean(t)) for t in terms[(arm, side)]]
                comp[f"{arm}_{side}"] = {"quantile_term": parts[0], "g1_term": parts[1],
                                         "tail_term": parts[2]}
                tot += sum(parts)
            vals[side] = tot
        comp["zero_boundary_rows"] = flagged
        comp["settings"] = dict(self.settings)
        lower, upper = vals["lower"], vals["upper"]
        if lower > upper:
            comp["ordering_violation"] = lower - upper
            lower = upper = 0.5 * (lower + upper)
        return BoundPair(lower, upper, comp)


def _features(z, x):
    return np.column_stack([np.asarray(z, float), x])


def _fit_folds(ds, config, i0, i1, i2) -> ContinuousFit:
    f0, f1, f2 = ds.subset(i0), ds.subset(i1), ds.subset(i2)
    if np.all(f0.w == f0.w[0]):
        raise InsufficientDataError("propensity fold has a single treatment value")
    prop = fit_learner(config.prop_learner, _features(f0.z, f0.x), f0.w.astype(float))
    p_all = np.clip(prop.predict(_features(ds.z, ds.x)), 0.0, 1.0)
    pl_all, pu_all = propensity_range(p_all, ds.x)
    h, delta, M = config.resolved(f1.n)
    p1 = p_all[i1]
    arms = {}
    for arm, w1, pp, pl in (("treated", f1.w, p1, pl_all[i1]),
                            ("untreated", 1 - f1.w, 1 - p1, 1 - pu_all[i1])):
        g1 = fit_g1_grid(f1.y * w1, pp, f1.x, config.kernel, h, M, config.g_learner,
                         config.local_degree)
        try:
            bq = fit_boundary_quantile(f1.y, w1, pp, pl, f1.x, delta, M, config.q_learner,
                                       config.min_local)
        except InsufficientDataError:
            bq = None  # only needed when some q falls below the range
        arms[arm] = ArmFit(g1, bq)
    settings = {"bandwidth": h, "delta": delta, "grid": M, "kernel": config.kernel,
                "local_degree": config.local_degree, "folds": [i0.size, i1.size, i2.size]}
    return ContinuousFit(config, prop, arms, f2.z, f2.x, p_all[i2], pl_all[i2], pu_all[i2],
                         ds.y_min, ds.y_max, settings)


@dataclass
class RotatedFit:
    """Three fits with the fold roles rotated; bounds are averaged."""

    fits: list

    @property
    def settings(self):
        return self.fits[0].settings

    def bounds(self, policy: PolicySpec) -> BoundPair:
        parts = [f.bounds(policy) for f in self.fits]
        lower = float(np.mean([b.lower for b in parts]))
        upper = float(np.mean([b.upper for b in parts]))
        comp = {"rotations": [{"lower": b.lower, "upper": b.upper} for b in parts],
                "settings": dict(self.settings, cross_fit=True)}
        return BoundPair(lower, upper, comp)


def fit_continuous(ds: Dataset, config: ContConfig | None = None):
    """Split in three folds and fit all nuisances.

    With ``config.cross_fit`` each fold takes each role once and the three
    resulting bounds are averaged.
    """
    config = config or ContConfig()
    if ds.instrument_kind != "continuous":
        raise ValidationError("continuous_estimate needs a continuous instrument")
    if ds.n < 9:
        raise InsufficientDataError("need at least 9 rows for three folds")
    rng = np.random.Generator(np.random.Philox(key=int(config.seed) & (2**64 - 1)))
    perm = rng.permutation(ds.n)
    k = ds.n // 3
    folds = [np.sort(perm[:k]), np.sort(perm[k:2 * k]), np.sort(perm[2 * k:])]
    if not config.cross_fit:
        return _fit_folds(ds, config, *folds)
    return RotatedFit([_fit_folds(ds, config, *(folds[(r + j) % 3] for j in range(3)))
                       for r in range(3)])


def plug_in_bounds(fit: ContinuousFit, policy: PolicySpec) -> BoundPair:
    return fit.bounds(policy)


def continuous_estimate(ds: Dataset, config: ContConfig | None = None) -> BoundPair:
    """Plug-in bounds for the aggregate effect with a continuous instrument."""
    config = config or ContConfig()
    return fit_continuous(ds, config).bounds(config.policy)
