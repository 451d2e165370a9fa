"""Debiased estimation of the bounds with a discrete instrument.

Outline
-------
1. Split the sample in two halves by a seeded permutation.
2. On the first half, estimate per-instrument propensities, cluster them
   into baseline levels ``p_1 < ... < p_K`` and counterfactual groups
   ``q``, and fit every nuisance function.
3. On the second half, average a Neyman-orthogonal score; its sample
   variance gives the standard error.

The treated-arm bound on interval ``k`` (between ``p_k`` and ``p_{k+1}``)
is ``gamma_full J_full + sum_j gamma_j J_{j-1}``, where ``J_{j-1}`` is the
mass-weighted integral of the complier quantile function over the
sub-interval ending at the ``j``-th counterfactual level and the gammas are
instrument-set probabilities. Interval integrals are written in terms of
subdistribution functionals ``A_k(g) = E[W g(Y) | Z in S_k, X]`` so that the
score corrections are plain regression residuals plus one correction per
quantile threshold.

The untreated arm is handled by reflection: with ``W' = 1 - W`` and
``p' = 1 - p`` its bounds are minus the treated-arm bounds of the reflected
problem, so the same code serves both arms.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import GapViolationError, InsufficientDataError, ValidationError
from .learners import fit_learner
from .weights import PolicySpec, _key

LOWER, UPPER = "lower", "upper"
TIE_TOL = 1e-9


# ---------------------------------------------------------------------------
# configuration and results


@dataclass
class DmlConfig:
    """Settings for ``dml_estimate``.

    Learner fields accept the names understood by ``fit_learner``; ``"auto"``
    picks constant learners for covariate-free data and logistic / least
    squares fits otherwise.
    """

    policy: PolicySpec = field(default_factory=PolicySpec)
    outcome_kind: str = "auto"
    c_gap: float = 0.05
    c_pi: float = 0.01
    min_cell: int = 30
    seed: int = 0
    cross_fit: bool = False
    prob_learner: str = "auto"
    reg_learner: str = "auto"
    quantile_learner: str = "auto"

    def __post_init__(self):
        if self.c_gap <= 0 or self.c_pi <= 0 or self.min_cell < 1:
            raise ValidationError("c_gap, c_pi and min_cell must be positive")
        if self.outcome_kind not in ("auto", "continuous", "binary"):
            raise ValidationError("outcome_kind must be auto, continuous or binary")


@dataclass(frozen=True)
class EstimateWithCI:
    point: float
    se: float

    @property
    def ci95(self):
        return (self.point - 1.96 * self.se, self.point + 1.96 * self.se)

    def as_dict(self):
        lo, hi = self.ci95
        return {"point": self.point, "se": self.se, "ci95": [lo, hi]}


@dataclass
class DmlResult:
    lower: EstimateWithCI
    upper: EstimateWithCI
    levels: "LevelSets"
    scores_lower: np.ndarray
    scores_upper: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def ci(self):
        return (self.lower.ci95[0], self.upper.ci95[1])


# ---------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class QGroup:
    """Instruments sharing one counterfactual propensity level.

    ``interval`` is the index ``k`` with ``p_k <= q < p_{k+1}`` (``K`` for
    the region above the top level); ``position`` is the rank ``j`` among
    non-merged groups of that interval. ``merged`` marks groups whose level
    coincides with a baseline level (or with 0); they carry no sub-interval.
    """

    labels: tuple
    value: float
    interval: int
    position: int
    merged: bool
    merged_level: int | None = None


@dataclass
class LevelSets:
    """Baseline level sets ``S_k`` and counterfactual groups ``T``."""

    values: np.ndarray
    level_of: dict
    groups: list
    group_of: dict
    c_gap: float = 0.05

    @property
    def K(self):
        return int(self.values.size)

    def level_labels(self, k):
        return [lab for lab, kk in self.level_of.items() if kk == k]

    def sub_intervals(self, k):
        """Group indices of the non-merged groups in interval ``k``, by rank."""
        gs = [(g.position, i) for i, g in enumerate(self.groups)
              if g.interval == k and not g.merged]
        return [i for _, i in sorted(gs)]

    def tail_groups(self, free_only=True):
        return [i for i, g in enumerate(self.groups)
                if g.interval == self.K and not (free_only and g.merged and
                                                 g.merged_level == self.K)]

    def mirrored(self):
        K = self.K
        values = 1.0 - self.values[::-1]
        level_of = {lab: K + 1 - k for lab, k in self.level_of.items()}
        raw = []
        for g in self.groups:
            merged_level = None if g.merged_level is None else (
                K + 1 - g.merged_level if 1 <= g.merged_level <= K else None)
            raw.append((g.labels, 1.0 - g.value, merged_level))
        groups, group_of = _locate_groups(values, raw)
        return LevelSets(values, level_of, groups, group_of, self.c_gap)

    def obs_levels(self, z):
        return _map_labels(z, self.level_of)

    def obs_groups(self, z):
        return _map_labels(z, self.group_of)

    def describe(self):
        return {"levels": self.values.tolist(),
                "groups": [{"labels": [str(v) for v in g.labels], "q": g.value,
                            "interval": g.interval, "position": g.position,
                            "merged": g.merged} for g in self.groups]}


def _map_labels(z, mapping):
    z = np.asarray(z)
    uniq, inv = np.unique(z, return_inverse=True)
    try:
        codes = np.array([mapping[_key(u)] for u in uniq], dtype=int)
    except KeyError as exc:
        raise ValidationError(f"instrument label {exc.args[0]} not seen when fitting") from None
    return codes[inv.ravel()]


def _locate_groups(values, raw):
    """Place groups ``(labels, q, merged_level)`` relative to the levels."""
    K = values.size
    placed = []
    for labels, q, merged_level in raw:
        if merged_level is not None and merged_level >= 1:
            q = float(values[merged_level - 1])
        if merged_level is None:
            hits = np.flatnonzero(np.abs(values - q) <= TIE_TOL)
            if hits.size:
                merged_level, q = int(hits[0]) + 1, float(values[hits[0]])
            elif abs(q) <= TIE_TOL:
                merged_level, q = 0, 0.0
        interval = int(np.searchsorted(values, q + TIE_TOL, side="right"))
        placed.append([labels, q, interval, merged_level])
    groups = [None] * len(placed)
    for k in range(K + 1):
        idx = [i for i, pl in enumerate(placed) if pl[2] == k and pl[3] is None]
        idx.sort(key=lambda i: placed[i][1])
        for j, i in enumerate(idx, start=1):
            labels, q, interval, _ = placed[i]
            groups[i] = QGroup(tuple(labels), q, interval, j, False, None)
    for i, (labels, q, interval, merged_level) in enumerate(placed):
        if groups[i] is None:
            groups[i] = QGroup(tuple(labels), q, interval, 0, True, merged_level)
    group_of = {}
    for i, g in enumerate(groups):
        for lab in g.labels:
            group_of[_key(lab)] = i
    return groups, group_of


def single_linkage(values, radius):
    """Cluster sorted reals, linking neighbours closer than ``radius``.

    Returns
    -------
    list of ndarray
        Indices into ``values`` per cluster, ordered by value.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    clusters, cur = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] < radius:
            cur.append(b)
        else:
            clusters.append(np.array(cur))
            cur = [b]
    clusters.append(np.array(cur))
    centers = [values[c].mean() for c in clusters]
    for c0, c1 in zip(centers[:-1], centers[1:]):
        if c1 - c0 <= radius:
            raise GapViolationError(
                f"cluster centres {c0:.6g} and {c1:.6g} closer than {radius:.6g}")
    return clusters


def levels_from_means(p_bar: dict, q_bar: dict, c_gap: float) -> LevelSets:
    """Build level sets from per-label average propensities.

    Parameters
    ----------
    p_bar, q_bar : dict
        Label -> average baseline / counterfactual propensity.
    c_gap : float
        Values closer than ``c_gap / 2`` are treated as one level.
    """
    if c_gap <= 0:
        raise ValidationError("c_gap must be positive")
    labels = list(p_bar.keys())
    vals = np.array([p_bar[l] for l in labels] + [q_bar[l] for l in labels], dtype=float)
    clusters = single_linkage(vals, c_gap / 2.0)
    n_lab = len(labels)
    level_values, level_of, raw = [], {}, []
    cluster_level = {}
    for c in clusters:
        p_idx = c[c < n_lab]
        if p_idx.size:
            level_values.append(float(vals[p_idx].mean()))
            cluster_level[id(c)] = len(level_values)
            for i in p_idx:
                level_of[_key(labels[i])] = len(level_values)
    values = np.array(level_values)
    for c in clusters:
        q_idx = c[c >= n_lab] - n_lab
        if q_idx.size == 0:
            continue
        merged = cluster_level.get(id(c))
        q_val = float(vals[q_idx + n_lab].mean())
        raw.append(([labels[i] for i in q_idx], q_val, merged))
    groups, group_of = _locate_groups(values, raw)
    return LevelSets(values, level_of, groups, group_of, c_gap)


def _auto(kind, d, default_cov):
    if kind != "auto":
        return kind
    return "constant" if d == 0 else default_cov


def _fit_masked(kind, X, target, mask=None, weights=None):
    if mask is not None:
        X, target = X[mask], target[mask]
        weights = None if weights is None else weights[mask]
    if target.size == 0:
        raise InsufficientDataError("empty cell while fitting a nuisance")
    if np.all(target == target[0]):
        return fit_learner("constant", np.zeros((target.size, 0)), target)
    if kind == "logistic" and (np.any(target < 0) or np.any(target > 1)):
        kind = "least_squares"
    return fit_learner(kind, X, target, weights)


def fit_label_propensities(ds: Dataset, learner="auto"):
    """Per-label propensity predictors ``p(z, .)``."""
    kind = _auto(learner, ds.x.shape[1], "logistic")
    out = {}
    for lab in ds.labels():
        mask = ds.z == lab
        out[_key(lab)] = (lab, _fit_masked(kind, ds.x, ds.w.astype(float), mask))
    return out


def cluster_levels(ds: Dataset, p_hat, policy: PolicySpec, c_gap: float = 0.05) -> LevelSets:
    """Cluster averaged baseline and counterfactual propensities into levels.

    Parameters
    ----------
    ds : Dataset
        Auxiliary sample over which ``p_hat`` is averaged.
    p_hat : dict or callable
        ``fit_label_propensities`` output, or ``p_hat(label, X)``.
    policy : PolicySpec
    c_gap : float
    """
    p_bar, q_bar = {}, {}
    for lab in ds.labels():
        if callable(p_hat):
            p = np.asarray(p_hat(lab, ds.x), dtype=float)
        else:
            p = p_hat[_key(lab)][1].predict(ds.x)
        p = np.clip(p, 0.0, 1.0)
        zlab = np.full(p.shape, lab, dtype=object)
        p_bar[lab] = float(p.mean())
        q_bar[lab] = float(np.mean(policy.apply(p, zlab)))
    return levels_from_means(p_bar, q_bar, c_gap)


# ---------------------------------------------------------------------------
# nuisances


@dataclass
class ArmObs:
    """Observation arrays for one arm (``w`` is the arm's own indicator)."""

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray
    x: np.ndarray
    lev: np.ndarray
    grp: np.ndarray

    @property
    def n(self):
        return self.y.size


@dataclass
class NuisanceValues:
    """Nuisance functions evaluated at a set of observations.

    Keys ``k`` run over levels ``1..K``; intervals over ``0..K-1``.
    Threshold entries are keyed by ``(side, k, j)``.
    """

    pi: dict
    p: dict
    rho: dict
    gamma_full: dict
    gamma_sub: dict
    gamma_tail: np.ndarray
    A_y: dict
    nu: dict = field(default_factory=dict)
    A_ind: dict = field(default_factory=dict)
    A_band: dict = field(default_factory=dict)

    def copy(self):
        def cp(d):
            return {k: np.array(v, copy=True) for k, v in d.items()}
        return NuisanceValues(cp(self.pi), cp(self.p), cp(self.rho), cp(self.gamma_full),
                              cp(self.gamma_sub), np.array(self.gamma_tail, copy=True),
                              cp(self.A_y), cp(self.nu), cp(self.A_ind), cp(self.A_band))


def _set_indicator(grp, members):
    return np.isin(grp, np.asarray(members, dtype=int)).astype(float)


def _group_q(levels: LevelSets, g, p_vals, policy, n):
    """Counterfactual level of group ``g`` at each observation's covariates."""
    grp = levels.groups[g]
    if grp.merged:
        if grp.merged_level:
            return p_vals[grp.merged_level]
        return np.zeros(n)
    qs = []
    for lab in grp.labels:
        k = levels.level_of[_key(lab)]
        qs.append(policy.apply(p_vals[k], np.full(n, lab, dtype=object)))
    return np.mean(qs, axis=0)


def _obs_policy(levels, obs, p_vals, policy):
    """``p(Z_i, X_i)`` and ``d phi / d p`` at each observation."""
    p_obs = np.zeros(obs.n)
    for k in range(1, levels.K + 1):
        m = obs.lev == k
        p_obs[m] = p_vals[k][m]
    dphi = np.asarray(policy.derivative(p_obs, obs.z), dtype=float)
    return p_obs, dphi


def _threshold_c(side, k, j, levels, q, p):
    """Target subdistribution mass ``c`` of threshold ``(side, k, j)``."""
    g = levels.sub_intervals(k)[j - 1]
    lo = p[k] if k >= 1 else 0.0
    if side == LOWER:
        return q[g] - lo
    return p[k + 1] - q[g]


def _solve_threshold_scalar(y, omega, c):
    """Minimize ``sum omega_i (nu - y_i)_+ - c nu`` over observed outcomes."""
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], omega[order]
    atoms, inv = np.unique(ys, return_inverse=True)
    d = np.zeros(atoms.size)
    np.add.at(d, inv, ws)
    s0 = np.concatenate([[0.0], np.cumsum(d)[:-1]])
    s1 = np.concatenate([[0.0], np.cumsum(d * atoms)[:-1]])
    obj = atoms * s0 - s1 - c * atoms
    best = obj.min()
    i = int(np.flatnonzero(obj <= best + 1e-12 * max(1.0, abs(best)))[0])
    return float(atoms[i])


def quantile_nuisance(y, x, omega, c, learner="constant", iters=3000):
    """Threshold ``nu(x)`` solving ``E[Omega 1(Y <= nu) | x] = c(x)``.

    Minimizes ``mean(Omega (nu(X) - Y)_+ - c(X) nu(X))``. Without covariates
    (or with the constant learner) the minimizer is found exactly among the
    observed outcomes; otherwise a linear index is fitted by subgradient
    descent with a fixed schedule.
    """
    y = np.asarray(y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), y.shape)
    active = omega != 0
    if not np.any(active):
        raise InsufficientDataError("no treated observations in the threshold cells")
    nu0 = _solve_threshold_scalar(y[active], omega[active], float(np.sum(c)))
    if learner == "constant" or x.shape[1] == 0:
        return _ConstPredictor(nu0)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = np.column_stack([np.ones(y.size), (x - mu) / sd])
    beta = np.zeros(Z.shape[1])
    beta[0] = nu0
    spread = float(np.std(y[active])) or 1.0
    n = y.size
    best_beta, best_obj = beta.copy(), np.inf
    for t in range(1, iters + 1):
        nu = Z @ beta
        obj = float(np.sum(omega * np.clip(nu - y, 0, None) - c * nu)) / n
        if obj < best_obj:
            best_obj, best_beta = obj, beta.copy()
        grad = Z.T @ (omega * (nu > y) - c) / n
        beta = beta - spread * 0.5 / np.sqrt(t) * grad
    coef = np.concatenate([[best_beta[0] - np.sum(best_beta[1:] * mu / sd)], best_beta[1:] / sd])
    return _LinearPredictor(coef)


@dataclass
class _ConstPredictor:
    value: float

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass
class _LinearPredictor:
    coef: np.ndarray

    def predict(self, X):
        return self.coef[0] + np.asarray(X, float) @ self.coef[1:]


@dataclass
class NuisanceModels:
    """Fitted nuisance predictors for one arm."""

    levels: LevelSets
    policy: object
    outcome_kind: str
    c_pi: float
    pi: dict
    p: dict
    rho: dict
    gamma_full: dict
    gamma_sub: dict
    gamma_tail: object
    A_y: dict
    nu: dict = field(default_factory=dict)
    A_ind: dict = field(default_factory=dict)
    A_band: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def evaluate(self, X) -> NuisanceValues:
        def ev(d):
            return {k: m.predict(X) for k, m in d.items()}

        K = self.levels.K
        A_y = ev(self.A_y)
        if self.outcome_kind == "binary":
            stacked = np.sort(np.column_stack([A_y[k] for k in range(1, K + 1)]), axis=1)
            A_y = {k: np.clip(stacked[:, k - 1], 0.0, None) for k in range(1, K + 1)}
        nu = ev(self.nu)
        return NuisanceValues(
            pi=ev(self.pi), p={k: np.clip(v, 0.0, 1.0) for k, v in ev(self.p).items()},
            rho=ev(self.rho), gamma_full=ev(self.gamma_full), gamma_sub=ev(self.gamma_sub),
            gamma_tail=self.gamma_tail.predict(X), A_y=A_y, nu=nu,
            A_ind={k: m.predict(X) for k, m in self.A_ind.items()},
            A_band={k: m.predict(X) for k, m in self.A_band.items()})


def _band_limits(side, j):
    """Threshold keys bounding band ``j`` (``None`` means unbounded)."""
    if side == LOWER:
        return (j - 1 if j > 1 else None), j
    return j, (j - 1 if j > 1 else None)


def fit_nuisances(obs: ArmObs, levels: LevelSets, policy, outcome_kind, c_pi=0.01,
                  prob_learner="auto", reg_learner="auto", quantile_learner="auto",
                  min_cell=1, weights=None) -> NuisanceModels:
    """Fit every nuisance of one arm on the training observations.

    ``weights`` (binary outcomes only) are observation weights passed to
    every regression; with cell probabilities as weights the fits are the
    corresponding population conditional means.
    """
    if weights is not None and outcome_kind != "binary":
        raise ValidationError("observation weights are supported for binary outcomes only")
    wt = None if weights is None else np.asarray(weights, dtype=float)
    X = obs.x
    d = X.shape[1]
    prob = _auto(prob_learner, d, "logistic")
    reg = _auto(reg_learner, d, "least_squares")
    qlearn = _auto(quantile_learner, d, "least_squares")
    K = levels.K
    wf = obs.w.astype(float)
    for k in range(1, K + 1):
        cnt = int(np.sum(obs.lev == k))
        if cnt < min_cell:
            raise InsufficientDataError(f"level {k} has {cnt} observations (< {min_cell})")
    if np.all(obs.w == 1) or np.all(obs.w == 0):
        raise InsufficientDataError("fold is all treated or all untreated")
    diags = {}
    pi = {k: _fit_masked(prob, X, (obs.lev == k).astype(float), weights=wt)
          for k in range(1, K + 1)}
    p = {k: _fit_masked(prob, X, wf, obs.lev == k, wt) for k in range(1, K + 1)}
    rho = {g: _fit_masked(prob, X, (obs.grp == g).astype(float), weights=wt)
           for g, grp in enumerate(levels.groups) if not grp.merged}
    loc = np.array([g.interval for g in levels.groups])
    gamma_full, gamma_sub = {}, {}
    for k in range(K):
        target = (loc[obs.grp] > k).astype(float) - (obs.lev > k).astype(float)
        gamma_full[k] = _fit_masked(reg, X, target, weights=wt)
        subs = levels.sub_intervals(k)
        for j in range(1, len(subs) + 1):
            gamma_sub[(k, j)] = _fit_masked(prob, X, _set_indicator(obs.grp, subs[j - 1:]),
                                           weights=wt)
    gamma_tail = _fit_masked(prob, X, _set_indicator(obs.grp, levels.tail_groups()),
                             weights=wt)
    A_y = {k: _fit_masked(reg, X, wf * obs.y, obs.lev == k, wt) for k in range(1, K + 1)}
    models = NuisanceModels(levels, policy, outcome_kind, c_pi, pi, p, rho, gamma_full,
                            gamma_sub, gamma_tail, A_y, diagnostics=diags)
    if outcome_kind == "continuous":
        _fit_thresholds(models, obs, qlearn, reg)
    vals = models.evaluate(X)
    low = {k: float(np.mean(v < c_pi)) for k, v in vals.pi.items() if np.any(v < c_pi)}
    if low:
        diags["pi_below_floor"] = low
    return models


def _fit_thresholds(models: NuisanceModels, obs: ArmObs, qlearn, reg):
    levels, X = models.levels, obs.x
    n = obs.n
    base = models.evaluate(X)
    pi = {k: np.maximum(v, models.c_pi) for k, v in base.pi.items()}
    q = {g: _group_q(levels, g, base.p, models.policy, n)
         for g, grp in enumerate(levels.groups) if not grp.merged}
    wf = obs.w.astype(float)
    for k in range(levels.K):
        subs = levels.sub_intervals(k)
        if not subs:
            continue
        hi_ind = (obs.lev == k + 1).astype(float) / pi[k + 1]
        lo_ind = (obs.lev == k).astype(float) / pi[k] if k >= 1 else np.zeros(n)
        omega = wf * (hi_ind - lo_ind)
        nu_train = {}
        for side in (LOWER, UPPER):
            for j in range(1, len(subs) + 1):
                c = _threshold_c(side, k, j, levels, q, base.p)
                model = quantile_nuisance(obs.y, X, omega, c, qlearn)
                models.nu[(side, k, j)] = model
                nu = model.predict(X)
                nu_train[(side, j)] = nu
                ind = wf * (obs.y <= nu)
                for tag, lev in (("hi", k + 1), ("lo", k)):
                    if lev >= 1:
                        models.A_ind[(side, k, j, tag)] = _fit_masked(reg, X, ind, obs.lev == lev)
            for j in range(1, len(subs) + 1):
                a, b = _band_limits(side, j)
                lo_nu = nu_train[(side, a)] if a is not None else np.full(n, -np.inf)
                hi_nu = nu_train[(side, b)] if b is not None else np.full(n, np.inf)
                target = wf * obs.y * ((obs.y > lo_nu) & (obs.y <= hi_nu))
                for tag, lev in (("hi", k + 1), ("lo", k)):
                    if lev >= 1:
                        models.A_band[(side, k, j, tag)] = _fit_masked(
                            reg, X, target, obs.lev == lev)


# ---------------------------------------------------------------------------
# scores


def arm_scores(obs: ArmObs, nv: NuisanceValues, levels: LevelSets, policy, side,
               outcome_kind, y_min, y_max, c_pi=0.01, corrected=True):
    """Per-observation orthogonal score for one side of the treated-arm bound.

    Parameters
    ----------
    obs : ArmObs
        Evaluation observations.
    nv : NuisanceValues
        Nuisances evaluated at ``obs.x``.
    levels : LevelSets
    policy : PolicySpec (or its reflection)
    side : {"lower", "upper"}
    outcome_kind : {"continuous", "binary"}
    corrected : bool
        ``False`` drops every residual correction, leaving the plug-in
        integrand (useful as a non-orthogonal reference).

    Returns
    -------
    ndarray
        Scores whose mean estimates the bound.
    """
    if side not in (LOWER, UPPER):
        raise ValidationError("side must be 'lower' or 'upper'")
    n, K = obs.n, levels.K
    y, wf, lev, grp = obs.y, obs.w.astype(float), obs.lev, obs.grp
    zero = np.zeros(n)
    ind = {k: (lev == k).astype(float) for k in range(1, K + 1)}
    pi = {k: np.maximum(v, c_pi) for k, v in nv.pi.items()}
    p = dict(nv.p)
    p_of = lambda k: p[k] if k >= 1 else zero  # noqa: E731
    A_y = lambda k: nv.A_y[k] if k >= 1 else zero  # noqa: E731

    def R(k, gvals, fitted):
        if k < 1 or not corrected:
            return zero
        return ind[k] / pi[k] * (wf * gvals - fitted)

    R1 = {k: R(k, 1.0, p[k]) for k in range(1, K + 1)}
    R1[0] = zero
    RY = {k: R(k, y, nv.A_y[k]) for k in range(1, K + 1)}
    RY[0] = zero
    q = {g: _group_q(levels, g, p, policy, n)
         for g, gr in enumerate(levels.groups) if not gr.merged}
    p_obs, dphi = _obs_policy(levels, obs, p, policy)
    resid_obs = dphi * (wf - p_obs) if corrected else zero

    def IFq(g):
        rho = np.maximum(nv.rho[g], c_pi)
        return (grp == g) / rho * resid_obs

    loc = np.array([g.interval for g in levels.groups])
    psi = np.zeros(n)
    for k in range(K):
        dp = p_of(k + 1) - p_of(k)
        J_full = A_y(k + 1) - A_y(k)
        dJ = RY[k + 1] - RY[k]
        if outcome_kind == "binary":
            # the clipped mass moves with the outcome only in the interior
            # and with the propensity gap when clipped at the top
            inside = (J_full > 0.0) & (J_full < dp)
            top = J_full >= dp
            J_full = np.clip(J_full, 0.0, np.maximum(dp, 0.0))
            dJ = inside * dJ + top * (R1[k + 1] - R1[k])
        psi_full = J_full + dJ
        full_ind = (loc[grp] > k).astype(float) - (lev > k).astype(float)
        gf = nv.gamma_full[k]
        psi += gf * psi_full + (J_full * (full_ind - gf) if corrected else 0.0)
        subs = levels.sub_intervals(k)
        for j in range(1, len(subs) + 1):
            gam = nv.gamma_sub[(k, j)]
            member = _set_indicator(grp, subs[j - 1:])
            g_b = subs[j - 1]
            if j == 1:
                q_a, IF_a = p_of(k), R1[k]
            else:
                q_a, IF_a = q[subs[j - 2]], IFq(subs[j - 2])
            if outcome_kind == "binary":
                H, psi_H = _binary_piece(side, q_a, q[g_b], p_of(k), p_of(k + 1), J_full,
                                         IF_a, IFq(g_b), dJ, R1[k], R1[k + 1])
            else:
                H, psi_H = _band_piece(side, k, j, obs, nv, levels, q, p_of, R, R1, IFq, ind,
                                       corrected)
            psi += gam * psi_H + (H * (member - gam) if corrected else 0.0)
    tail = levels.tail_groups()
    if tail:
        yb = y_min if side == LOWER else y_max
        t_ind = _set_indicator(grp, tail)
        q_obs = np.zeros(n)
        for g in tail:
            m = grp == g
            q_obs[m] = q[g][m]
        psi += yb * (t_ind * (q_obs - p[K]) + t_ind * resid_obs - nv.gamma_tail * R1[K])
    return psi


def _binary_piece(side, q_a, q_b, p_k, p_k1, J, IF_a, IF_b, dRY, R1_k, R1_k1):
    """Sub-interval integral of a binary outcome's quantile and its score.

    ``dRY`` is the correction term of the interval mass ``J``.
    """
    if side == LOWER:
        b = p_k1 - J
        E = q_a > b
        m = np.maximum(q_a, b)
        H = np.maximum(0.0, q_b - m)
        I = q_b > m
        D = I & ~E
        psi = H + D * dRY - D * R1_k1 + I * IF_b - (E & I) * IF_a
    else:
        c = p_k + J
        E = q_b < c
        m = np.minimum(q_b, c)
        H = np.maximum(0.0, m - q_a)
        I = m > q_a
        D = I & ~E
        psi = H + (I & E) * IF_b + D * (dRY + R1_k) - I * IF_a
    return H, psi


def _band_piece(side, k, j, obs, nv, levels, q, p_of, R, R1, IFq, ind, corrected=True):
    """Band integral of a continuous outcome's quantile and its score."""
    y = obs.y
    n = obs.n
    zero = np.zeros(n)
    a, b = _band_limits(side, j)

    def A(kind, key, tag):
        if tag == "lo" and k < 1:
            return zero
        return nv.A_band[key + (tag,)] if kind == "band" else nv.A_ind[key + (tag,)]

    lo_nu = nv.nu[(side, k, a)] if a is not None else np.full(n, -np.inf)
    hi_nu = nv.nu[(side, k, b)] if b is not None else np.full(n, np.inf)
    band = y * ((y > lo_nu) & (y <= hi_nu))
    key = (side, k, j)
    A_hi, A_lo = A("band", key, "hi"), A("band", key, "lo")
    J = A_hi - A_lo
    psi = J + R(k + 1, band, A_hi) - R(k, band, A_lo)
    subs = levels.sub_intervals(k)
    for t, sign in ((a, 1.0), (b, -1.0)):
        if t is None or not corrected:
            continue
        tkey = (side, k, t)
        nu = nv.nu[tkey]
        below = (y <= nu).astype(float)
        I_hi, I_lo = A("ind", tkey, "hi"), A("ind", tkey, "lo")
        D_hat = I_hi - I_lo + R(k + 1, below, I_hi) - R(k, below, I_lo)
        g = subs[t - 1]
        if side == LOWER:
            c_hat = q[g] - p_of(k)
            IF_c = IFq(g) - R1[k]
        else:
            c_hat = p_of(k + 1) - q[g]
            IF_c = R1[k + 1] - IFq(g)
        psi = psi + sign * nu * (D_hat - c_hat - IF_c)
    return J, psi


# ---------------------------------------------------------------------------
# driver


def arm_obs(ds: Dataset, levels: LevelSets, w=None) -> ArmObs:
    w = ds.w if w is None else w
    return ArmObs(ds.y, np.asarray(w), ds.z, ds.x, levels.obs_levels(ds.z),
                  levels.obs_groups(ds.z))


def resolve_outcome_kind(ds: Dataset, kind):
    if kind == "auto":
        return "binary" if ds.is_binary_outcome else "continuous"
    return kind


def _bound_scores(train: Dataset, test: Dataset, levels, config: DmlConfig, kind):
    """Scores for the aggregate lower and upper bound on the test fold."""
    out = {LOWER: np.zeros(test.n), UPPER: np.zeros(test.n)}
    diags = {}
    arms = (("treated", levels, config.policy, train.w, test.w),
            ("untreated", levels.mirrored(), config.policy.mirrored(),
             1 - train.w, 1 - test.w))
    for name, lv, pol, w_tr, w_te in arms:
        tr = arm_obs(train, lv, w_tr)
        te = arm_obs(test, lv, w_te)
        models = fit_nuisances(tr, lv, pol, kind, config.c_pi, config.prob_learner,
                               config.reg_learner, config.quantile_learner, config.min_cell)
        nv = models.evaluate(te.x)
        for side in (LOWER, UPPER):
            out[side] += arm_scores(te, nv, lv, pol, side, kind, test.y_min, test.y_max,
                                    config.c_pi)
        diags[name] = models.diagnostics
    return out, diags


def _check_cells(ds: Dataset, levels: LevelSets, min_cell):
    lev = levels.obs_levels(ds.z)
    counts = np.bincount(lev, minlength=levels.K + 1)[1:]
    if np.any(counts < min_cell):
        raise InsufficientDataError(
            f"level cell sizes {counts.tolist()} fall below min_cell={min_cell}")


def dml_estimate(ds: Dataset, config: DmlConfig | None = None) -> DmlResult:
    """Estimate the aggregate lower and upper bounds with standard errors.

    Parameters
    ----------
    ds : Dataset
        Discrete-instrument data.
    config : DmlConfig

    Returns
    -------
    DmlResult
    """
    config = config or DmlConfig()
    if ds.instrument_kind != "discrete":
        raise ValidationError("dml_estimate needs a discrete instrument")
    kind = resolve_outcome_kind(ds, config.outcome_kind)
    rng = np.random.Generator(np.random.Philox(key=int(config.seed) & (2**64 - 1)))
    perm = rng.permutation(ds.n)
    half = ds.n // 2
    folds = [(perm[:half], perm[half:])]
    if config.cross_fit:
        folds.append((perm[half:], perm[:half]))
    est, scores_all, diags, levels0 = {LOWER: [], UPPER: []}, {LOWER: [], UPPER: []}, {}, None
    var = {LOWER: [], UPPER: []}
    for f, (i1, i2) in enumerate(folds):
        train, test = ds.subset(np.sort(i1)), ds.subset(np.sort(i2))
        p_hat = fit_label_propensities(train, config.prob_learner)
        levels = cluster_levels(train, p_hat, config.policy, config.c_gap)
        if levels0 is None:
            levels0 = levels
        _check_cells(train, levels, config.min_cell)
        _check_cells(test, levels, config.min_cell)
        scores, d = _bound_scores(train, test, levels, config, kind)
        diags[f"fold{f}"] = d
        for side in (LOWER, UPPER):
            s = scores[side]
            m = float(np.mean(s))
            est[side].append(m)
            var[side].append(float(np.mean((s - m) ** 2)) / s.size)
            scores_all[side].append(s)
    nf = len(folds)
    res = {}
    for side in (LOWER, UPPER):
        point = float(np.mean(est[side]))
        se = float(np.sqrt(np.sum(var[side]))) / nf
        res[side] = EstimateWithCI(point, se)
    if res[LOWER].point > res[UPPER].point + 1e-12:
        diags["ordering_violation"] = res[LOWER].point - res[UPPER].point
    diags["outcome_kind"] = kind
    return DmlResult(res[LOWER], res[UPPER], levels0,
                     np.concatenate(scores_all[LOWER]), np.concatenate(scores_all[UPPER]),
                     diags)
