"""Empirical closed-form bounds for a discrete instrument.

Cell frequencies replace the population law: the propensity of a label is
its treated share, labels with equal propensity form one level, and the
level subdistributions are the empirical ``P(Y in dy, W = w | level)``.
Gap laws come from the monotone-rearranged CDF difference. The result is
the sharp-bound formula evaluated at that law, with no debiasing and no
standard errors.
"""
from __future__ import annotations

import numpy as np

from .data import Dataset
from .errors import InsufficientDataError, ValidationError
from .measures import rearranged_complier_measure
from .roy import (TREATED, UNTREATED, BoundPair, bound_with_covariates, discrete_gap_data,
                  empirical_subdistribution, identified_bounds)
from .weights import PolicySpec, prte_weight


def _label_levels(ds: Dataset, c_gap=None):
    labels = ds.labels()
    p_lab = np.array([ds.w[ds.z == lab].mean() for lab in labels])
    probs = np.array([np.mean(ds.z == lab) for lab in labels])
    if c_gap is None:
        level_vals = np.unique(p_lab)
        level_of = {lab: float(p) for lab, p in zip(labels, p_lab)}
    else:
        from .dml import single_linkage

        level_of = {}
        vals = []
        for idx in single_linkage(p_lab, c_gap / 2):
            centre = float(np.dot(probs[idx], p_lab[idx]) / probs[idx].sum())
            vals.append(centre)
            for i in idx:
                level_of[labels[i]] = centre
        level_vals = np.array(sorted(vals))
    return labels, p_lab, probs, level_vals, level_of


def _stratum_bounds(ds: Dataset, policy: PolicySpec, c_gap=None) -> BoundPair:
    labels, p_lab, probs, level_vals, level_of = _label_levels(ds, c_gap)
    rows_level = np.array([level_of[lab] for lab in ds.z])
    t_sub, u_sub = [], []
    for lev in level_vals:
        sel = rows_level == lev
        t_sub.append(empirical_subdistribution(ds.y[sel], ds.w[sel], TREATED))
        u_sub.append(empirical_subdistribution(ds.y[sel], ds.w[sel], UNTREATED))
    layout, data, diags = discrete_gap_data(level_vals, t_sub, u_sub,
                                            builder=rearranged_complier_measure)
    p_used = np.array([level_of[lab] for lab in labels])
    weight = prte_weight((p_used, probs, labels), policy, layout)
    b = identified_bounds(layout, data, weight, ds.y_min, ds.y_max)
    comp = dict(b.components)
    comp["levels"] = level_vals.tolist()
    comp["rearranged_gaps"] = [f"{arm}:{g}" for (arm, g), d in diags.items()
                               if getattr(d, "negative_mass", 0.0) > 0]
    return BoundPair(b.lower, b.upper, comp)


def closed_form_from_data(ds: Dataset, policy: PolicySpec, c_gap=None) -> BoundPair:
    """Closed-form bounds at the empirical law of a discrete-instrument sample.

    Parameters
    ----------
    ds : Dataset
        Discrete instrument; covariates, if any, are treated as discrete
        strata and the stratum bounds are averaged.
    policy : PolicySpec
    c_gap : float, optional
        Merge label propensities closer than ``c_gap / 2`` into one level.
    """
    if ds.instrument_kind != "discrete":
        raise ValidationError("closed-form plug-in needs a discrete instrument")
    if ds.x.shape[1] == 0:
        return _stratum_bounds(ds, policy, c_gap)
    keys, inv = np.unique(ds.x, axis=0, return_inverse=True)
    inv = inv.ravel()
    parts = []
    for s in range(keys.shape[0]):
        idx = np.flatnonzero(inv == s)
        if idx.size < 2:
            raise InsufficientDataError(f"covariate stratum {keys[s].tolist()} has one row")
        parts.append((idx.size / ds.n, _stratum_bounds(ds.subset(idx), policy, c_gap)))
    return bound_with_covariates(parts)


def snapped_policy(ds: Dataset, policy: PolicySpec, c_gap: float) -> PolicySpec:
    """Per-label targets with values near an observed level moved onto it.

    A counterfactual propensity within ``c_gap / 2`` of a label's treated
    share is read as that level, as the debiased estimator does when it
    clusters levels. Without this, sampling noise in the shares turns a
    target that equals a population level into a thin unidentified sliver.
    """
    if c_gap is None or c_gap <= 0:
        raise ValidationError("c_gap must be positive")
    labels = ds.labels()
    p_lab = np.array([ds.w[ds.z == lab].mean() for lab in labels])
    q = np.asarray(policy.apply(p_lab, np.asarray(labels, dtype=object)), dtype=float)
    levels = np.unique(p_lab)
    near = np.abs(q[:, None] - levels[None, :])
    j = near.argmin(axis=1)
    snap = near[np.arange(q.size), j] < c_gap / 2
    q = np.where(snap, levels[j], q)
    return PolicySpec("explicit", targets={lab: float(v) for lab, v in zip(labels, q)})
