"""Closed-form sharp bounds for the binary-treatment threshold-crossing model.

The propensity range splits [0, 1] into intervals where the conditional
mean of the potential outcome is point identified, gaps between them where
only the marginal law of the outcome is identified, and an unconstrained
region (above the largest propensity for the treated arm, below the smallest
for the untreated arm). Each part contributes a separate term:

* gap: ``|G| * int Q_Y(t) Q_w(1 -/+ t) dt`` (quantile coupling),
* identified interval: ``int m(u) w(u) du``,
* unconstrained region: outcome-support bound on ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, MissingDataError, ValidationError
from .measures import EmpiricalMeasure, SubDistribution, complier_measure
from .ot1d import CouplingMode, ot_product_extreme
from .weights import StepWeight

TREATED, UNTREATED = "treated", "untreated"
LOWER, UPPER = "lower", "upper"


class PropensityLayout:
    """Sorted disjoint intervals ``[lo_k, hi_k]`` covering the propensity range."""

    def __init__(self, intervals):
        arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if arr.shape[0] == 0:
            raise ValidationError("layout needs at least one interval")
        if np.any(arr < 0) or np.any(arr > 1) or np.any(arr[:, 1] < arr[:, 0]):
            raise DomainError("intervals must satisfy 0 <= lo <= hi <= 1")
        if np.any(arr[1:, 0] <= arr[:-1, 1]):
            raise ValidationError("intervals must be sorted and disjoint")
        arr.setflags(write=False)
        self.intervals = arr

    @property
    def K(self):
        return self.intervals.shape[0]

    @property
    def is_discrete(self):
        return bool(np.all(self.intervals[:, 0] == self.intervals[:, 1]))

    @property
    def levels(self):
        return self.intervals[:, 0].copy()

    def endpoints(self):
        return np.unique(self.intervals.ravel())

    def gaps(self, arm=TREATED):
        """Gap intervals carrying an identified outcome marginal for ``arm``.

        Treated gaps are ``(hi_{k-1}, lo_k)`` with ``hi_0 = 0``; untreated
        gaps are ``(hi_k, lo_{k+1})`` with ``lo_{K+1} = 1``.
        """
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        if arm == TREATED:
            return list(zip(np.concatenate([[0.0], hi[:-1]]), lo))
        if arm == UNTREATED:
            return list(zip(hi, np.concatenate([lo[1:], [1.0]])))
        raise ValidationError(f"unknown arm {arm!r}")

    def unconstrained(self, arm=TREATED):
        if arm == TREATED:
            return (float(self.intervals[-1, 1]), 1.0)
        return (0.0, float(self.intervals[0, 0]))

    def __repr__(self):
        return f"PropensityLayout({self.intervals.tolist()!r})"


def make_layout(levels_or_intervals) -> PropensityLayout:
    """Merge overlapping or touching intervals and sort them.

    Scalars become degenerate intervals ``[p, p]``.
    """
    items = list(levels_or_intervals)
    if not items:
        raise ValidationError("empty propensity input")
    ivs = []
    for it in items:
        if np.ndim(it) == 0:
            ivs.append((float(it), float(it)))
        else:
            lo, hi = it
            ivs.append((float(min(lo, hi)), float(max(lo, hi))))
    arr = np.asarray(ivs)
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("propensity values must lie in [0, 1]")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    merged = [list(arr[0])]
    for lo, hi in arr[1:]:
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return PropensityLayout(merged)


@dataclass(frozen=True)
class LivSegment:
    """Identified conditional mean ``m(u) = E[Y(w) | U = u]`` on an interval.

    For the treated arm ``m`` is the derivative of ``u -> E[YW | p = u]``;
    for the untreated arm it is minus the derivative of
    ``u -> E[Y(1 - W) | p = u]``. Supplying ``cumulative`` (an
    antiderivative of ``m``) makes the integral exact.
    """

    mtr: Callable[[float], float]
    cumulative: Callable[[float], float] | None = None


@dataclass
class ArmData:
    """Identified inputs for one arm: a measure per gap, a segment per interval."""

    gap_measures: Sequence[EmpiricalMeasure | None]
    liv: Sequence[LivSegment | None] = field(default_factory=list)


@dataclass
class GapData:
    """Identified inputs for both arms."""

    treated: ArmData
    untreated: ArmData

    def arm(self, arm):
        return self.treated if arm == TREATED else self.untreated


@dataclass(frozen=True)
class ComponentValue:
    value: float
    ot_term: float
    liv_term: float
    tail_term: float

    def __float__(self):
        return self.value


@dataclass
class BoundPair:
    lower: float
    upper: float
    components: dict = field(default_factory=dict)
    se_lower: float | None = None
    se_upper: float | None = None

    def __post_init__(self):
        if not self.lower <= self.upper + 1e-10:
            raise ValidationError(f"lower {self.lower!r} exceeds upper {self.upper!r}")

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def ci(self):
        if self.se_lower is None or self.se_upper is None:
            return None
        return (self.lower - 1.96 * self.se_lower, self.upper + 1.96 * self.se_upper)

    def contains(self, value, tol=0.0):
        return self.lower - tol <= value <= self.upper + tol


def _side(side):
    if side not in (LOWER, UPPER):
        raise ValidationError(f"side must be 'lower' or 'upper', got {side!r}")
    return side


def _arm_data(data, arm):
    return data.arm(arm) if isinstance(data, GapData) else data


def _liv_integral(seg: LivSegment, weight: StepWeight, lo, hi, tol=1e-8):
    total = 0.0
    for a, b, v in weight.pieces(lo, hi):
        if v == 0.0:
            continue
        if seg.cumulative is not None:
            total += v * (seg.cumulative(b) - seg.cumulative(a))
        else:
            val, _ = integrate.quad(seg.mtr, a, b, epsabs=tol * 1e-2, epsrel=tol, limit=200)
            total += v * val
    return total


def tail_term(weight: StepWeight, lo, hi, y_min, y_max, side):
    """Outcome-support bound of ``int Y w`` over an unconstrained region."""
    pos = weight.positive_integral(lo, hi)
    neg = weight.negative_integral(lo, hi)
    if _side(side) == LOWER:
        return y_min * pos + y_max * neg
    return y_max * pos + y_min * neg


def bound_component(layout: PropensityLayout, data, weight: StepWeight, y_min, y_max,
                    side=LOWER, arm=TREATED) -> ComponentValue:
    """Sharp lower or upper bound on ``E[Y(w) w(U)]`` for one arm.

    Parameters
    ----------
    layout : PropensityLayout
    data : GapData or ArmData
        Gap measures in the order of ``layout.gaps(arm)`` and one LIV segment
        per interval (``None`` allowed for degenerate intervals).
    weight : StepWeight
    y_min, y_max : float
        Outcome support.
    side : {"lower", "upper"}
    arm : {"treated", "untreated"}

    Returns
    -------
    ComponentValue
    """
    side = _side(side)
    d = _arm_data(data, arm)
    mode = CouplingMode.COUNTERMONOTONE if side == LOWER else CouplingMode.COMONOTONE
    ot = 0.0
    gaps = layout.gaps(arm)
    if len(d.gap_measures) != len(gaps):
        raise MissingDataError(f"expected {len(gaps)} gap measures, got {len(d.gap_measures)}")
    for (lo, hi), mu in zip(gaps, d.gap_measures):
        if hi <= lo:
            continue
        if mu is None:
            raise MissingDataError(f"missing gap measure on ({lo}, {hi})")
        omega = weight.restricted_measure([(lo, hi)])
        ot += (hi - lo) * ot_product_extreme(mu, omega, mode)
    liv = 0.0
    for k, (lo, hi) in enumerate(layout.intervals):
        if hi <= lo:
            continue
        seg = d.liv[k] if k < len(d.liv) else None
        if seg is None:
            raise MissingDataError(f"missing LIV segment on [{lo}, {hi}]")
        liv += _liv_integral(seg, weight, lo, hi)
    t_lo, t_hi = layout.unconstrained(arm)
    tail = tail_term(weight, t_lo, t_hi, y_min, y_max, side) if t_hi > t_lo else 0.0
    return ComponentValue(ot + liv + tail, ot, liv, tail)


def arm_bounds(layout, data, weight, y_min, y_max, arm=TREATED) -> BoundPair:
    lo = bound_component(layout, data, weight, y_min, y_max, LOWER, arm)
    hi = bound_component(layout, data, weight, y_min, y_max, UPPER, arm)
    return BoundPair(lo.value, hi.value, {LOWER: lo, UPPER: hi})


def aggregate_bounds(treated: BoundPair, untreated: BoundPair) -> BoundPair:
    """Bounds on ``theta_1 - theta_0`` from per-arm bounds."""
    return BoundPair(treated.lower - untreated.upper, treated.upper - untreated.lower,
                     {TREATED: treated, UNTREATED: untreated})


def identified_bounds(layout, data: GapData, weight, y_min, y_max) -> BoundPair:
    """Aggregate sharp bounds on ``E[(Y(1) - Y(0)) w(U)]``."""
    return aggregate_bounds(arm_bounds(layout, data, weight, y_min, y_max, TREATED),
                            arm_bounds(layout, data, weight, y_min, y_max, UNTREATED))


def _spread_integral(mu: EmpiricalMeasure, omega: EmpiricalMeasure):
    """``int (Q_mu(t) - Q_mu(1 - t)) Q_omega(t) dt`` on a merged grid."""
    breaks = np.concatenate([[0.0, 1.0], mu.cumulative[:-1], 1.0 - mu.cumulative[:-1],
                             omega.cumulative[:-1]])
    grid = np.unique(np.clip(breaks, 0.0, 1.0))
    mid = 0.5 * (grid[:-1] + grid[1:])

    def q(m, t):
        return m.atoms[np.minimum(np.searchsorted(m.cumulative, t, side="left"), len(m) - 1)]

    return float(np.sum(np.diff(grid) * (q(mu, mid) - q(mu, 1.0 - mid)) * q(omega, mid)))


def bound_width(layout, data, weight, y_min, y_max, arm=TREATED) -> float:
    """Width of the single-arm identified interval, computed directly."""
    d = _arm_data(data, arm)
    total = 0.0
    for (lo, hi), mu in zip(layout.gaps(arm), d.gap_measures):
        if hi <= lo:
            continue
        if mu is None:
            raise MissingDataError(f"missing gap measure on ({lo}, {hi})")
        total += (hi - lo) * _spread_integral(mu, weight.restricted_measure([(lo, hi)]))
    t_lo, t_hi = layout.unconstrained(arm)
    if t_hi > t_lo:
        total += (y_max - y_min) * weight.abs_integral(t_lo, t_hi)
    return total


def bound_with_covariates(per_stratum) -> BoundPair:
    """Average per-stratum bounds with the stratum probabilities."""
    per_stratum = list(per_stratum)
    w = np.array([float(s) for s, _ in per_stratum])
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError("stratum weights must be nonnegative and sum to 1")
    lower = float(sum(wi * b.lower for wi, (_, b) in zip(w, per_stratum)))
    upper = float(sum(wi * b.upper for wi, (_, b) in zip(w, per_stratum)))
    return BoundPair(lower, upper, {"strata": [b for _, b in per_stratum]})


def gap_data_from_subdistributions(layout, treated_at, untreated_at,
                                   treated_liv=None, untreated_liv=None,
                                   builder=complier_measure):
    """Assemble gap measures from subdistributions at the layout endpoints.

    Parameters
    ----------
    layout : PropensityLayout
    treated_at, untreated_at : callable
        ``treated_at(p)`` returns the subdistribution
        ``P(Y in dy, W = 1 | p(Z) = p)`` (mass ``p``); ``untreated_at(p)``
        returns ``P(Y in dy, W = 0 | p(Z) = p)`` (mass ``1 - p``). They are
        only called at interval endpoints.
    treated_liv, untreated_liv : list of LivSegment, optional
    builder : callable, optional
        ``builder(F_hi, F_lo, p_hi, p_lo) -> (measure, diagnostic)``;
        ``complier_measure`` by default.

    Returns
    -------
    GapData, dict
        The data and a mapping ``(arm, gap index) -> ComplierDiagnostic``.
    """
    diags = {}
    t_measures, u_measures = [], []
    for g, (lo, hi) in enumerate(layout.gaps(TREATED)):
        if hi <= lo:
            t_measures.append(None)
            continue
        F_lo = None if lo == 0.0 else treated_at(lo)
        mu, diag = builder(treated_at(hi), F_lo, hi, lo)
        t_measures.append(mu)
        diags[(TREATED, g)] = diag
    for g, (lo, hi) in enumerate(layout.gaps(UNTREATED)):
        if hi <= lo:
            u_measures.append(None)
            continue
        F_hi = None if hi == 1.0 else untreated_at(hi)
        mu, diag = builder(untreated_at(lo), F_hi, 1.0 - lo, 1.0 - hi)
        u_measures.append(mu)
        diags[(UNTREATED, g)] = diag
    data = GapData(ArmData(t_measures, list(treated_liv or [])),
                   ArmData(u_measures, list(untreated_liv or [])))
    return data, diags


def discrete_gap_data(levels, treated_sub, untreated_sub, builder=complier_measure):
    """Gap data for a discrete layout from per-level subdistributions.

    ``treated_sub[k]`` and ``untreated_sub[k]`` are the subdistributions at
    ``levels[k]`` (sorted increasing).
    """
    levels = np.asarray(levels, dtype=float)
    layout = make_layout(levels)
    if layout.K != levels.size:
        raise ValidationError("levels must be distinct")
    order = np.argsort(levels)
    lookup_t = {float(levels[i]): treated_sub[i] for i in order}
    lookup_u = {float(levels[i]): untreated_sub[i] for i in order}
    data, diags = gap_data_from_subdistributions(layout, lookup_t.__getitem__,
                                                 lookup_u.__getitem__, builder=builder)
    return layout, data, diags


def empirical_subdistribution(y, w, arm=TREATED):
    """``P(Y in dy, W = arm)`` from a sample."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w)
    sel = (w == 1) if arm == TREATED else (w == 0)
    if y.size == 0:
        raise ValidationError("empty sample")
    if not np.any(sel):
        return SubDistribution.zero()
    return SubDistribution(y[sel], np.full(int(sel.sum()), 1.0 / y.size))
