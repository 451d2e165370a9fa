"""Piecewise-constant weight functions on the unit interval and policies.

A target parameter is ``E[Y(1) w(U)] - E[Y(0) w(U)]`` for a weight ``w``
on [0, 1]. Every weight used here is a step function, which keeps all
downstream integrals exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .measures import EmpiricalMeasure


class StepWeight:
    """Step function on [0, 1].

    Parameters
    ----------
    breakpoints : array_like
        Increasing values starting at 0 and ending at 1.
    values : array_like
        One value per piece; piece ``i`` is ``(b[i], b[i+1]]`` (the first
        piece also contains 0).
    """

    __slots__ = ("breakpoints", "values")

    def __init__(self, breakpoints, values):
        b = np.asarray(breakpoints, dtype=float).ravel()
        v = np.asarray(values, dtype=float).ravel()
        if b.size < 2 or v.size != b.size - 1:
            raise ValidationError("need len(values) == len(breakpoints) - 1 >= 1")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValidationError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise ValidationError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValidationError("weight values must be finite")
        b.setflags(write=False)
        v.setflags(write=False)
        self.breakpoints = b
        self.values = v

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, c=1.0):
        return cls([0.0, 1.0], [c])

    @classmethod
    def indicator(cls, lo, hi, value=1.0):
        """``value`` on ``(lo, hi]`` and zero elsewhere."""
        if not 0.0 <= lo <= hi <= 1.0:
            raise DomainError("indicator limits must satisfy 0 <= lo <= hi <= 1")
        b = np.unique([0.0, lo, hi, 1.0])
        mid = 0.5 * (b[:-1] + b[1:])
        return cls(b, np.where((mid > lo) & (mid < hi), value, 0.0))

    @classmethod
    def from_function(cls, breakpoints, fn):
        """Evaluate ``fn`` at piece midpoints of the given breakpoints."""
        b = np.unique(np.concatenate([[0.0, 1.0], np.asarray(breakpoints, float)]))
        b = b[(b >= 0) & (b <= 1)]
        mid = 0.5 * (b[:-1] + b[1:])
        return cls(b, np.asarray([fn(m) for m in mid], dtype=float))

    # evaluation -------------------------------------------------------
    @property
    def lengths(self):
        return np.diff(self.breakpoints)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.breakpoints, u, side="left") - 1
        idx = np.clip(idx, 0, self.values.size - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def overlaps(self, lo, hi):
        """Lengths of each piece inside ``[lo, hi]``."""
        b = self.breakpoints
        return np.clip(np.minimum(b[1:], hi) - np.maximum(b[:-1], lo), 0.0, None)

    def integral(self, lo=0.0, hi=1.0):
        return float(np.dot(self.overlaps(lo, hi), self.values))

    def positive_integral(self, lo=0.0, hi=1.0):
        return float(np.dot(self.overlaps(lo, hi), np.clip(self.values, 0, None)))

    def negative_integral(self, lo=0.0, hi=1.0):
        return float(np.dot(self.overlaps(lo, hi), np.clip(self.values, None, 0)))

    def abs_integral(self, lo=0.0, hi=1.0):
        return float(np.dot(self.overlaps(lo, hi), np.abs(self.values)))

    def restricted_measure(self, intervals) -> EmpiricalMeasure:
        """Law of ``w(V)`` for ``V`` uniform on a finite union of intervals."""
        lengths = np.zeros(self.values.size)
        for lo, hi in intervals:
            lengths += self.overlaps(lo, hi)
        total = lengths.sum()
        if total <= 0:
            raise DomainError("restriction region has zero length")
        return EmpiricalMeasure(self.values, lengths / total)

    def pieces(self, lo=0.0, hi=1.0):
        """Yield ``(a, b, value)`` for the nonempty parts of pieces in ``[lo, hi]``."""
        b = self.breakpoints
        for i, v in enumerate(self.values):
            a, c = max(b[i], lo), min(b[i + 1], hi)
            if c > a:
                yield a, c, float(v)

    # algebra ----------------------------------------------------------
    def _combine(self, other, op):
        b = np.union1d(self.breakpoints, other.breakpoints)
        mid = 0.5 * (b[:-1] + b[1:])
        return StepWeight(b, op(self(mid), other(mid)))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        return StepWeight(self.breakpoints, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def reflected(self):
        """The weight ``u -> w(1 - u)``."""
        return StepWeight(1.0 - self.breakpoints[::-1], self.values[::-1])

    def simplified(self):
        """Merge adjacent pieces carrying identical values."""
        keep = np.concatenate([[True], self.values[1:] != self.values[:-1]])
        b = np.concatenate([self.breakpoints[:-1][keep], [1.0]])
        return StepWeight(b, self.values[keep])

    def __repr__(self):
        return f"StepWeight(breakpoints={self.breakpoints!r}, values={self.values!r})"


@dataclass(frozen=True)
class PolicySpec:
    """Counterfactual propensity map ``q = phi(z, p)``.

    kind
        ``"uniform_shift"``: ``q = clip(p + alpha, 0, 1)``;
        ``"proportional"``: ``q = clip(p * (1 + alpha), 0, 1)``;
        ``"explicit"``: ``q = targets[z]`` (labels without a target keep ``q = p``).
    """

    kind: str = "uniform_shift"
    alpha: float = 0.0
    targets: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("uniform_shift", "proportional", "explicit"):
            raise ValidationError(f"unknown policy kind {self.kind!r}")
        if not np.isfinite(self.alpha):
            raise ValidationError("policy alpha must be finite")

    def apply(self, p, z=None):
        p = np.asarray(p, dtype=float)
        if self.kind == "uniform_shift":
            if self.alpha == 0.0:
                return p.copy()
            return np.clip(p + self.alpha, 0.0, 1.0)
        if self.kind == "proportional":
            if self.alpha == 0.0:
                return p.copy()
            return np.clip(p * (1.0 + self.alpha), 0.0, 1.0)
        if z is None:
            raise ValidationError("explicit policy needs instrument labels")
        z = np.asarray(z, dtype=object)
        out = p.copy()
        flat_z, flat_o = z.reshape(-1), out.reshape(-1)
        for i, label in enumerate(flat_z):
            if _key(label) in self._tkeys:
                flat_o[i] = self._tkeys[_key(label)]
        return out

    def derivative(self, p, z=None):
        """``d phi / d p``; zero where the map is clipped or fixed."""
        p = np.asarray(p, dtype=float)
        if self.kind == "uniform_shift":
            if self.alpha == 0.0:
                return np.ones_like(p)
            q = p + self.alpha
            return ((q > 0.0) & (q < 1.0)).astype(float)
        if self.kind == "proportional":
            q = p * (1.0 + self.alpha)
            return np.where((q > 0.0) & (q < 1.0), 1.0 + self.alpha, 0.0)
        z = np.asarray(z, dtype=object)
        fixed = np.array([_key(v) in self._tkeys for v in z.reshape(-1)]).reshape(p.shape)
        return np.where(fixed, 0.0, 1.0)

    @property
    def _tkeys(self):
        return {_key(k): float(v) for k, v in self.targets.items()}

    def is_null(self):
        return self.kind in ("uniform_shift", "proportional") and self.alpha == 0.0

    def mirrored(self):
        """Policy acting on ``1 - p`` so that ``1 - q = phi'(1 - p)``."""
        return _MirroredPolicy(self)


class _MirroredPolicy:
    def __init__(self, base):
        self.base = base

    def apply(self, p, z=None):
        return 1.0 - self.base.apply(1.0 - np.asarray(p, dtype=float), z)

    def derivative(self, p, z=None):
        return self.base.derivative(1.0 - np.asarray(p, dtype=float), z)

    def is_null(self):
        return self.base.is_null()

    def mirrored(self):
        return self.base


def _key(label):
    """Normalize instrument labels so 1, 1.0 and "1" compare equal."""
    try:
        f = float(label)
        return repr(f)
    except (TypeError, ValueError):
        return str(label)


@dataclass(frozen=True)
class PropensityDist:
    """Discrete distribution of the baseline propensity ``p(Z)``."""

    values: np.ndarray
    probs: np.ndarray
    labels: Sequence | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        pr = np.asarray(self.probs, dtype=float).ravel()
        if v.shape != pr.shape or v.size == 0:
            raise ValidationError("values and probs must be nonempty and aligned")
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-9:
            raise ValidationError("baseline distribution must be normalized")
        if np.any(v < 0) or np.any(v > 1):
            raise DomainError("propensity values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", pr)


def _as_dist(d):
    if isinstance(d, PropensityDist):
        return d
    if isinstance(d, Mapping):
        return PropensityDist(list(d.keys()), list(d.values()))
    values, probs = d[0], d[1]
    labels = d[2] if len(d) > 2 else None
    return PropensityDist(values, probs, labels)


def _survival_weight(points, probs):
    """Step function ``u -> sum_i probs[i] * 1(u <= points[i])``."""
    b = np.unique(np.concatenate([[0.0, 1.0], points]))
    mid = 0.5 * (b[:-1] + b[1:])
    ind = (mid[:, None] < points[None, :]).astype(float)
    return b, ind @ probs


def prte_weight(baseline_p_dist, policy: PolicySpec, layout=None, normalize=False):
    """PRTE weight ``w(u) = P(q(Z) >= u) - P(p(Z) >= u)``.

    Parameters
    ----------
    baseline_p_dist : PropensityDist or (values, probs[, labels])
        Distribution of the baseline propensity.
    policy : PolicySpec
    layout : PropensityLayout, optional
        Only used to add the layout endpoints as (value-preserving)
        breakpoints.
    normalize : bool
        Divide by ``E[q - p]`` to obtain the per-complier PRTE.

    Returns
    -------
    StepWeight
    """
    d = _as_dist(baseline_p_dist)
    q = policy.apply(d.values, d.labels)
    extra = [] if layout is None else layout.endpoints()
    b = np.unique(np.concatenate([[0.0, 1.0], d.values, q, extra]))
    mid = 0.5 * (b[:-1] + b[1:])
    # per-unit indicator difference first, so identical p and q cancel exactly
    diff = (mid[:, None] < q[None, :]).astype(float) - (mid[:, None] < d.values[None, :])
    w = StepWeight(b, diff @ d.probs)
    if normalize:
        scale = float(np.dot(d.probs, q - d.values))
        if scale == 0.0:
            raise DomainError("policy does not move the propensity; PRTE undefined")
        w = w * (1.0 / scale)
    return w


def ate_weight():
    return StepWeight.constant(1.0)


def att_weight(baseline_p_dist):
    """``P(p(Z) >= u) / E[p(Z)]``."""
    d = _as_dist(baseline_p_dist)
    b, v = _survival_weight(d.values, d.probs)
    return StepWeight(b, v / float(np.dot(d.values, d.probs)))


def atu_weight(baseline_p_dist):
    """``P(p(Z) < u) / E[1 - p(Z)]``."""
    d = _as_dist(baseline_p_dist)
    b, v = _survival_weight(d.values, d.probs)
    return StepWeight(b, (1.0 - v) / float(np.dot(1.0 - d.values, d.probs)))


def late_weight(p0, p1):
    """``1(u in (p0, p1]) / (p1 - p0)``."""
    if not p1 > p0:
        raise DomainError("LATE needs p1 > p0")
    return StepWeight.indicator(p0, p1, 1.0 / (p1 - p0))


def estimand_weight(name, baseline_p_dist=None, policy=None, p0=None, p1=None):
    """Dispatch to the weight constructor for a named estimand."""
    name = name.lower()
    if name == "ate":
        return ate_weight()
    if name == "att":
        return att_weight(baseline_p_dist)
    if name == "atu":
        return atu_weight(baseline_p_dist)
    if name == "late":
        return late_weight(p0, p1)
    if name == "prte":
        return prte_weight(baseline_p_dist, policy, normalize=True)
    if name == "prte_unnormalized":
        return prte_weight(baseline_p_dist, policy)
    raise ValidationError(f"unknown estimand {name!r}")
