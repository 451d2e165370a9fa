"""Finite discrete measures on the real line.

Quantiles follow the left-continuous generalized inverse
``Q(t) = inf{y : F(y) >= t}`` with ``Q(0)`` the smallest atom. Integrals of
quantile functions are exact: the integrand is a step function in ``t`` and
is summed piece by piece over the cumulative-weight grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGapError, DomainError, ValidationError

# Slack used when comparing a level t against cumulative weights, so that
# e.g. 0.2 + 0.5 still counts as reaching 0.7.
CUM_TOL = 1e-12


def _merge_atoms(atoms, weights):
    atoms = np.asarray(atoms, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if atoms.shape != weights.shape:
        raise ValidationError("atoms and weights must have the same length")
    if atoms.size == 0:
        raise ValidationError("measure needs at least one atom")
    if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
        raise ValidationError("atoms and weights must be finite")
    uniq, inv = np.unique(atoms, return_inverse=True)
    merged = np.zeros(uniq.size)
    np.add.at(merged, inv, weights)
    return uniq, merged


class EmpiricalMeasure:
    """Probability measure with finitely many atoms.

    Parameters
    ----------
    atoms : array_like
        Support points. Duplicates are merged and the result is sorted.
    weights : array_like
        Nonnegative masses summing to one (within 1e-9; the stored weights
        are renormalized exactly).
    support : tuple of float, optional
        Declared outcome interval ``(y_min, y_max)``; atoms must lie inside.
    """

    __slots__ = ("atoms", "weights", "_cum")

    def __init__(self, atoms, weights, support=None):
        atoms, weights = _merge_atoms(atoms, weights)
        if np.any(weights < 0):
            raise ValidationError("weights must be nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"weights sum to {total!r}, expected 1")
        keep = weights > 0
        if not np.any(keep):
            raise ValidationError("measure has no positive mass")
        atoms, weights = atoms[keep], weights[keep] / total
        if support is not None:
            lo, hi = support
            if atoms[0] < lo - 1e-12 or atoms[-1] > hi + 1e-12:
                raise ValidationError("atoms outside declared support")
        cum = np.cumsum(weights)
        cum[-1] = 1.0
        atoms.setflags(write=False)
        weights.setflags(write=False)
        cum.setflags(write=False)
        self.atoms = atoms
        self.weights = weights
        self._cum = cum

    @classmethod
    def point(cls, value):
        return cls([value], [1.0])

    @classmethod
    def from_sample(cls, values, sample_weights=None):
        """Empirical law of a sample, optionally weighted."""
        values = np.asarray(values, dtype=float).ravel()
        if sample_weights is None:
            sample_weights = np.ones(values.size)
        sample_weights = np.asarray(sample_weights, dtype=float)
        return cls(values, sample_weights / sample_weights.sum())

    @property
    def cumulative(self):
        return self._cum

    def mean(self):
        return float(np.dot(self.atoms, self.weights))

    def cdf(self, y):
        idx = np.searchsorted(self.atoms, y, side="right")
        cum = np.concatenate([[0.0], self._cum])
        return cum[idx]

    def __len__(self):
        return self.atoms.size

    def __repr__(self):
        return f"EmpiricalMeasure(atoms={self.atoms!r}, weights={self.weights!r})"

    def scaled(self, mass):
        """Return the subdistribution ``mass * self``."""
        return SubDistribution(self.atoms, mass * self.weights)

    def shifted(self, c):
        return EmpiricalMeasure(self.atoms + c, self.weights)

    def negated(self):
        return EmpiricalMeasure(-self.atoms, self.weights)


@dataclass(frozen=True)
class SubDistribution:
    """Nonnegative finite measure whose total mass need not be one.

    Used for quantities like ``P(Y in dy, W = 1 | p(Z) = p)``, which carry
    total mass ``p``.
    """

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        atoms, masses = _merge_atoms(self.atoms, self.masses) if np.size(self.atoms) else (
            np.zeros(0), np.zeros(0))
        if np.any(masses < -1e-15):
            raise ValidationError("subdistribution masses must be nonnegative")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", np.clip(masses, 0.0, None))

    @classmethod
    def zero(cls):
        return cls(np.zeros(0), np.zeros(0))

    @property
    def total(self):
        return float(self.masses.sum())


@dataclass(frozen=True)
class SignedAtomMeasure:
    """Differenced measure before projection; weights may be negative."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > 1e-8:
            raise ValidationError(f"signed weights sum to {total!r}, expected 1")

    @property
    def negative_mass(self):
        return float(-self.weights[self.weights < 0].sum())


@dataclass(frozen=True)
class ComplierDiagnostic:
    """Outcome of projecting a differenced measure onto probability measures.

    Attributes
    ----------
    negative_mass : float
        Total negative weight removed by clipping (0 when valid).
    projected : bool
        Whether clipping was applied.
    mass_deviation : float
        ``|sum of signed weights - 1|`` before clipping, recorded because a
        finite-sample difference need not carry exactly unit mass.
    """

    negative_mass: float = 0.0
    projected: bool = False
    mass_deviation: float = 0.0

    def __post_init__(self):
        if (self.negative_mass > 0) != self.projected:
            raise ValidationError("negative_mass > 0 must coincide with projected")


def quantile(m: EmpiricalMeasure, t):
    """Generalized inverse ``inf{y : F(y) >= t}``.

    Parameters
    ----------
    m : EmpiricalMeasure
    t : float or array_like
        Levels in [0, 1].

    Returns
    -------
    float or ndarray
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > 1) or np.any(np.isnan(t_arr)):
        raise DomainError("quantile level must lie in [0, 1]")
    idx = np.searchsorted(m.cumulative, t_arr - CUM_TOL, side="left")
    idx = np.minimum(idx, len(m) - 1)
    out = m.atoms[idx]
    return float(out) if out.ndim == 0 else out


def quantile_integral(m: EmpiricalMeasure, a: float, b: float) -> float:
    """Exact value of the integral of ``Q`` over ``[a, b]``."""
    if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
        raise DomainError("integration limits must lie in [0, 1]")
    if a > b:
        raise DomainError("lower limit exceeds upper limit")
    upper = m.cumulative
    lower = np.concatenate([[0.0], upper[:-1]])
    overlap = np.clip(np.minimum(upper, b) - np.maximum(lower, a), 0.0, None)
    return float(np.dot(overlap, m.atoms))


def cvar(m: EmpiricalMeasure, alpha: float) -> float:
    """Lower-tail conditional value at risk ``(1/alpha) * int_0^alpha Q``."""
    if not (0.0 < alpha <= 1.0):
        raise DomainError("alpha must lie in (0, 1]")
    return quantile_integral(m, 0.0, alpha) / alpha


def upper_tail_mean(m: EmpiricalMeasure, alpha: float) -> float:
    """Mean of the upper ``1 - alpha`` tail, ``(1/(1-alpha)) int_alpha^1 Q``."""
    if not (0.0 <= alpha < 1.0):
        raise DomainError("alpha must lie in [0, 1)")
    return quantile_integral(m, alpha, 1.0) / (1.0 - alpha)


def _as_sub(F):
    if isinstance(F, SubDistribution):
        return F
    if F is None or (isinstance(F, (int, float)) and F == 0):
        return SubDistribution.zero()
    atoms, masses = F
    return SubDistribution(np.asarray(atoms, float), np.asarray(masses, float))


def complier_measure(F_hi, F_lo, p_hi: float, p_lo: float, zero_tol: float = 1e-12):
    """Normalized difference of two subdistributions.

    Parameters
    ----------
    F_hi, F_lo : SubDistribution or (atoms, masses) or None
        Subdistributions with masses ``p_hi`` and ``p_lo``. ``None`` stands
        for the zero measure (the ``p_lo = 0`` convention).
    p_hi, p_lo : float
        Normalizing masses, ``p_lo < p_hi``.
    zero_tol : float
        Signed weights above ``-zero_tol`` are treated as rounding noise and
        not counted as negative mass.

    Returns
    -------
    (EmpiricalMeasure, ComplierDiagnostic)
    """
    if not (p_hi > p_lo):
        raise DegenerateGapError(f"p_hi={p_hi!r} must exceed p_lo={p_lo!r}")
    if not (0.0 <= p_lo and p_hi <= 1.0 + 1e-12):
        raise DomainError("masses must lie in [0, 1]")
    hi, lo = _as_sub(F_hi), _as_sub(F_lo)
    atoms = np.union1d(hi.atoms, lo.atoms)
    w = np.zeros(atoms.size)
    w[np.searchsorted(atoms, hi.atoms)] += hi.masses
    w[np.searchsorted(atoms, lo.atoms)] -= lo.masses
    w /= p_hi - p_lo
    deviation = abs(float(w.sum()) - 1.0)
    noise = (w < 0) & (w > -zero_tol)
    w[noise] = 0.0
    negative = float(-w[w < 0].sum())
    if negative > 0:
        w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise DegenerateGapError("differenced measure has no positive mass")
    measure = EmpiricalMeasure(atoms, w / total)
    diag = ComplierDiagnostic(negative_mass=negative, projected=negative > 0,
                              mass_deviation=deviation)
    return measure, diag


def rearranged_complier_measure(F_hi, F_lo, p_hi: float, p_lo: float):
    """Complier law from the monotone-rearranged difference of the two CDFs.

    The signed CDF ``(F_hi(y) - F_lo(y)) / (p_hi - p_lo)`` is replaced by its
    running maximum clipped to ``[0, 1]``. When the signed weights are all
    nonnegative this is the same law as ``complier_measure``. With sampling
    noise on a continuous outcome the two empirical CDFs have disjoint atoms;
    clipping atom by atom then drops the whole lower subdistribution, while
    the running maximum stays within the sup-norm error of the CDFs.

    Returns
    -------
    (EmpiricalMeasure, ComplierDiagnostic)
        The diagnostic is the one of ``complier_measure``.
    """
    _, diag = complier_measure(F_hi, F_lo, p_hi, p_lo)
    hi, lo = _as_sub(F_hi), _as_sub(F_lo)
    atoms = np.union1d(hi.atoms, lo.atoms)
    w = np.zeros(atoms.size)
    w[np.searchsorted(atoms, hi.atoms)] += hi.masses
    w[np.searchsorted(atoms, lo.atoms)] -= lo.masses
    G = np.clip(np.maximum.accumulate(np.cumsum(w) / (p_hi - p_lo)), 0.0, 1.0)
    G[-1] = 1.0
    return EmpiricalMeasure(atoms, np.diff(G, prepend=0.0)), diag
