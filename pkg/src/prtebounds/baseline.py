"""Moment-relaxation baseline: MTR sieve bounds by linear programming.

The marginal treatment response functions ``m1``, ``m0`` are restricted to a
spline space and to ``[y_min, y_max]`` on a check grid. The data enter only
through integral moments ``int m_w(u) kappa(u) du = value`` with step-function
kernels ``kappa``. The bounds are the min and max of ``int (m1 - m0) omega``
over that feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import InfeasibleError, ValidationError
from .learners import fit_learner
from .lp import LpProblem, solve_dual_form
from .roy import BoundPair
from .weights import PolicySpec, StepWeight, prte_weight

CHECK_GRID = 512


def bspline_basis(x, knots, degree):
    """B-spline basis values by the Cox-de Boor recursion.

    Parameters
    ----------
    x : array_like
        Points in ``[knots[0], knots[-1]]``; the right end belongs to the
        last non-empty span, other knots to the span on their right.
    knots : array_like
        Full non-decreasing knot vector with ``degree + 1`` copies of each end.
    degree : int

    Returns
    -------
    ndarray, shape (len(x), len(knots) - degree - 1)
    """
    t = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nb0 = t.size - 1
    span = np.searchsorted(t, x, side="right") - 1
    last = np.flatnonzero(t[1:] > t[:-1]).max()
    span = np.clip(span, 0, last)
    span[x >= t[-1]] = last
    B = np.zeros((x.size, nb0))
    B[np.arange(x.size), span] = 1.0
    for k in range(1, degree + 1):
        nb = t.size - k - 1
        left = t[k:k + nb] - t[:nb]
        right = t[k + 1:k + 1 + nb] - t[1:nb + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(left > 0, (x[:, None] - t[:nb]) / left, 0.0)
            b = np.where(right > 0, (t[k + 1:k + 1 + nb] - x[:, None]) / right, 0.0)
        B = a * B[:, :nb] + b * B[:, 1:nb + 1]
    return B


@dataclass
class MtrSieve:
    """Spline space on ``[0, 1]`` for one MTR function.

    Parameters
    ----------
    degree : int
    knots : sequence of float
        Interior knots in ``(0, 1)``.
    continuity : int, optional
        Order of continuous derivatives at interior knots; ``-1`` allows
        jumps. Default ``degree - 1`` (ordinary splines).
    breaks : sequence of float, optional
        Extra points in ``(0, 1)`` where the function may jump. Placing them
        at the propensity levels and policy breakpoints lets the sieve hold
        the step-shaped extremal MTR functions.
    """

    degree: int = 9
    knots: tuple = tuple(np.round(np.arange(1, 10) / 10, 12))
    continuity: int | None = None
    breaks: tuple = ()

    def __post_init__(self):
        if self.degree < 0:
            raise ValidationError("degree must be nonnegative")
        k = np.unique(np.asarray(self.knots, dtype=float))
        if k.size and (k.min() <= 0 or k.max() >= 1):
            raise ValidationError("interior knots must lie in (0, 1)")
        self.knots = tuple(k.tolist())
        br = np.unique(np.asarray(self.breaks, dtype=float))
        if br.size and (br.min() <= 0 or br.max() >= 1):
            raise ValidationError("break points must lie in (0, 1)")
        self.breaks = tuple(br.tolist())
        r = self.degree - 1 if self.continuity is None else int(self.continuity)
        if not -1 <= r <= self.degree - 1 and not (self.degree == 0 and r == -1):
            raise ValidationError("continuity must lie in [-1, degree - 1]")
        self.continuity = r

    @property
    def knot_vector(self):
        pts = np.union1d(self.knots, self.breaks)
        mult = np.where(np.isin(pts, self.breaks), self.degree + 1, self.degree - self.continuity)
        inner = np.repeat(pts, mult)
        ends = np.full(self.degree + 1, 1.0)
        return np.concatenate([np.zeros(self.degree + 1), inner, ends])

    @property
    def size(self):
        return self.knot_vector.size - self.degree - 1

    def basis(self, u):
        return bspline_basis(u, self.knot_vector, self.degree)

    def integral(self, u):
        """``int_0^u`` of every basis function (exact, via degree raising)."""
        t = self.knot_vector
        d = self.degree
        ext = np.concatenate([[t[0]], t, [t[-1]]])
        Bp = bspline_basis(u, ext, d + 1)  # basis j here starts at knot t[j - 1]
        tail = np.cumsum(Bp[:, ::-1], axis=1)[:, ::-1]
        scale = (t[d + 1:d + 1 + self.size] - t[:self.size]) / (d + 1)
        return tail[:, 1:self.size + 1] * scale

    def weighted_integral(self, kernel: StepWeight):
        """``int_0^1 basis_j(u) kernel(u) du`` for every ``j``."""
        b = np.asarray(kernel.breakpoints, dtype=float)
        I = self.integral(b)
        return np.asarray(kernel.values, dtype=float) @ np.diff(I, axis=0)


def survival_kernel(p, pr, treated=True):
    """``u -> sum pr_i 1(u <= p_i)`` (treated) or ``sum pr_i 1(u > p_i)``."""
    p = np.asarray(p, dtype=float)
    pr = np.asarray(pr, dtype=float)
    b = np.unique(np.concatenate([[0.0, 1.0], p]))
    mid = 0.5 * (b[:-1] + b[1:])
    order = np.argsort(p)
    ps, ws = p[order], pr[order]
    above = ws.sum() - np.concatenate([[0.0], np.cumsum(ws)])[np.searchsorted(ps, mid)]
    vals = above if treated else ws.sum() - above
    return StepWeight(b, vals)


@dataclass
class MomentSet:
    """Moments ``(arm, kernel, value)`` meaning ``int m_arm * kernel = value``."""

    moments: list = field(default_factory=list)

    def add(self, arm, kernel, value):
        if arm not in (0, 1):
            raise ValidationError("arm must be 0 or 1")
        self.moments.append((arm, kernel, float(value)))

    def __iter__(self):
        return iter(self.moments)

    def __len__(self):
        return len(self.moments)


def level_moments(levels, probs, treated_means, untreated_means) -> MomentSet:
    """Moments of a discrete instrument from per-level conditional means.

    Level ``k`` with propensity ``p_k`` and probability ``P_k`` gives
    ``P_k int_0^{p_k} m1 = P_k p_k E[Y | W=1, level k]`` and
    ``P_k int_{p_k}^1 m0 = P_k (1 - p_k) E[Y | W=0, level k]``. Means of an
    empty arm (``p_k`` equal to 0 or 1) are ignored.
    """
    ms = MomentSet()
    for p, pr, m1, m0 in zip(levels, probs, treated_means, untreated_means):
        if p > 0:
            ms.add(1, StepWeight.indicator(0.0, p, pr), pr * p * m1)
        if p < 1:
            ms.add(0, StepWeight.indicator(p, 1.0, pr), pr * (1 - p) * m0)
    return ms


def moment_constraints(moments, sieve: MtrSieve):
    """Equality block ``A @ [beta1, beta0] = b`` of the moment conditions."""
    moments = list(moments)
    n = sieve.size
    A = np.zeros((len(moments), 2 * n))
    b = np.zeros(len(moments))
    for i, (arm, kernel, value) in enumerate(moments):
        row = sieve.weighted_integral(kernel)
        if arm == 1:
            A[i, :n] = row
        else:
            A[i, n:] = row
        b[i] = value
    return A, b


def _span_points(sieve: MtrSieve):
    """``degree + 2`` points in every knot span, so no span escapes the range check."""
    edges = np.concatenate([[0.0], np.union1d(sieve.knots, sieve.breaks), [1.0]])
    return np.concatenate([np.linspace(lo, hi, sieve.degree + 2)
                           for lo, hi in zip(edges[:-1], edges[1:])])


def _initial_points(sieve: MtrSieve, grid):
    """Grid indices that pin down every spline coefficient."""
    edges = np.concatenate([[0.0], np.union1d(sieve.knots, sieve.breaks), [1.0]])
    idx = [0, grid.size - 1]
    for lo, hi in zip(edges[:-1], edges[1:]):
        inside = np.flatnonzero((grid >= lo) & (grid <= hi))
        take = min(inside.size, sieve.degree + 2)
        idx.extend(inside[np.round(np.linspace(0, inside.size - 1, take)).astype(int)])
    return np.unique(idx)


def _solve_side(c, A_eq, b_eq, B_all, y_min, y_max, active, n, sign, max_rounds=60):
    """Cutting-plane loop: add the most violated grid bounds until none remain."""
    rounds, iters = 0, 0
    while True:
        rounds += 1
        rows = np.concatenate([active[0], active[1]])
        arms = np.concatenate([np.ones(active[0].size, int), np.zeros(active[1].size, int)])
        Bsub = np.zeros((rows.size, 2 * n))
        sel1 = arms == 1
        Bsub[sel1, :n] = B_all[rows[sel1]]
        Bsub[~sel1, n:] = B_all[rows[~sel1]]
        A_ub = np.vstack([Bsub, -Bsub])
        b_ub = np.concatenate([np.full(rows.size, y_max), np.full(rows.size, -y_min)])
        res = solve_dual_form(LpProblem(sign * c, A_ub, b_ub, A_eq, b_eq, np.ones(2 * n, bool)))
        iters += res.iterations
        if res.status == "infeasible":
            raise InfeasibleError("moment constraints are infeasible for this sieve "
                                  "(model misspecification)")
        if res.status == "unbounded":
            # too few check points: add every grid point
            full = np.arange(B_all.shape[0])
            if active[0].size == full.size and active[1].size == full.size:
                raise InfeasibleError("sieve LP unbounded even on the full check grid")
            active = (full, full)
            continue
        if res.status != "optimal":
            raise InfeasibleError(f"LP solver stopped: {res.status}")
        beta1, beta0 = res.x[:n], res.x[n:]
        added = False
        new = []
        for arm_active, beta in ((active[0], beta1), (active[1], beta0)):
            vals = B_all @ beta
            viol = np.maximum(vals - y_max, y_min - vals)
            viol[arm_active] = -np.inf
            bad = np.flatnonzero(viol > 1e-9 * max(1.0, y_max - y_min))
            if bad.size:
                added = True
                worst = bad[np.argsort(-viol[bad])][:40]
                arm_active = np.union1d(arm_active, worst)
            new.append(arm_active)
        active = (new[0], new[1])
        if not added or rounds >= max_rounds:
            return float(c @ res.x), res.x, {"rounds": rounds, "pivots": iters,
                                             "check_points": [int(a.size) for a in active],
                                             "converged": not added}


def solve_mr_bounds(moments, weight: StepWeight, sieve: MtrSieve | None = None,
                    y_min=0.0, y_max=1.0, grid=CHECK_GRID) -> BoundPair:
    """Moment-relaxation bounds on ``int (m1 - m0) * weight``.

    Parameters
    ----------
    moments : iterable of (arm, StepWeight, float)
    weight : StepWeight
    sieve : MtrSieve, optional
        Shared by ``m1`` and ``m0``; default degree 9 with knots 0.1..0.9.
    y_min, y_max : float
    grid : int
        Size of the uniform check grid on ``[0, 1]`` for the range
        constraints; ``degree + 2`` points per knot span are always added.

    Returns
    -------
    BoundPair
        ``components`` holds the optimizing coefficients and LP statistics.
    """
    sieve = sieve or MtrSieve()
    if not y_min < y_max:
        raise ValidationError("need y_min < y_max")
    n = sieve.size
    A_eq, b_eq = moment_constraints(moments, sieve)
    w_int = sieve.weighted_integral(weight)
    c = np.concatenate([w_int, -w_int])
    if not np.any(c):
        return BoundPair(0.0, 0.0, {"sieve_size": n, "note": "zero weight"})
    pts = np.union1d(np.linspace(0.0, 1.0, grid), _span_points(sieve))
    B_all = sieve.basis(pts)
    start = _initial_points(sieve, pts)
    lo, x_lo, st_lo = _solve_side(c, A_eq, b_eq, B_all, y_min, y_max, (start, start), n, 1.0)
    hi, x_hi, st_hi = _solve_side(c, A_eq, b_eq, B_all, y_min, y_max, (start, start), n, -1.0)
    comp = {"sieve_size": n, "lower_lp": st_lo, "upper_lp": st_hi,
            "coef_lower": x_lo, "coef_upper": x_hi}
    if lo > hi:  # only possible through pivoting round-off
        lo = hi = 0.5 * (lo + hi)
    return BoundPair(lo, hi, comp)


def moments_from_data(ds: Dataset, bins=4, prop_learner="logistic"):
    """Sample moments and the estimated propensity distribution.

    Returns
    -------
    MomentSet, (p_values, probs, labels)
    """
    n = ds.n
    yw = ds.y * ds.w
    y0 = ds.y * (1 - ds.w)
    ms = MomentSet()
    if ds.instrument_kind == "discrete":
        labels = ds.labels()
        p = np.array([ds.w[ds.z == lab].mean() for lab in labels])
        pr = np.array([np.mean(ds.z == lab) for lab in labels])
        for lab, pk, prk in zip(labels, p, pr):
            sel = ds.z == lab
            if pk > 0:
                ms.add(1, StepWeight.indicator(0.0, pk, prk), yw[sel].sum() / n)
            if pk < 1:
                ms.add(0, StepWeight.indicator(pk, 1.0, prk), y0[sel].sum() / n)
        return ms, (p, pr, labels)
    feats = np.column_stack([ds.z.astype(float), ds.x])
    p_hat = np.clip(fit_learner(prop_learner, feats, ds.w.astype(float)).predict(feats), 0, 1)
    edges = np.quantile(ds.z.astype(float), np.linspace(0, 1, bins + 1))
    which = np.clip(np.searchsorted(edges, ds.z.astype(float), side="right") - 1, 0, bins - 1)
    for b in range(bins):
        sel = which == b
        if not np.any(sel):
            continue
        pr = np.full(int(sel.sum()), 1.0 / n)
        ms.add(1, survival_kernel(p_hat[sel], pr, True), yw[sel].sum() / n)
        ms.add(0, survival_kernel(p_hat[sel], pr, False), y0[sel].sum() / n)
    return ms, (p_hat, np.full(n, 1.0 / n), None)


def kernel_breaks(moments, weight: StepWeight, limit=40):
    """Interior breakpoints of the moment kernels and the target weight.

    Returns an empty tuple when there are more than ``limit`` of them, as
    with a continuous instrument.
    """
    pts = [np.asarray(weight.breakpoints, dtype=float)]
    pts += [np.asarray(k.breakpoints, dtype=float) for _, k, _ in moments]
    pts = np.unique(np.concatenate(pts))
    pts = pts[(pts > 1e-9) & (pts < 1 - 1e-9)]
    return tuple(pts.tolist()) if pts.size <= limit else ()


def mr_bounds_from_data(ds: Dataset, policy: PolicySpec, degree=9, knots=None, continuity=None,
                        bins=4, grid=CHECK_GRID, breaks=None) -> BoundPair:
    """Moment-relaxation bounds for the aggregate effect of ``policy``.

    Discrete instruments use one moment per label and arm; continuous
    instruments use ``bins`` equal-frequency bins of the instrument with the
    propensity from a logistic fit. ``breaks="auto"`` allows jumps at the
    kernel breakpoints (see ``kernel_breaks``).
    """
    ms, dist = moments_from_data(ds, bins)
    if dist[2] is None:
        weight = prte_weight((dist[0], dist[1]), policy)
    else:
        weight = prte_weight(dist, policy)
    if isinstance(breaks, str):
        if breaks != "auto":
            raise ValidationError("breaks must be a sequence or 'auto'")
        breaks = kernel_breaks(ms, weight)
    sieve = MtrSieve(degree, tuple(np.arange(1, 10) / 10) if knots is None else tuple(knots),
                     continuity, tuple(breaks or ()))
    return solve_mr_bounds(ms, weight, sieve, ds.y_min, ds.y_max, grid)
