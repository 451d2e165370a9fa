"""Bounds for general treatments.

Ordered choice: each instrument value ``z`` pins down the outcome law of a
treatment level on an interval ``I(z)`` of the latent index. When the
intervals form a pi-system, an inclusion DAG splits [0, 1] into disjoint
slices ``J(z) = I(z) minus its children``; the outcome law on each slice is
recovered leaves-up and bounded by a quantile coupling.

Strictly monotone selection: the conditional mean is identified pointwise on
a set of latent values and the remainder is bounded by the outcome support.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

from .errors import (ConsistencyError, DegenerateGapError, MissingDataError,
                     StructureError, ValidationError)
from .measures import ComplierDiagnostic, EmpiricalMeasure
from .ot1d import CouplingMode, ot_product_extreme
from .roy import LOWER, UPPER, tail_term
from .weights import StepWeight

LEN_TOL = 1e-12


def _interval(iv):
    lo, hi = float(iv[0]), float(iv[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValidationError(f"interval {iv!r} not inside [0, 1]")
    return (lo, hi)


@dataclass
class IntervalFamily:
    entries: Mapping

    def __post_init__(self):
        self.entries = {z: _interval(iv) for z, iv in dict(self.entries).items()}
        if not self.entries:
            raise ValidationError("interval family is empty")


def _intersect(a, b):
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (lo, hi) if lo <= hi else None


def _same(a, b, tol=LEN_TOL):
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


def _pi_violation(family: IntervalFamily):
    items = list(family.entries.items())
    members = [iv for _, iv in items]
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            (za, a), (zb, b) = items[i], items[j]
            cut = _intersect(a, b)
            if cut is None:
                continue
            degenerate_input = a[1] - a[0] <= LEN_TOL or b[1] - b[0] <= LEN_TOL
            if cut[1] - cut[0] <= LEN_TOL and not degenerate_input:
                continue  # null intersection counts as empty
            if not any(_same(cut, m) for m in members):
                return za, zb, cut
    return None


def validate_pi_system(family: IntervalFamily) -> bool:
    """True iff every pairwise intersection is (null or) a member interval."""
    return _pi_violation(family) is None


def _union_length(ivs):
    ivs = sorted(ivs)
    total, cur = 0.0, None
    for lo, hi in ivs:
        if cur is None or lo > cur[1]:
            if cur is not None:
                total += cur[1] - cur[0]
            cur = [lo, hi]
        else:
            cur[1] = max(cur[1], hi)
    if cur is not None:
        total += cur[1] - cur[0]
    return total


def _subtract(base, holes):
    """``base`` minus a union of intervals, as sorted disjoint pieces."""
    pieces = [base]
    for h in sorted(holes):
        nxt = []
        for lo, hi in pieces:
            if h[1] <= lo or h[0] >= hi:
                nxt.append((lo, hi))
                continue
            if h[0] > lo:
                nxt.append((lo, h[0]))
            if h[1] < hi:
                nxt.append((h[1], hi))
        pieces = nxt
    return [(lo, hi) for lo, hi in pieces if hi - lo > LEN_TOL]


@dataclass
class InclusionDag:
    """Inclusion DAG over distinct intervals.

    Attributes
    ----------
    nodes : dict
        Node key (first label of a tie class) -> interval.
    members : dict
        Node key -> list of instrument labels sharing that interval.
    children : dict
        Node key -> list of direct children.
    regions : dict
        Node key -> list of disjoint pieces forming ``J(z)``.
    unconstrained : list
        Pieces of ``J(empty)``.
    """

    nodes: dict
    members: dict
    children: dict
    regions: dict
    unconstrained: list = field(default_factory=list)

    def descendants(self, key):
        out, stack = [], list(self.children[key])
        while stack:
            c = stack.pop()
            if c not in out:
                out.append(c)
                stack.extend(self.children[c])
        return out

    def region_length(self, key):
        return sum(hi - lo for lo, hi in self.regions[key])

    def interval_length(self, key):
        lo, hi = self.nodes[key]
        return hi - lo

    def topological_leaves_first(self):
        order, seen = [], set()

        def visit(k):
            if k in seen:
                return
            seen.add(k)
            for c in self.children[k]:
                visit(c)
            order.append(k)

        for k in sorted(self.nodes, key=lambda k: self.interval_length(k)):
            visit(k)
        return order

    def node_of(self, label):
        for key, labels in self.members.items():
            if label in labels:
                return key
        raise MissingDataError(f"unknown instrument label {label!r}")


def build_dag_and_regions(family: IntervalFamily) -> InclusionDag:
    """Build the strict-inclusion DAG and the isolated slices ``J(z)``."""
    bad = _pi_violation(family)
    if bad is not None:
        za, zb, cut = bad
        raise StructureError(f"intervals of {za!r} and {zb!r} intersect in {cut!r}, "
                             "which is not a member of the family")
    nodes, members = {}, {}
    for z, iv in family.entries.items():
        for key, other in nodes.items():
            if _same(iv, other):
                members[key].append(z)
                break
        else:
            nodes[z] = iv
            members[z] = [z]

    def inside(a, b):  # a strictly inside b
        return a[0] >= b[0] - LEN_TOL and a[1] <= b[1] + LEN_TOL and not _same(a, b)

    children = {k: [] for k in nodes}
    for c, ivc in nodes.items():
        parents = [p for p, ivp in nodes.items() if p != c and inside(ivc, ivp)]
        for p in parents:
            if not any(inside(ivc, nodes[m]) and inside(nodes[m], nodes[p])
                       for m in parents if m != p):
                children[p].append(c)
    regions = {k: _subtract(nodes[k], [nodes[c] for c in children[k]]) for k in nodes}
    free = _subtract((0.0, 1.0), list(nodes.values()))
    return InclusionDag(nodes, members, children, regions, free)


@dataclass
class IsolatedMeasureSet:
    measures: dict
    diagnostics: dict
    mass_residual: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.measures[key]

    def __contains__(self, key):
        return key in self.measures


def _tv_distance(a: EmpiricalMeasure, b: EmpiricalMeasure):
    atoms = np.union1d(a.atoms, b.atoms)
    wa = np.zeros(atoms.size)
    wb = np.zeros(atoms.size)
    wa[np.searchsorted(atoms, a.atoms)] = a.weights
    wb[np.searchsorted(atoms, b.atoms)] = b.weights
    return 0.5 * float(np.abs(wa - wb).sum())


def isolated_measures(dag: InclusionDag, observed: Mapping, tv_tol=1e-6,
                      require=()) -> IsolatedMeasureSet:
    """Outcome laws on the isolated slices, computed leaves first.

    Parameters
    ----------
    dag : InclusionDag
    observed : mapping
        Instrument label -> law of ``Y`` given the treatment level and ``z``.
    tv_tol : float
        Allowed total-variation disagreement between tied instruments.
    require : iterable
        Labels whose slice must have positive length.

    Returns
    -------
    IsolatedMeasureSet
        Keyed by DAG node. Nodes with a zero-length slice carry no measure.
    """
    for label in require:
        key = dag.node_of(label)
        if dag.region_length(key) <= LEN_TOL:
            raise DegenerateGapError(f"isolated region of {label!r} has zero length")
    obs = {}
    for key, labels in dag.members.items():
        laws = [observed[z] for z in labels if z in observed]
        if not laws:
            if dag.interval_length(key) > LEN_TOL:
                raise MissingDataError(f"no observed law for node {key!r}")
            continue
        for other in laws[1:]:
            if _tv_distance(laws[0], other) > tv_tol:
                raise ConsistencyError(f"tied instruments {labels!r} disagree")
        obs[key] = laws[0]
    measures, diags, resid = {}, {}, {}
    for key in dag.topological_leaves_first():
        length_i = dag.interval_length(key)
        length_j = dag.region_length(key)
        if length_i <= LEN_TOL:
            continue
        atoms = [obs[key].atoms]
        weights = [length_i * obs[key].weights]
        for d in dag.descendants(key):
            if d in measures:
                atoms.append(measures[d].atoms)
                weights.append(-dag.region_length(d) * measures[d].weights)
        atoms = np.concatenate(atoms)
        weights = np.concatenate(weights)
        uniq, inv = np.unique(atoms, return_inverse=True)
        w = np.zeros(uniq.size)
        np.add.at(w, inv, weights)
        resid[key] = float(w.sum()) - length_j
        if length_j <= LEN_TOL:
            continue
        w /= length_j
        deviation = abs(float(w.sum()) - 1.0)
        w[(w < 0) & (w > -1e-12)] = 0.0
        neg = float(-w[w < 0].sum())
        w = np.clip(w, 0.0, None)
        measures[key] = EmpiricalMeasure(uniq, w / w.sum())
        diags[key] = ComplierDiagnostic(neg, neg > 0, deviation)
    return IsolatedMeasureSet(measures, diags, resid)


def bound_ordered_choice(dag: InclusionDag, measures: IsolatedMeasureSet,
                         weight: StepWeight, y_min, y_max, side=LOWER) -> float:
    """Sharp bound on ``E[Y(w) w(U)]`` for one treatment level and stratum."""
    if side not in (LOWER, UPPER):
        raise ValidationError("side must be 'lower' or 'upper'")
    mode = CouplingMode.COUNTERMONOTONE if side == LOWER else CouplingMode.COMONOTONE
    total = 0.0
    for key, pieces in dag.regions.items():
        length = sum(hi - lo for lo, hi in pieces)
        if length <= LEN_TOL:
            continue
        if key not in measures:
            raise MissingDataError(f"missing isolated measure for node {key!r}")
        omega = weight.restricted_measure(pieces)
        total += length * ot_product_extreme(measures[key], omega, mode)
    for lo, hi in dag.unconstrained:
        total += tail_term(weight, lo, hi, y_min, y_max, side)
    return total


def aggregate_levels(values, probs=None):
    """``sum_w E_X`` of per-(level, stratum) bounds.

    ``values`` maps ``(w, x)`` to a bound; ``probs`` maps ``x`` to its
    probability (a single stratum by default).
    """
    total = 0.0
    for (w, x), v in values.items():
        total += (1.0 if probs is None else probs[x]) * v
    return total


def integrate_over_treatments(grid, values):
    """Trapezoid rule over a caller-supplied treatment grid."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.size != values.size or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be increasing with matching values")
    trap = getattr(np, "trapezoid", None) or np.trapz
    return float(trap(values, grid))


def bound_strict_monotone(identified_means: Callable, u_id, weight: StepWeight,
                          y_min, y_max, side=LOWER, tol=1e-8) -> float:
    """Bound under strictly monotone selection.

    Parameters
    ----------
    identified_means : callable
        ``u -> E[Y | W = w, Z = z_u]`` wherever ``u`` is identified.
    u_id : sequence of (lo, hi) or callable
        The identified set as a union of intervals, or an indicator.
    weight : StepWeight
    y_min, y_max : float
    side : {"lower", "upper"}
    """
    if side not in (LOWER, UPPER):
        raise ValidationError("side must be 'lower' or 'upper'")
    if callable(u_id):
        indicator = u_id
        splits = []
    else:
        ivs = [_interval(iv) for iv in u_id]
        indicator = lambda u: any(lo <= u <= hi for lo, hi in ivs)  # noqa: E731
        splits = [e for iv in ivs for e in iv]
    b = np.unique(np.concatenate([weight.breakpoints, splits]))
    if side == LOWER:
        trivial = lambda v: y_min * max(0.0, v) + y_max * min(0.0, v)  # noqa: E731
    else:
        trivial = lambda v: y_max * max(0.0, v) + y_min * min(0.0, v)  # noqa: E731
    total = 0.0
    for a, c in zip(b[:-1], b[1:]):
        v = weight(0.5 * (a + c))

        def f(u, v=v):
            return identified_means(u) * v if indicator(u) else trivial(v)

        if v == 0.0:
            continue
        if not callable(u_id):
            mid = 0.5 * (a + c)
            if indicator(mid):
                val, _ = integrate.quad(lambda u: identified_means(u) * v, a, c,
                                        epsabs=tol * 1e-2, epsrel=tol, limit=200)
            else:
                val = trivial(v) * (c - a)
        else:
            val, _ = integrate.quad(f, a, c, epsabs=tol * 1e-2, epsrel=tol, limit=500)
        total += val
    return total
