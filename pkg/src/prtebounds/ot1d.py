"""One-dimensional optimal transport with product cost.

For the cost ``c(a, b) = a * b`` the minimum over couplings is attained by
the countermonotone coupling and the maximum by the comonotone one, so both
extremes are integrals of products of quantile functions. Those are computed
exactly on the merged cumulative-weight grid.

``ot_bruteforce`` solves the small transportation problem directly and serves
as an independent oracle in the tests.
"""
from __future__ import annotations

from collections import deque
from enum import Enum

import numpy as np

from .errors import SizeError
from .measures import EmpiricalMeasure


class CouplingMode(str, Enum):
    COMONOTONE = "comonotone"
    COUNTERMONOTONE = "countermonotone"


def merged_grid(mu: EmpiricalMeasure, nu: EmpiricalMeasure, mode: CouplingMode):
    """Pieces of [0, 1] on which ``Q_mu(t)`` and the paired ``Q_nu`` are constant.

    Returns
    -------
    lengths, mu_values, nu_values : ndarray
        For the countermonotone mode ``nu_values`` holds ``Q_nu(1 - t)``.
    """
    mode = CouplingMode(mode)
    cum_mu = mu.cumulative
    cum_nu = nu.cumulative
    if mode is CouplingMode.COUNTERMONOTONE:
        nu_breaks = 1.0 - cum_nu[:-1]
    else:
        nu_breaks = cum_nu[:-1]
    grid = np.unique(np.concatenate([[0.0, 1.0], cum_mu[:-1], nu_breaks]))
    grid = grid[(grid >= 0.0) & (grid <= 1.0)]
    lengths = np.diff(grid)
    mid = 0.5 * (grid[:-1] + grid[1:])
    i_mu = np.minimum(np.searchsorted(cum_mu, mid, side="left"), len(mu) - 1)
    t_nu = 1.0 - mid if mode is CouplingMode.COUNTERMONOTONE else mid
    i_nu = np.minimum(np.searchsorted(cum_nu, t_nu, side="left"), len(nu) - 1)
    return lengths, mu.atoms[i_mu], nu.atoms[i_nu]


def ot_product_extreme(mu: EmpiricalMeasure, nu: EmpiricalMeasure, mode) -> float:
    """Extreme of ``E[A B]`` over couplings of ``A ~ mu`` and ``B ~ nu``.

    Parameters
    ----------
    mu, nu : EmpiricalMeasure
    mode : CouplingMode or str
        ``"countermonotone"`` gives the minimum, ``"comonotone"`` the maximum.

    Returns
    -------
    float
    """
    lengths, a, b = merged_grid(mu, nu, mode)
    return float(np.sum(lengths * a * b))


def _northwest_corner(supply, demand):
    m, n = supply.size, demand.size
    a, b = supply.copy(), demand.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    by_row = [[] for _ in range(m)]
    by_col = [[] for _ in range(n)]
    for i, j in basis:
        by_row[i].append(j)
        by_col[j].append(i)
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in by_row[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in by_col[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    return u, v


def _tree_path(basis, m, start_row, end_col):
    """Cells on the basis-tree path from row ``start_row`` to column ``end_col``."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append((("c", j), (i, j)))
        adj.setdefault(("c", j), []).append((("r", i), (i, j)))
    start, goal = ("r", start_row), ("c", end_col)
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, []):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    cells = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        cells.append(cell)
    return cells[::-1]


def _transport_min(cost, supply, demand, tol=1e-12, max_iter=10_000):
    m, n = cost.shape
    flow, basis = _northwest_corner(supply, demand)
    for _ in range(max_iter):
        u, v = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        in_basis = np.zeros((m, n), dtype=bool)
        for i, j in basis:
            in_basis[i, j] = True
        candidates = np.argwhere((reduced < -tol) & ~in_basis)
        if candidates.size == 0:
            break
        # Bland's rule: lowest-index entering cell prevents cycling.
        ei, ej = map(int, candidates[0])
        path = _tree_path(basis, m, ei, ej)
        minus = path[::-2]  # cells adjacent to the entering column, alternating
        plus = path[-2::-2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] <= theta + tol)
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
    else:  # pragma: no cover - defensive
        raise RuntimeError("transportation simplex did not converge")
    return float(np.sum(cost * flow)), flow


def ot_bruteforce(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cost=None):
    """Exact min and max of a discrete transportation problem.

    Parameters
    ----------
    mu, nu : EmpiricalMeasure
        Marginals with at most 8 atoms each.
    cost : array_like, optional
        Table ``cost[i, j]`` indexed by atom pairs; product cost by default.

    Returns
    -------
    (float, float)
        Minimum and maximum expected cost.

    Notes
    -----
    North-west-corner start followed by transportation-simplex pivots with
    Bland's rule; the maximum is the negated minimum of the negated cost.
    """
    if len(mu) > 8 or len(nu) > 8:
        raise SizeError("brute-force oracle supports at most 8 atoms per side")
    if cost is None:
        cost = np.outer(mu.atoms, nu.atoms)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (len(mu), len(nu)):
        raise SizeError("cost table shape does not match the supports")
    lo, _ = _transport_min(cost, np.array(mu.weights), np.array(nu.weights))
    neg, _ = _transport_min(-cost, np.array(mu.weights), np.array(nu.weights))
    return lo, -neg
