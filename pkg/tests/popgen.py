"""Random discrete-instrument populations for property tests.

A population is a threshold-crossing model with ``K`` propensity levels.
Between consecutive levels the outcome law of each arm is a fixed discrete
law on shared atoms, so every subdistribution ``P(Y in dy, W = w | p)`` is
an exact finite mixture and all identified quantities are available in
closed form.
"""
from dataclasses import dataclass

import numpy as np

from prtebounds.baseline import level_moments
from prtebounds.measures import EmpiricalMeasure, SubDistribution
from prtebounds.roy import discrete_gap_data


@dataclass
class RandomPopulation:
    levels: np.ndarray
    probs: np.ndarray
    atoms: np.ndarray
    cell_laws: tuple  # (treated, untreated), each (n_cells, n_atoms)
    y_min: float
    y_max: float

    @property
    def cells(self):
        return np.concatenate([[0.0], self.levels, [1.0]])

    def sub(self, p, arm):
        """``P(Y in dy, W = arm | p(Z) = p)``."""
        mass = np.zeros(self.atoms.size)
        c = self.cells
        for i in range(c.size - 1):
            lo, hi = c[i], c[i + 1]
            if arm == 1:
                seg = max(0.0, min(hi, p) - lo)
            else:
                seg = max(0.0, hi - max(lo, p))
            mass += seg * self.cell_laws[1 - arm][i]
        return SubDistribution(self.atoms, mass)

    def conditional(self, p, arm):
        """Law of ``Y`` given ``W = arm`` and ``p(Z) = p``."""
        s = self.sub(p, arm)
        return EmpiricalMeasure(s.atoms, s.masses / s.total)

    def gap_data(self):
        t = [self.sub(p, 1) for p in self.levels]
        u = [self.sub(p, 0) for p in self.levels]
        return discrete_gap_data(self.levels, t, u)

    def moments(self):
        m1 = [self.conditional(p, 1).mean() for p in self.levels]
        m0 = [self.conditional(p, 0).mean() for p in self.levels]
        return level_moments(self.levels, self.probs, m1, m0)


def random_population(rng, k_min=1, k_max=4, n_atoms=4, y_range=(-1.0, 1.0)):
    K = int(rng.integers(k_min, k_max + 1))
    levels = np.sort(rng.choice(np.arange(1, 20) / 20, K, replace=False))
    probs = rng.dirichlet(np.ones(K))
    lo, hi = y_range
    atoms = np.unique(np.round(rng.uniform(lo, hi, n_atoms), 3))
    laws = tuple(rng.dirichlet(np.ones(atoms.size), K + 1) for _ in range(2))
    return RandomPopulation(levels, probs, atoms, laws, lo, hi)
