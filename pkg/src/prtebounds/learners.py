"""Small deterministic regression learners.

All learners share one interface: ``fit_learner(kind, X, y, weights)``
returns a predictor with ``predict(X)``. Features may have zero columns, in
which case every learner reduces to a (weighted) summary of the targets.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

KINDS = ("constant", "least_squares", "ridge", "logistic", "knn", "pinball_quantile")


def parse_kind(kind, **params):
    """Accept ``"ridge(0.5)"``, ``("ridge", 0.5)`` or ``"ridge"`` plus params."""
    if isinstance(kind, (tuple, list)):
        name, arg = kind[0], kind[1] if len(kind) > 1 else None
    else:
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*([^)]*)\s*\))?\s*", str(kind))
        if not m:
            raise ValidationError(f"cannot parse learner {kind!r}")
        name, arg = m.group(1), m.group(2)
    if name not in KINDS:
        raise ValidationError(f"unknown learner {name!r}")
    params = dict(params)
    if arg not in (None, ""):
        key = {"ridge": "lam", "knn": "k", "pinball_quantile": "tau"}.get(name)
        if key is None:
            raise ValidationError(f"learner {name!r} takes no argument")
        params[key] = float(arg) if key != "k" else int(float(arg))
    return name, params


def _design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


@dataclass
class Predictor:
    kind: str
    coef: np.ndarray | None = None
    value: float | None = None
    flags: dict = field(default_factory=dict)
    _tree: object = None
    _train_y: np.ndarray | None = None
    _train_w: np.ndarray | None = None
    _k: int = 0
    _link: str = "identity"

    def predict(self, X):
        X = _design(X)
        n = X.shape[0]
        if self.value is not None:
            return np.full(n, self.value)
        if self.kind == "knn":
            k = min(self._k, self._train_y.size)
            _, idx = self._tree.query(X, k=k)
            idx = idx.reshape(n, k)
            w = self._train_w[idx]
            return (w * self._train_y[idx]).sum(axis=1) / w.sum(axis=1)
        eta = self.coef[0] + X @ self.coef[1:]
        if self._link == "logit":
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    __call__ = predict


def weighted_lower_quantile(y, w, tau):
    """Smallest sample value whose cumulative weight reaches ``tau``."""
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], w[order]
    cum = np.cumsum(ws) / ws.sum()
    i = int(np.searchsorted(cum, tau - 1e-12, side="left"))
    return float(ys[min(i, ys.size - 1)])


def _weighted_lstsq(X, y, w, lam):
    A = np.column_stack([np.ones(X.shape[0]), X])
    sw = np.sqrt(w)
    Aw, yw = A * sw[:, None], y * sw
    gram = Aw.T @ Aw
    penalty = np.eye(A.shape[1]) * lam
    penalty[0, 0] = 0.0  # intercept is not penalized
    flags = {}
    if lam == 0.0:
        rank = np.linalg.matrix_rank(gram)
        if rank < A.shape[1]:
            flags["ridge_fallback"] = True
            penalty = np.eye(A.shape[1]) * 1e-8
            penalty[0, 0] = 0.0
    coef = np.linalg.solve(gram + penalty, Aw.T @ yw) if (lam > 0 or flags) else \
        np.linalg.lstsq(Aw, yw, rcond=None)[0]
    return coef, flags


def _logistic(X, y, w, max_iter=100, tol=1e-8, lam=1e-10):
    A = np.column_stack([np.ones(X.shape[0]), X])
    beta = np.zeros(A.shape[1])
    ybar = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    beta[0] = np.log(ybar / (1 - ybar))

    def loss(b):
        eta = A @ b
        return float(np.sum(w * (np.logaddexp(0, eta) - y * eta)) + 0.5 * lam * b @ b)

    flags = {"iterations": 0}
    for it in range(max_iter):
        mu = 1.0 / (1.0 + np.exp(-(A @ beta)))
        grad = A.T @ (w * (mu - y)) + lam * beta
        if np.linalg.norm(grad) < tol:
            break
        hess = (A * (w * mu * (1 - mu))[:, None]).T @ A + lam * np.eye(A.shape[1])
        step = np.linalg.solve(hess + 1e-12 * np.eye(A.shape[1]), grad)
        t, base = 1.0, loss(beta)
        while t > 1e-8 and loss(beta - t * step) > base - 1e-4 * t * grad @ step:
            t *= 0.5  # damping by backtracking
        beta = beta - t * step
        flags["iterations"] = it + 1
    return beta, flags


def _pinball_sgd(X, y, w, tau, iters=2000, seed=0):
    rng = np.random.default_rng(seed)
    A = np.column_stack([np.ones(X.shape[0]), X])
    scale = A[:, 1:].std(axis=0) if A.shape[1] > 1 else np.zeros(0)
    scale = np.where(scale > 0, scale, 1.0)
    center = A[:, 1:].mean(axis=0) if A.shape[1] > 1 else np.zeros(0)
    Z = np.column_stack([np.ones(A.shape[0]), (A[:, 1:] - center) / scale])
    beta = np.zeros(Z.shape[1])
    beta[0] = weighted_lower_quantile(y, w, tau)
    spread = float(np.std(y)) or 1.0
    wn = w / w.mean()
    batch = min(256, y.size)
    avg = beta.copy()
    for t in range(1, iters + 1):
        idx = rng.integers(0, y.size, batch)
        r = y[idx] - Z[idx] @ beta
        g = -(wn[idx] * np.where(r > 0, tau, tau - 1.0)) @ Z[idx] / batch
        beta = beta - spread * 0.5 / np.sqrt(t) * g
        avg += (beta - avg) / (t + 1)
    coef = np.concatenate([[avg[0] - np.sum(avg[1:] * center / scale)], avg[1:] / scale])
    return coef


def fit_learner(kind, features, targets, weights=None, **params) -> Predictor:
    """Fit a learner and return a deterministic predictor.

    Parameters
    ----------
    kind : str or tuple
        One of ``constant``, ``least_squares``, ``ridge(lam)``, ``logistic``,
        ``knn(k)``, ``pinball_quantile(tau)``.
    features : array_like, shape (n, d)
        ``d`` may be zero.
    targets : array_like, shape (n,)
    weights : array_like, optional
        Nonnegative observation weights.

    Returns
    -------
    Predictor
    """
    name, params = parse_kind(kind, **params)
    X = _design(features)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValidationError("features and targets have different row counts")
    if y.size == 0:
        raise ValidationError("cannot fit a learner on zero rows")
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != y.size or np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("weights must be nonnegative with positive total")
    no_features = X.shape[1] == 0
    if name == "pinball_quantile":
        tau = float(params.get("tau", 0.5))
        if not 0.0 <= tau <= 1.0:
            raise ValidationError("tau must lie in [0, 1]")
        if no_features:
            return Predictor(name, value=weighted_lower_quantile(y, w, tau))
        coef = _pinball_sgd(X, y, w, tau, seed=int(params.get("seed", 0)))
        return Predictor(name, coef=coef)
    if name == "constant" or no_features:
        return Predictor(name, value=float(np.sum(w * y) / np.sum(w)))
    if name == "least_squares":
        coef, flags = _weighted_lstsq(X, y, w, 0.0)
        return Predictor(name, coef=coef, flags=flags)
    if name == "ridge":
        coef, flags = _weighted_lstsq(X, y, w, float(params.get("lam", 1.0)))
        return Predictor(name, coef=coef, flags=flags)
    if name == "logistic":
        if np.any(y < 0) or np.any(y > 1):
            raise ValidationError("logistic targets must lie in [0, 1]")
        coef, flags = _logistic(X, y, w)
        return Predictor(name, coef=coef, flags=flags, _link="logit")
    if name == "knn":
        k = int(params.get("k", 25))
        keep = w > 0
        return Predictor(name, _tree=cKDTree(X[keep]), _train_y=y[keep],
                         _train_w=w[keep], _k=k)
    raise ValidationError(f"unknown learner {name!r}")  # pragma: no cover
