"""Logistic-regression baseline: one linear index per subject, thresholded.

Used to contrast a single global index with the cluster-level view: the fitted
index ``X beta`` is clustered in one dimension and the label entropy of each
cluster shows how heterogeneous the index is.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dcg import build_ultrametric_tree, composition_at, l1_distances
from .entropy import entropy_from_counts
from .errors import FitError, Separation, SingularHessian

SEPARATION_NORM = 1e6


@dataclass(frozen=True)
class LogisticFit:
    beta: np.ndarray  # intercept first
    converged: bool
    iterations: int
    log_likelihood: float

    def index(self, x) -> np.ndarray:
        return _design(x) @ self.beta

    def predict_proba(self, x) -> np.ndarray:
        return _sigmoid(self.index(x))


def _design(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return np.column_stack([np.ones(a.shape[0]), a])


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def log_likelihood(beta, x, y) -> float:
    eta = _design(x) @ beta
    # log(1 + e^eta) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def gradient(beta, x, y) -> np.ndarray:
    d = _design(x)
    return d.T @ (y - _sigmoid(d @ beta))


def logistic_mle(x, y, tol: float = 1e-8, max_iter: int = 100) -> LogisticFit:
    """Maximum-likelihood logistic regression by Newton-Raphson with step halving.

    Raises
    ------
    Separation
        Coefficients diverge (norm above 1e6), which happens when a linear
        index separates the classes.
    SingularHessian
        The information matrix cannot be inverted (e.g. collinear columns).
    """
    d = _design(x)
    y = np.asarray(y, dtype=float)
    n, p = d.shape
    if y.shape != (n,):
        raise FitError("y must be a vector with one entry per row of x")
    if n <= p:
        raise FitError(f"need more subjects ({n}) than coefficients ({p})")
    if not np.all((y == 0) | (y == 1)):
        raise FitError("y must be coded 0/1")
    if y.min() == y.max():
        raise FitError("y must contain both classes")

    beta = np.zeros(p)
    ll = log_likelihood(beta, x, y)
    for it in range(1, max_iter + 1):
        mu = _sigmoid(d @ beta)
        grad = d.T @ (y - mu)
        if np.max(np.abs(grad)) < tol:
            _check_separation(d @ beta, y)
            return LogisticFit(beta, True, it - 1, ll)
        w = mu * (1.0 - mu)
        info = d.T @ (d * w[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularHessian("information matrix is singular") from None
        if not np.all(np.isfinite(step)) or np.linalg.cond(info) > 1e14:
            if np.linalg.norm(beta) > 1e3:
                raise Separation("coefficients diverge; the classes are (quasi-)separated")
            raise SingularHessian("information matrix is numerically singular")
        t = 1.0
        while True:
            cand = beta + t * step
            cand_ll = log_likelihood(cand, x, y)
            if cand_ll >= ll - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, cand_ll
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise Separation("coefficients diverge; the classes are (quasi-)separated")
    _check_separation(d @ beta, y)
    grad = gradient(beta, x, y)
    return LogisticFit(beta, bool(np.max(np.abs(grad)) < tol), max_iter, ll)


def _check_separation(eta, y) -> None:
    # a finite MLE exists only if no linear index splits the two classes
    if eta[y == 1].min() > eta[y == 0].max():
        raise Separation("the fitted index separates the classes; the MLE does not exist")


def logistic_error_rate(fit: LogisticFit, x, y, threshold: float = 0.5) -> float:
    """Fraction of subjects where ``P(y=1) >= threshold`` disagrees with ``y``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    pred = fit.predict_proba(x) >= threshold
    return float(np.mean(pred != (np.asarray(y) == 1)))


def index_heterogeneity(fit: LogisticFit, x, y, k: int, log_base: str = "natural") -> dict:
    """Cluster the fitted index in 1-D and report each cluster's label entropy.

    Clusters are listed from low to high index.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    idx = fit.index(x)
    y = np.asarray(y)
    tree = build_ultrametric_tree(l1_distances(idx), scale_count=None)
    comp = composition_at(tree, k)
    groups = [np.asarray(c) for c in comp.clusters()]
    groups.sort(key=lambda g: float(idx[g].mean()))
    labels = np.unique(y)
    out = []
    for g in groups:
        counts = np.array([np.sum(y[g] == lab) for lab in labels])
        out.append({
            "size": int(g.size),
            "index_range": (float(idx[g].min()), float(idx[g].max())),
            "label_counts": {str(lab): int(c) for lab, c in zip(labels, counts)},
            "entropy": entropy_from_counts(counts, log_base),
        })
    return {"k": comp.k, "clusters": out}
