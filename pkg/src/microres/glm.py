"""Multinomial / binomial logit maximum likelihood.

The parametrisation uses a reference class with implicit zero coefficients,
so class probabilities are ``exp(eta_k) / (1 + sum_e exp(eta_e))``.  Classes
that never occur in the training data are excluded from the fit and always
receive probability zero.

Fitting is damped Newton with step halving on the penalised log-likelihood;
identical design rows are collapsed to frequency-weighted counts first, which
makes fits on categorical (one-hot) designs fast and independent of row order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

SEPARATION_THRESHOLD = 15.0


class DegenerateResponseError(ValueError):
    """Raised when fewer than two classes are present; use a constant model."""


@dataclass
class DesignMatrix:
    """Encoded predictors plus integer class labels.

    ``X`` must contain the intercept as its first column.
    """

    X: np.ndarray
    y: np.ndarray
    class_names: list[str]
    column_names: list[str] | None = None
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=int)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if self.column_names is None:
            self.column_names = ["(intercept)"] + [f"x{i}" for i in range(1, self.X.shape[1])]
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        w = np.ones(len(self.y)) if self.weights is None else self.weights
        return np.bincount(self.y, weights=w, minlength=self.n_classes)


@dataclass
class MultinomialFit:
    """Fitted reference-category multinomial logit.

    ``coefficients`` has one row per non-reference *active* class, in the
    order of ``active`` (excluding ``reference``).
    """

    class_names: list[str]
    column_names: list[str]
    active: list[int]
    reference: int
    coefficients: np.ndarray
    log_likelihood: float
    iterations: int = 0
    gradient_norm: float = 0.0
    converged: bool = True
    flags: list[str] = field(default_factory=list)
    loglik_path: list[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def linear_predictors(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.coefficients.T

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class probabilities, shape ``(n, K)``; inactive classes are 0."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = self.linear_predictors(X)
        probs_active = _softmax_with_reference(eta)
        out = np.zeros((X.shape[0], self.n_classes))
        others = [k for k in self.active if k != self.reference]
        out[:, self.reference] = probs_active[:, 0]
        if others:
            out[:, others] = probs_active[:, 1:]
        return out

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "column_names": list(self.column_names),
            "active": [int(k) for k in self.active],
            "reference": int(self.reference),
            "coefficients": self.coefficients.tolist(),
            "log_likelihood": float(self.log_likelihood),
            "convergence": {
                "iterations": int(self.iterations),
                "gradient_norm": float(self.gradient_norm),
                "converged": bool(self.converged),
            },
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultinomialFit":
        conv = data.get("convergence", {})
        coef = np.asarray(data["coefficients"], dtype=float)
        if coef.size == 0:
            coef = coef.reshape(len(data["active"]) - 1, len(data["column_names"]))
        return cls(
            class_names=list(data["class_names"]),
            column_names=list(data["column_names"]),
            active=[int(k) for k in data["active"]],
            reference=int(data["reference"]),
            coefficients=coef,
            log_likelihood=float(data["log_likelihood"]),
            iterations=int(conv.get("iterations", 0)),
            gradient_norm=float(conv.get("gradient_norm", 0.0)),
            converged=bool(conv.get("converged", True)),
            flags=list(data.get("flags", [])),
        )


def _softmax_with_reference(eta: np.ndarray) -> np.ndarray:
    """Probabilities for [reference, classes...] given non-reference predictors."""
    full = np.concatenate([np.zeros((eta.shape[0], 1)), eta], axis=1)
    full -= full.max(axis=1, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=1, keepdims=True)
    return full


def predict_probs(fit: MultinomialFit, x: np.ndarray) -> np.ndarray:
    """Probability vector(s) of length K for encoded covariates ``x``."""
    x = np.asarray(x, dtype=float)
    probs = fit.predict(np.atleast_2d(x))
    return probs[0] if x.ndim == 1 else probs


def _collapse(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None, n_classes: int):
    """Unique design rows with per-class frequency counts (sorted, deterministic)."""
    X = np.ascontiguousarray(X, dtype=float) + 0.0  # folds -0.0 into 0.0
    # rows as opaque byte strings: exact and much faster than unique(axis=0)
    rows = X.view(np.dtype((np.void, X.dtype.itemsize * X.shape[1]))).ravel()
    _, first, inverse = np.unique(rows, return_index=True, return_inverse=True)
    uniq = X[first]
    inverse = inverse.reshape(-1)
    counts = np.zeros((uniq.shape[0], n_classes))
    w = np.ones(len(y)) if weights is None else weights
    np.add.at(counts, (inverse, y), w)
    return uniq, counts


class _Objective:
    """Penalised multinomial log-likelihood on collapsed data."""

    def __init__(self, X: np.ndarray, Y: np.ndarray, ridge: float):
        self.X = X
        self.Y = Y  # columns: [reference, others...]
        self.N = Y.sum(axis=1)
        self.ridge = ridge
        self.km1 = Y.shape[1] - 1
        self.p = X.shape[1]
        pen = np.ones(self.p)
        pen[0] = 0.0  # intercept unpenalised
        self.penalty_mask = np.tile(pen, self.km1)

    def probs(self, beta: np.ndarray) -> np.ndarray:
        B = beta.reshape(self.km1, self.p)
        return _softmax_with_reference(self.X @ B.T)

    def loglik(self, beta: np.ndarray) -> float:
        P = self.probs(beta)
        with np.errstate(divide="ignore"):
            logp = np.log(P)
        mask = self.Y > 0
        return float(np.sum(self.Y[mask] * logp[mask]))

    def penalised(self, beta: np.ndarray) -> float:
        return self.loglik(beta) - 0.5 * self.ridge * float(np.sum(self.penalty_mask * beta**2))

    def gradient(self, beta: np.ndarray, P: np.ndarray | None = None) -> np.ndarray:
        if P is None:
            P = self.probs(beta)
        R = self.Y[:, 1:] - self.N[:, None] * P[:, 1:]
        g = (R.T @ self.X).reshape(-1)
        return g - self.ridge * self.penalty_mask * beta

    def hessian(self, P: np.ndarray) -> np.ndarray:
        """Negative Hessian (positive semi-definite)."""
        km1, p = self.km1, self.p
        H = np.empty((km1 * p, km1 * p))
        Pn = P[:, 1:]
        for a in range(km1):
            for b in range(a, km1):
                w = -self.N * Pn[:, a] * Pn[:, b]
                if a == b:
                    w = w + self.N * Pn[:, a]
                block = (self.X * w[:, None]).T @ self.X
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
                if a != b:
                    H[b * p:(b + 1) * p, a * p:(a + 1) * p] = block.T
        H[np.diag_indices_from(H)] += self.ridge * self.penalty_mask
        return H


def fit_multinomial(
    design: DesignMatrix,
    max_iter: int = 200,
    tol: float = 1e-8,
    ridge: float = 1e-8,
    reference: int | str | None = None,
) -> MultinomialFit:
    """Maximum-likelihood multinomial logit fit.

    ``tol`` applies to the infinity norm of the gradient divided by the total
    number of observations.  ``reference`` names the reference class; if it is
    absent from the data the first present class is used.
    """
    K = design.n_classes
    counts = design.class_counts()
    present = [k for k in range(K) if counts[k] > 0]
    if len(present) < 2:
        raise DegenerateResponseError(
            f"only {len(present)} class(es) present; use a constant model instead"
        )
    if isinstance(reference, str):
        reference = design.class_names.index(reference)
    ref = reference if reference is not None and reference in present else present[0]
    order = [ref] + [k for k in present if k != ref]

    Xu, C = _collapse(design.X, design.y, design.weights, K)
    Y = C[:, order]
    keep = Y.sum(axis=1) > 0
    Xu, Y = Xu[keep], Y[keep]
    obj = _Objective(Xu, Y, ridge)
    n_total = float(Y.sum())

    beta = np.zeros(obj.km1 * obj.p)
    # intercept start at the empirical log-odds
    freq = Y.sum(axis=0) / n_total
    beta.reshape(obj.km1, obj.p)[:, 0] = np.log(freq[1:]) - np.log(freq[0])

    value = obj.penalised(beta)
    path = [value]
    converged = False
    flags: list[str] = []
    it = 0
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        P = obj.probs(beta)
        g = obj.gradient(beta, P)
        gnorm = float(np.max(np.abs(g))) / n_total
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        H = obj.hessian(P)
        step = _newton_direction(H, g)
        if step is None:
            step = g / max(1.0, float(np.max(np.abs(g))))
            if "gradient_fallback" not in flags:
                flags.append("gradient_fallback")
        t = 1.0
        improved = False
        while t > 1e-10:
            cand = beta + t * step
            cand_value = obj.penalised(cand)
            if cand_value >= value:
                improved = True
                break
            t *= 0.5
        if not improved:
            # no ascent possible at machine precision
            converged = gnorm <= max(tol, 1e-6)
            break
        beta, value = cand, cand_value
        path.append(value)
    else:
        P = obj.probs(beta)
        gnorm = float(np.max(np.abs(obj.gradient(beta, P)))) / n_total
        converged = gnorm <= tol

    B = beta.reshape(obj.km1, obj.p)
    if np.max(np.abs(B[:, 1:]), initial=0.0) > SEPARATION_THRESHOLD or np.max(np.abs(B), initial=0.0) > 2 * SEPARATION_THRESHOLD:
        flags.append("separation")
    if not converged:
        flags.append("not_converged")
        log.warning("multinomial fit did not converge (gradient %.3g after %d iterations)", gnorm, it)
    return MultinomialFit(
        class_names=list(design.class_names),
        column_names=list(design.column_names),
        active=order,
        reference=ref,
        coefficients=B.copy(),
        log_likelihood=obj.loglik(beta),
        iterations=it,
        gradient_norm=gnorm,
        converged=converged,
        flags=flags,
        loglik_path=path,
    )


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray | None:
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        try:
            L = np.linalg.cholesky(H + jitter * np.eye(H.shape[0]))
        except np.linalg.LinAlgError:
            return None
    d = np.diag(L)
    if d.min() <= 0 or (d.max() / d.min()) ** 2 > 1e14:
        return None
    z = np.linalg.solve(L, g)
    return np.linalg.solve(L.T, z)


def fit_binomial(
    X: np.ndarray,
    success: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-8,
    ridge: float = 1e-8,
    class_names: Sequence[str] = ("failure", "success"),
    weights: np.ndarray | None = None,
) -> MultinomialFit:
    """Logistic regression as the two-class case; ``failure`` is the reference."""
    design = DesignMatrix(X, np.asarray(success, dtype=int), list(class_names), weights=weights)
    return fit_multinomial(design, max_iter=max_iter, tol=tol, ridge=ridge, reference=0)


def log_likelihood(design: DesignMatrix, coefficients: np.ndarray, reference: int = 0) -> float:
    """Unpenalised log-likelihood over all ``K`` classes at ``coefficients``.

    ``coefficients`` has shape ``(K-1, p)``; rows follow class order with the
    reference removed.
    """
    K = design.n_classes
    others = [k for k in range(K) if k != reference]
    P = _softmax_with_reference(design.X @ np.asarray(coefficients).reshape(K - 1, -1).T)
    w = np.ones(len(design.y)) if design.weights is None else design.weights
    col = np.empty(len(design.y), dtype=int)
    pos = {reference: 0, **{k: i + 1 for i, k in enumerate(others)}}
    for k, j in pos.items():
        col[design.y == k] = j
    return float(np.sum(w * np.log(P[np.arange(len(col)), col])))


def analytic_gradient(design: DesignMatrix, coefficients: np.ndarray, reference: int = 0) -> np.ndarray:
    """Gradient of :func:`log_likelihood`, flattened in coefficient order."""
    K = design.n_classes
    others = [k for k in range(K) if k != reference]
    B = np.asarray(coefficients, dtype=float).reshape(K - 1, -1)
    P = _softmax_with_reference(design.X @ B.T)[:, 1:]
    w = np.ones(len(design.y)) if design.weights is None else design.weights
    Ind = np.stack([(design.y == k).astype(float) for k in others], axis=1)
    return (((Ind - P) * w[:, None]).T @ design.X).reshape(-1)


def check_gradient(design: DesignMatrix, coefficients: np.ndarray, h: float = 1e-5, reference: int = 0) -> float:
    """Max |analytic - central finite difference| of the log-likelihood gradient."""
    beta = np.asarray(coefficients, dtype=float).reshape(-1)
    if not np.all(np.isfinite(beta)):
        raise ValueError("coefficients must be finite")
    shape = np.asarray(coefficients).shape
    g = analytic_gradient(design, beta.reshape(shape), reference)
    fd = np.empty_like(beta)
    for i in range(beta.size):
        up = beta.copy()
        dn = beta.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (log_likelihood(design, up.reshape(shape), reference)
                 - log_likelihood(design, dn.reshape(shape), reference)) / (2 * h)
    return float(np.max(np.abs(g - fd)))


def constant_fit(class_names: Sequence[str], present: int, column_names: Sequence[str] | None = None) -> MultinomialFit:
    """Degenerate model putting all mass on one class (for single-class data)."""
    columns = list(column_names or ["(intercept)"])
    return MultinomialFit(
        class_names=list(class_names),
        column_names=columns,
        active=[int(present)],
        reference=int(present),
        coefficients=np.zeros((0, len(columns))),
        log_likelihood=0.0,
        flags=["constant"],
    )
