"""KLIEP density-ratio estimation for change-point scoring.

The ratio ``r(x) = p_test(x) / p_ref(x)`` is modelled as a non-negative
mixture of Gaussian kernels centred on test points.  The weights maximize
the mean log-ratio over the test window subject to ``mean_ref r = 1``.
Each ascent step moves along ``alpha * (g / b - 1)`` where ``g`` is the
gradient of the objective and ``b`` the reference kernel means; the
direction keeps the constraint exactly, and a unit step is the EM update
for mixture weights, so ascent is monotone.  Longer steps are tried first
and halved when they fail to improve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, DomainError
from .windows import WindowPair, as_matrix

_TINY = 1e-300


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d, 0.0)


def gaussian_kernel(x: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-_sqdist(x, centers) / (2.0 * sigma * sigma))


@dataclass
class RatioModel:
    centers: np.ndarray
    alphas: np.ndarray
    sigma: float
    normalizer: float
    objective: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0

    def ratio(self, x) -> np.ndarray:
        return gaussian_kernel(as_matrix(x), self.centers, self.sigma) @ self.alphas

    def log_ratio(self, x) -> np.ndarray:
        return np.log(np.maximum(self.ratio(x), _TINY))


def _ascend(k_test: np.ndarray, b: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, list[float], int]:
    n = k_test.shape[0]
    alpha = np.full(b.size, 1.0 / b.sum())
    obj = float(np.mean(np.log(np.maximum(k_test @ alpha, _TINY))))
    history = [obj]
    eta = 1.0
    for it in range(1, max_iter + 1):
        fitted = np.maximum(k_test @ alpha, _TINY)
        g = k_test.T @ (1.0 / fitted) / n
        direction = alpha * (g / b - 1.0)
        while True:
            cand = np.maximum(alpha + eta * direction, 0.0)
            cand /= b @ cand
            new = float(np.mean(np.log(np.maximum(k_test @ cand, _TINY))))
            if new >= obj:
                break
            eta /= 2.0
            if eta < 1e-12:
                return alpha, history, it
        gain = new - obj
        alpha, obj = cand, new
        history.append(obj)
        if gain <= tol * (1.0 + abs(obj)):
            return alpha, history, it
        eta = min(eta * 1.5, 8.0)
    raise ConvergenceError(f"KLIEP did not converge in {max_iter} iterations", objective=obj)


def _fit_fixed(reference: np.ndarray, test: np.ndarray, centers: np.ndarray, sigma: float,
               max_iter: int, tol: float) -> RatioModel:
    b = gaussian_kernel(reference, centers, sigma).mean(axis=0)
    b = np.maximum(b, 1e-12 * max(float(b.max()), _TINY))
    k_test = gaussian_kernel(test, centers, sigma)
    alpha, history, iters = _ascend(k_test, b, max_iter, tol)
    normalizer = float(gaussian_kernel(reference, centers, sigma).mean(axis=0) @ alpha)
    return RatioModel(centers, alpha, sigma, normalizer, history[-1], history, iters)


def default_sigma_grid(reference: np.ndarray, test: np.ndarray, rng: np.random.Generator) -> list[float]:
    pool = np.vstack([reference, test])
    idx = rng.choice(len(pool), size=min(200, len(pool)), replace=False)
    sub = pool[idx]
    d = np.sqrt(_sqdist(sub, sub))
    med = float(np.median(d[np.triu_indices(len(sub), 1)])) or 1.0
    return [med * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)]


def kliep_fit(
    pair: WindowPair,
    n_centers: int = 100,
    sigma_grid: list[float] | None = None,
    folds: int = 5,
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> RatioModel:
    """Fit the ratio model, choosing sigma by likelihood cross-validation on test folds.

    Among sigmas whose held-out mean log-ratio is within one standard error
    of the best, the widest is kept.
    """
    ref, test = pair.reference, pair.test
    if len(ref) < n_centers or len(test) < n_centers:
        raise DomainError("both windows need at least n_centers points")
    rng = np.random.default_rng(seed)
    grid = list(sigma_grid) if sigma_grid else default_sigma_grid(ref, test, rng)
    if any(s <= 0 for s in grid):
        raise DomainError("sigmas must be positive")
    if len(grid) == 1:
        sigma = grid[0]
    else:
        order = rng.permutation(len(test))
        parts = np.array_split(order, max(2, folds))
        scores = []
        for s in grid:
            held = []
            for k, part in enumerate(parts):
                train_idx = np.concatenate([p for j, p in enumerate(parts) if j != k])
                n_c = min(n_centers, len(train_idx))
                centers = test[rng.choice(train_idx, size=n_c, replace=False)]
                try:
                    model = _fit_fixed(ref, test[train_idx], centers, s, max_iter, tol)
                except ConvergenceError:
                    held.append(-math.inf)
                    continue
                held.append(float(np.mean(model.log_ratio(test[part]))))
            if all(math.isfinite(h) for h in held):
                scores.append((float(np.mean(held)), float(np.std(held)) / math.sqrt(len(held))))
            else:
                scores.append((-math.inf, 0.0))
        sigma = _one_se_choice(grid, scores)
    centers = test[rng.choice(len(test), size=min(n_centers, len(test)), replace=False)]
    return _fit_fixed(ref, test, centers, sigma, max_iter, tol)


def _one_se_choice(grid: list[float], scores: list[tuple[float, float]]) -> float:
    # widest kernel whose held-out score is within one standard error of the best
    best = int(np.argmax([m for m, _ in scores]))
    if not math.isfinite(scores[best][0]):
        raise ConvergenceError("no sigma in the grid converged", objective=-math.inf)
    floor = scores[best][0] - scores[best][1]
    eligible = [s for s, (m, _) in zip(grid, scores) if m >= floor]
    return max(eligible)


def change_score(model: RatioModel, test) -> float:
    """Mean log-ratio over a test sample; larger means stronger change evidence."""
    x = as_matrix(test)
    if len(x) == 0:
        raise DomainError("test sample is empty")
    return float(np.mean(model.log_ratio(x)))


def permutation_null(pair: WindowPair, draws: int, seed: int = 0, **fit_kwargs) -> np.ndarray:
    """Change scores after randomly re-splitting the pooled windows.

    Pass ``sigma_grid=[sigma]`` to reuse the observed kernel width; otherwise
    every draw repeats the cross-validated search.
    """
    rng = np.random.default_rng(seed)
    pool = np.vstack([pair.reference, pair.test])
    n_ref = len(pair.reference)
    out = np.empty(draws)
    for i in range(draws):
        perm = rng.permutation(len(pool))
        null_pair = WindowPair(pool[perm[:n_ref]], pool[perm[n_ref:]])
        try:
            model = kliep_fit(null_pair, seed=int(rng.integers(2**31)), **fit_kwargs)
            out[i] = change_score(model, null_pair.test)
        except ConvergenceError as exc:
            # the objective is the mean test log-ratio, so the last value is a usable score
            out[i] = exc.objective
    return out
