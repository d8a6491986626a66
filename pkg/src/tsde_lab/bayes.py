"""Discrete posterior over a finite parameter grid, kept in log space."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Theta = tuple[float, float]


class ZeroLikelihoodError(RuntimeError):
    """Every grid point assigns probability zero to an observed transition."""


def _normalize(log_w: np.ndarray) -> np.ndarray:
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ZeroLikelihoodError("all grid points have zero posterior mass")
    shifted = log_w - top
    return shifted - np.log(np.exp(shifted).sum())


@dataclass
class PosteriorGrid:
    thetas: tuple[Theta, ...]
    log_weights: np.ndarray
    loglik_sums: np.ndarray = field(default=None)

    def __post_init__(self):
        self.thetas = tuple(tuple(float(v) for v in th) for th in self.thetas)
        if not self.thetas:
            raise ValueError("empty parameter grid")
        if len(set(self.thetas)) != len(self.thetas):
            raise ValueError("grid points must be distinct")
        self.log_weights = _normalize(np.asarray(self.log_weights, dtype=float))
        if self.loglik_sums is None:
            self.loglik_sums = np.zeros(len(self.thetas))

    @classmethod
    def uniform(cls, thetas: Sequence[Theta]) -> "PosteriorGrid":
        return cls(tuple(thetas), np.zeros(len(thetas)))

    @classmethod
    def weighted(cls, thetas: Sequence[Theta], weights: Sequence[float]) -> "PosteriorGrid":
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(thetas),) or np.any(w <= 0):
            raise ValueError("prior weights must be positive, one per grid point")
        return cls(tuple(thetas), np.log(w))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def copy(self) -> "PosteriorGrid":
        return PosteriorGrid(self.thetas, self.log_weights.copy(), self.loglik_sums.copy())

    def index(self, theta: Theta) -> int:
        return self.thetas.index(tuple(float(v) for v in theta))

    def update_loglik(self, loglik: np.ndarray) -> None:
        """In-place Bayes step from a vector of per-parameter log-likelihoods."""
        candidate = self.log_weights + loglik
        if not np.isfinite(candidate).any():
            raise ZeroLikelihoodError("observed transition has zero likelihood under every grid point")
        self.log_weights = _normalize(candidate)
        self.loglik_sums = self.loglik_sums + loglik


def posterior_update(post: PosteriorGrid, x, a, y, kernel: Callable) -> PosteriorGrid:
    """Return the posterior after observing x --a--> y; ``kernel(x, a, y)`` gives log-likelihoods."""
    out = post.copy()
    out.update_loglik(np.asarray(kernel(x, a, y), dtype=float))
    return out


def sample_index(post: PosteriorGrid, rng: np.random.Generator) -> int:
    cdf = np.cumsum(post.weights)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def sample_theta(post: PosteriorGrid, rng: np.random.Generator) -> Theta:
    return post.thetas[sample_index(post, rng)]


def tv_to_truth(post: PosteriorGrid, theta_star: Theta) -> float:
    """Total variation to the point mass at the true parameter."""
    return float(1.0 - np.exp(post.log_weights[post.index(theta_star)]))


def penalized_map_index(post: PosteriorGrid, costs: np.ndarray, alpha: float, t: int) -> int:
    score = post.loglik_sums - alpha * np.asarray(costs, dtype=float) * np.log(t)
    return int(np.argmax(score))  # first maximiser, i.e. canonical order breaks ties


def penalized_map(post: PosteriorGrid, costs, alpha: float, t: int) -> Theta:
    """Likelihood maximiser biased towards parameters with small optimal cost."""
    return post.thetas[penalized_map_index(post, costs, alpha, t)]
