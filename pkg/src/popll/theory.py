"""Synthetic worlds with exact posteriors, and margin-based diagnostics.

A shared-isotropic-covariance Gaussian mixture gives closed-form class
posteriors, so margins, Bayes predictions and empirical pure level sets can
be computed exactly on every sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import argmax_lowest, softmax


@dataclass(frozen=True)
class GaussianMixture:
    """Classes ``k`` with prior ``priors[k]`` and density N(means[k], scale^2 I)."""

    means: np.ndarray  # [c, q]
    scale: float
    priors: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "means", means)
        c = len(means)
        if c < 2:
            raise ValueError("a mixture needs at least two classes")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("covariance scale must be positive")
        priors = np.full(c, 1.0 / c) if self.priors is None else np.asarray(self.priors, float)
        if priors.shape != (c,) or (priors < 0).any() or not np.isclose(priors.sum(), 1.0):
            raise ValueError("priors must be a probability vector over the classes")
        object.__setattr__(self, "priors", priors)

    @property
    def n_classes(self) -> int:
        return len(self.means)

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        d2 = ((X[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            return np.log(self.priors)[None, :] - d2 / (2 * self.scale**2)

    def posterior(self, X: np.ndarray) -> np.ndarray:
        """Exact p(y | x) rows."""
        return softmax(self.log_joint(X))

    def bayes_predict(self, X: np.ndarray) -> np.ndarray:
        return argmax_lowest(self.log_joint(X))

    def sample(self, n: int, rng: np.random.Generator):
        y = rng.choice(self.n_classes, size=n, p=self.priors)
        X = self.means[y] + self.scale * rng.standard_normal((n, self.n_features))
        return X, y


PosteriorOracle = GaussianMixture


def make_synthetic(mixture: GaussianMixture, n: int, rng: np.random.Generator):
    """i.i.d. sample ``(X, y, oracle)``; the oracle is the mixture itself."""
    X, y = mixture.sample(n, rng)
    return X, y, mixture


def triangle_mixture(separation: float = 3.0, scale: float = 1.0, dim: int = 2) -> GaussianMixture:
    """Three classes at the vertices of an equilateral triangle with the given
    side length, padded with zero coordinates up to ``dim`` features."""
    angles = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    radius = separation / np.sqrt(3)
    means = np.zeros((3, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return GaussianMixture(means, scale)


def margin(posterior_row, true_label: int) -> float:
    """p(y|x) minus the largest posterior among the other labels."""
    p = np.asarray(posterior_row, dtype=np.float64)
    others = np.delete(p, true_label)
    return float(p[true_label] - others.max())


def margins(posteriors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.asarray(posteriors, dtype=np.float64)
    rows = np.arange(len(p))
    own = p[rows, labels]
    rest = p.copy()
    rest[rows, labels] = -np.inf
    return own - rest.max(axis=1)


def min_pure_boundary(predictions, posteriors, true_labels) -> float:
    """Smallest observed margin ``e`` with every example of margin >= e
    classified correctly (empirical pure level set).

    0 when nothing is misclassified, 1 when even the largest observed margin
    carries an error.
    """
    pred = np.asarray(predictions)
    y = np.asarray(true_labels)
    if pred.size == 0:
        raise ValueError("empty input")
    u = margins(posteriors, y)
    wrong = pred != y
    if not wrong.any():
        return 0.0
    worst = u[wrong].max()
    above = u[u > worst]
    return float(above.min()) if above.size else 1.0


def bayes_agreement(predictions, bayes_predictions) -> float:
    a = np.asarray(predictions)
    b = np.asarray(bayes_predictions)
    if a.size == 0:
        raise ValueError("empty input")
    if a.shape != b.shape:
        raise ValueError("prediction arrays are not aligned")
    return float(np.mean(a == b))


@dataclass(frozen=True)
class DensityEstimate:
    c_low: float
    c_high: float
    ratio: float
    degenerate: bool = False


def estimate_density_ratio(
    values: Sequence[float], bin_count: int, total: Optional[int] = None
) -> DensityEstimate:
    """Histogram density bounds of margins on [0, 1] over occupied bins.

    ``total`` is the normalising population size (defaults to the number of
    values); pass the full sample size when ``values`` holds only the
    non-negative margins of a larger sample.
    """
    u = np.asarray(values, dtype=np.float64)
    if bin_count < 2:
        raise ValueError("bin_count must be at least 2")
    if u.size == 0:
        raise ValueError("empty input")
    if (u < 0).any() or (u > 1).any():
        raise ValueError("margins must lie in [0, 1]")
    counts, _ = np.histogram(u, bins=bin_count, range=(0.0, 1.0))
    density = counts / ((total or u.size) / bin_count)
    occupied = density[counts > 0]
    if occupied.size < 2:
        d = float(occupied[0])
        return DensityEstimate(d, d, 1.0, degenerate=True)
    lo, hi = float(occupied.min()), float(occupied.max())
    return DensityEstimate(lo, hi, hi / lo)


@dataclass
class TheoryConstants:
    """Constants appearing in the guarantees, as configured or estimated."""

    alpha: Optional[float] = None
    t: Optional[float] = None
    epsilon: Optional[float] = None
    l: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha", "t", "epsilon", "l"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite")

    def minimal_initial_threshold(self) -> float:
        """Lower bound on e0 required for the Bayes-agreement guarantee."""
        if None in (self.alpha, self.t, self.epsilon):
            raise ValueError("alpha, t and epsilon are all required")
        return ((1 + self.t) * self.alpha + self.epsilon / 6) / (1 + self.alpha)
