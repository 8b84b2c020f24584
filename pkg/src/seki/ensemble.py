"""Particle ensembles and their empirical statistics.

All Kalman-type updates in this package are driven by the quantities
computed here: the ensemble mean, the centered deviations, the sample
covariance C = (1/J) * E^T E (divisor J, not J-1), and the cross-covariance
between states and forward-map outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Ensemble:
    """J particles in R^d, stored as a (J, d) array.

    J >= 2 is required: a single particle has zero covariance and the
    preconditioned dynamics degenerate.
    """

    def __init__(self, particles):
        particles = np.asarray(particles, dtype=float)
        if particles.ndim != 2:
            raise ValueError(
                f"particles must be a (J, d) array, got shape {particles.shape}"
            )
        if particles.shape[0] < 2:
            raise ValueError(f"need at least 2 particles, got {particles.shape[0]}")
        self.particles = particles

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def d(self) -> int:
        return self.particles.shape[1]

    def shifted(self, offset) -> "Ensemble":
        """New ensemble with `offset` added to every particle."""
        return Ensemble(self.particles + np.asarray(offset, dtype=float))

    def copy(self) -> "Ensemble":
        return Ensemble(self.particles.copy())


@dataclass
class EnsembleStats:
    mean: np.ndarray          # (d,)
    deviations: np.ndarray    # (J, d), rows sum to ~0
    covariance: np.ndarray    # (d, d), symmetrized PSD
    spread: float             # (1/J) sum_j ||e_j||^2 == trace(covariance)


@dataclass
class CrossCovariance:
    matrix: np.ndarray        # (d, m)
    forward_mean: np.ndarray  # (m,)


def compute_stats(ens: Ensemble) -> EnsembleStats:
    """Mean, deviations, sample covariance (divisor J) and spread."""
    x = ens.particles
    mean = x.mean(axis=0)
    dev = x - mean
    cov = dev.T @ dev / ens.J
    cov = 0.5 * (cov + cov.T)
    spread = float(np.sum(dev * dev) / ens.J)
    return EnsembleStats(mean=mean, deviations=dev, covariance=cov, spread=spread)


def cross_covariance(ens: Ensemble, forward_outputs) -> CrossCovariance:
    """Empirical cross-covariance (1/J) sum_j e_j (G(x_j) - Gbar)^T.

    `forward_outputs` must hold one output row per particle. For a linear
    map G(x) = B x the result equals C @ B.T up to roundoff.
    """
    g = np.asarray(forward_outputs, dtype=float)
    if g.ndim != 2 or g.shape[0] != ens.J:
        raise ValueError(
            f"forward_outputs must be (J, m) with J={ens.J}, got shape {g.shape}"
        )
    g_mean = g.mean(axis=0)
    dev = ens.particles - ens.particles.mean(axis=0)
    matrix = dev.T @ (g - g_mean) / ens.J
    return CrossCovariance(matrix=matrix, forward_mean=g_mean)


def gaussian_ensemble(J: int, d: int, rng: np.random.Generator, scale: float = 0.1,
                      mean=None) -> Ensemble:
    """i.i.d. particles ~ N(mean, scale^2 I); the standard initialization."""
    x = rng.normal(size=(J, d)) * scale
    if mean is not None:
        x = x + np.asarray(mean, dtype=float)
    return Ensemble(x)
