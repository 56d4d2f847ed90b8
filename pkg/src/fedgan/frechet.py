"""Frechet distance between sample sets and the cross-client FID matrix.

Samples are compared directly in data space (identity feature map), which is
the natural choice for low-dimensional points:

    FD(a, b) = |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput, TooFewSamples
from .numerics import trace_sqrt_product


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int


def fit_gaussian(samples) -> GaussianStats:
    """Column means and unbiased (m - 1) covariance, symmetrized."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput(f"samples must be a 2-D array, got shape {x.shape}")
    if len(x) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(x)}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    return GaussianStats(mean, 0.5 * (cov + cov.T), len(x))


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mean.shape != b.mean.shape:
        raise InvalidInput(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    cross = trace_sqrt_product(a.covariance, b.covariance)
    fd = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    return max(fd, 0.0)


def sample_fd(x, y) -> float:
    return frechet_distance(fit_gaussian(x), fit_gaussian(y))


def pairwise_fid(sample_sets: Sequence) -> np.ndarray:
    """Symmetric N x N matrix of Frechet distances with a zero diagonal."""
    if len(sample_sets) < 2:
        raise InvalidInput(f"need at least 2 sample sets, got {len(sample_sets)}")
    stats = []
    for i, s in enumerate(sample_sets):
        try:
            stats.append(fit_gaussian(s))
        except (TooFewSamples, InvalidInput) as exc:
            raise type(exc)(f"client {i}: {exc}") from exc
    n = len(stats)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = frechet_distance(stats[i], stats[j])
    return out


def client_total_fid(m) -> np.ndarray:
    """Per-client total: the off-diagonal row sum of the FID matrix."""
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    totals = np.zeros(n)
    for k in range(n):
        # sum_{i<k} FID_{i,k} + sum_{j>k} FID_{k,j}
        totals[k] = m[:k, k].sum() + m[k, k + 1:].sum()
    return totals
