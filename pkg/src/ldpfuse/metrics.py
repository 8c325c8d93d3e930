"""Accuracy metrics for repeated-trial estimates and histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: smallest probability used in divergence logs, to keep them finite
PROB_FLOOR = 1e-12


@dataclass
class TrialSeries:
    """Point estimates from repeated trials against one true value."""

    estimates: list[float]
    truth: float


def mse(series: TrialSeries) -> float:
    """Mean squared error of the estimates against the true value."""
    est = np.asarray(series.estimates, dtype=float)
    if est.size == 0:
        raise ValueError("cannot compute MSE of an empty series")
    return float(np.mean((est - series.truth) ** 2))


def _check_distribution(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d probability vector")
    if np.any(p < 0.0) or not np.isfinite(p).all():
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, with q floored at PROB_FLOOR so the result is finite.

    Zero entries of p contribute nothing (0 * log 0 == 0 by convention).
    """
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, PROB_FLOOR)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p, q) -> float:
    """Jensen-Shannon distance: sqrt of the JS divergence in nats.

    Symmetric, and bounded above by sqrt(log 2) (reached by distributions
    with disjoint support).
    """
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    m = (p + q) / 2.0
    inner = kl_divergence(p, m) / 2.0 + kl_divergence(q, m) / 2.0
    # float error can push the sum a hair below zero when p == q
    return float(np.sqrt(max(inner, 0.0)))
