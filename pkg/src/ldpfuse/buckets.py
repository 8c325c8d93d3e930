"""Bucket grids and discretized output-probability tables.

Estimation works on a uniform grid of buckets over the canonical input
domain.  For each mechanism with bounded output, the output range is
discretized too (a uniform grid for the piecewise and square-wave
mechanisms, the two-atom set for stochastic rounding), and a conditional
probability matrix ``probs[r, k] = P(output in bucket r | input at
midpoint k)`` is tabulated once and reused for every observation.

Laplace output is unbounded, so no fixed output grid exists.  Its
likelihood instead integrates the noise density over a window centred on
the observed value (:func:`laplace_bucket_prob`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .mechanisms import (
    DomainError,
    LaplaceMechanism,
    Mechanism,
    PiecewiseMechanism,
    SquareWaveMechanism,
    StochasticRounding,
)


class UnsupportedMechanismError(TypeError):
    """A mechanism cannot be used with the requested discretization."""


@dataclass(frozen=True)
class BucketGrid:
    """``count`` equal-width buckets covering the closed interval [lo, hi]."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty bucket range [{self.lo}, {self.hi}]")
        if self.count < 1:
            raise ValueError(f"bucket count must be positive, got {self.count}")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.count

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.linspace(self.lo, self.hi, self.count + 1)
        e.flags.writeable = False
        return e

    @cached_property
    def midpoints(self) -> np.ndarray:
        m = self.lo + (np.arange(self.count) + 0.5) * self.width
        m.flags.writeable = False
        return m

    def index(self, value: float) -> int:
        """Bucket index containing ``value``; the top edge maps to the last bucket."""
        return int(self.index_batch(np.asarray([value], dtype=float))[0])

    def index_batch(self, values) -> np.ndarray:
        """Bucket index for each value; raises DomainError for values outside the range."""
        values = np.asarray(values, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.lo), abs(self.hi))
        bad = (values < self.lo - tol) | (values > self.hi + tol) | ~np.isfinite(values)
        if np.any(bad):
            pos = int(np.flatnonzero(bad)[0])
            err = DomainError(
                f"value {values.flat[pos]!r} outside bucket range [{self.lo}, {self.hi}]"
            )
            err.position = pos
            raise err
        idx = np.floor((values - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.count - 1)

    def nearest_midpoint_index(self, value: float) -> int:
        """Index of the midpoint closest to ``value``; ties go to the lower index."""
        q = (value - self.lo) / self.width - 0.5
        idx = int(np.ceil(q - 0.5))
        return min(max(idx, 0), self.count - 1)


@dataclass(frozen=True)
class AtomBuckets:
    """Finite set of output atoms, one bucket per atom (ascending order)."""

    atoms: tuple[float, ...]

    def __post_init__(self):
        if len(self.atoms) < 2 or list(self.atoms) != sorted(self.atoms):
            raise ValueError("atoms must be at least two values in ascending order")

    @property
    def count(self) -> int:
        return len(self.atoms)

    def index_batch(self, values) -> np.ndarray:
        """Index of the atom matching each value, snapping within a small tolerance."""
        values = np.asarray(values, dtype=float)
        atoms = np.asarray(self.atoms)
        cuts = (atoms[1:] + atoms[:-1]) / 2.0
        idx = np.searchsorted(cuts, values)
        tol = 1e-9 * np.maximum(1.0, np.abs(atoms[idx]))
        bad = np.abs(values - atoms[idx]) > tol
        if np.any(bad):
            pos = int(np.flatnonzero(bad)[0])
            err = DomainError(f"value {values.flat[pos]!r} is not an output atom of {atoms}")
            err.position = pos
            raise err
        return idx


Buckets = Union[BucketGrid, AtomBuckets]


def build_output_grid(mech: Mechanism, resolution: int = 32) -> Buckets:
    """Output buckets for a bounded-output mechanism.

    Stochastic rounding gets one bucket per atom (``resolution`` is
    ignored); the piecewise and square-wave mechanisms get ``resolution``
    uniform buckets over their full output support.  Laplace has
    unbounded output and is rejected; use :func:`laplace_bucket_prob` or
    :class:`LaplaceLikelihood` for it instead.
    """
    if isinstance(mech, StochasticRounding):
        return AtomBuckets(tuple(mech.atoms))
    if isinstance(mech, (PiecewiseMechanism, SquareWaveMechanism)):
        lo, hi = mech.output_support
        return BucketGrid(lo, hi, resolution)
    raise UnsupportedMechanismError(
        f"{type(mech).__name__} output cannot be bucketed"
        " (unbounded support); use the truncated-window likelihood"
        " (laplace_bucket_prob / LaplaceLikelihood) instead"
    )


@dataclass(frozen=True, eq=False)
class ConditionalMatrix:
    """Table of ``P(output bucket r | input at midpoint k)`` for one mechanism.

    ``probs`` has shape ``(output buckets, input buckets)``; each column
    sums to 1.  ``likelihood_batch`` maps raw observed outputs to their
    bucket's row, giving the per-midpoint likelihood vector used by the
    posterior and EM estimators.
    """

    input_grid: BucketGrid
    output_buckets: Buckets
    probs: np.ndarray
    service_id: int | None = None

    def likelihood(self, observed: float) -> np.ndarray:
        return self.likelihood_batch(np.asarray([observed], dtype=float))[0]

    def likelihood_batch(self, observed) -> np.ndarray:
        idx = self.output_buckets.index_batch(observed)
        return self.probs[idx]


def _overlap(a_lo, a_hi, b_lo, b_hi):
    """Length of the intersection of [a_lo, a_hi] and [b_lo, b_hi] (broadcasting)."""
    return np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)


def conditional_matrix(
    mech: Mechanism,
    input_grid: BucketGrid,
    output_resolution: int = 32,
    method: str = "exact",
    service_id: int | None = None,
) -> ConditionalMatrix:
    """Tabulate output-bucket probabilities for each input-grid midpoint.

    ``method="exact"`` integrates the piecewise-constant densities in
    closed form (interval overlaps with the high-density band), so columns
    sum to 1 up to float error.  ``method="midpoint"`` approximates each
    bucket's mass as ``width * density(bucket midpoint)``; it is kept for
    compatibility with coarser implementations and is not exact near band
    edges.
    """
    if method not in ("exact", "midpoint"):
        raise ValueError(f"unknown integration method {method!r}")
    natives = np.asarray(mech.to_native(input_grid.midpoints), dtype=float)
    out = build_output_grid(mech, output_resolution)

    if isinstance(out, AtomBuckets):
        p = mech.prob_positive(natives)
        probs = np.vstack([1.0 - p, p])  # rows follow the ascending atoms (-a, +a)
        return ConditionalMatrix(input_grid, out, probs, service_id)

    if isinstance(mech, PiecewiseMechanism):
        band_lo, band_hi = mech.band(natives)
        high, low = mech.density_high, mech.density_low
    else:
        band_lo, band_hi = mech.band(natives)
        high, low = mech.density_in, mech.density_out

    edges = out.edges
    a = edges[:-1][:, None]  # (R, 1)
    b = edges[1:][:, None]
    if method == "exact":
        band = _overlap(a, b, band_lo[None, :], band_hi[None, :])
        probs = low * (b - a) + (high - low) * band
    else:
        mids = (edges[:-1] + edges[1:]) / 2.0
        in_band = (mids[:, None] >= band_lo[None, :]) & (mids[:, None] <= band_hi[None, :])
        probs = out.width * np.where(in_band, high, low)
    return ConditionalMatrix(input_grid, out, probs, service_id)


def _laplace_cdf(x, mu, scale):
    z = (x - mu) / scale
    return np.where(z < 0.0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))


def laplace_interval_mass(mech: LaplaceMechanism, lo, hi, mu) -> np.ndarray:
    """Mass the Laplace output density at input ``mu`` puts on [lo, hi]."""
    return _laplace_cdf(hi, mu, mech.scale) - _laplace_cdf(lo, mu, mech.scale)


def laplace_bucket_prob(
    mech: LaplaceMechanism,
    observed: float,
    input_grid: BucketGrid,
    tau_min: float | None = None,
) -> np.ndarray:
    """Normalized likelihood over input midpoints for one Laplace output.

    An unbounded output carries no bucket structure of its own, so the
    likelihood of midpoint ``mu_k`` is the noise mass on the window
    ``[observed - tau, observed + tau]`` with ``tau = sqrt(|observed|)``,
    floored at ``tau_min`` (default: one input-bucket width) so the window
    never collapses near zero.  The vector is normalized to sum to 1.
    """
    return LaplaceLikelihood(mech, input_grid, tau_min).likelihood(observed)


@dataclass(frozen=True)
class LaplaceLikelihood:
    """Truncated-window likelihood model for a Laplace service."""

    mechanism: LaplaceMechanism
    input_grid: BucketGrid
    tau_min: float | None = None
    service_id: int | None = None

    def __post_init__(self):
        if not isinstance(self.mechanism, LaplaceMechanism):
            raise UnsupportedMechanismError(
                f"LaplaceLikelihood requires a LaplaceMechanism, got {type(self.mechanism).__name__}"
            )

    @property
    def _tau_floor(self) -> float:
        return self.input_grid.width if self.tau_min is None else float(self.tau_min)

    def likelihood(self, observed: float) -> np.ndarray:
        return self.likelihood_batch(np.asarray([observed], dtype=float))[0]

    def likelihood_batch(self, observed) -> np.ndarray:
        observed = np.asarray(observed, dtype=float)
        tau = np.maximum(np.sqrt(np.abs(observed)), self._tau_floor)
        mu = np.asarray(self.mechanism.to_native(self.input_grid.midpoints), dtype=float)
        mass = laplace_interval_mass(
            self.mechanism,
            (observed - tau)[:, None],
            (observed + tau)[:, None],
            mu[None, :],
        )
        return mass / mass.sum(axis=1, keepdims=True)


LikelihoodModel = Union[ConditionalMatrix, LaplaceLikelihood]


def likelihood_models(
    mechanisms: Sequence[Mechanism],
    input_grid: BucketGrid,
    output_resolution: int = 32,
    method: str = "exact",
) -> list[LikelihoodModel]:
    """One likelihood model per service, aligned with ``mechanisms``.

    Bounded-output mechanisms get a :class:`ConditionalMatrix`; Laplace
    services get a :class:`LaplaceLikelihood`.
    """
    models: list[LikelihoodModel] = []
    for j, mech in enumerate(mechanisms):
        if isinstance(mech, LaplaceMechanism):
            models.append(LaplaceLikelihood(mech, input_grid, service_id=j))
        else:
            models.append(conditional_matrix(mech, input_grid, output_resolution, method, j))
    return models
