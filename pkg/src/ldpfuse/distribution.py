"""Histogram estimation over multi-service perturbed collections.

Users are grouped by their joint vector of output buckets, one bucket per
service they report to; at realistic sizes the number of distinct vectors
is far below the number of users, which is what makes the maximum-
likelihood iteration affordable.  :func:`em_estimate` then fits bucket
probabilities for the value histogram by EM: the kernel probability of a
group is the product over its services of the per-service conditional
matrix entries, and the familiar multiplicative update follows from the
mixture form of the likelihood.

Mechanisms with unbounded output (Laplace) have no output buckets and
cannot join this estimator; requesting one raises
:class:`~ldpfuse.buckets.UnsupportedMechanismError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .buckets import (
    BucketGrid,
    Buckets,
    ConditionalMatrix,
    LaplaceLikelihood,
    UnsupportedMechanismError,
    build_output_grid,
    conditional_matrix,
)
from .data import Collection, Observations, as_collection
from .mechanisms import LaplaceMechanism, Mechanism

#: an L decrease beyond this is a bug, not float noise
MONOTONE_TOL = 1e-9

#: largest packed bucket-vector code handled by integer packing
_PACK_LIMIT = 2**62


class ImpossibleObservationError(ValueError):
    """A grouped observation has zero probability under every histogram."""


class EmDivergedError(RuntimeError):
    """The EM objective decreased, which the update rule never allows."""


@dataclass(frozen=True)
class EmConfig:
    """Stopping and flooring controls for the EM iteration."""

    threshold: float = 1e-4
    max_iterations: int = 10000
    floor: float = 1e-12

    def __post_init__(self):
        if self.threshold <= 0.0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.floor < 0.0:
            raise ValueError("floor cannot be negative")


@dataclass
class GroupStratum:
    """Distinct output-bucket vectors and their counts for one service subset."""

    service_ids: tuple[int, ...]
    vectors: np.ndarray  # (groups, services) bucket indices
    counts: np.ndarray  # (groups,)

    @property
    def n_groups(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_users(self) -> int:
        return int(self.counts.sum())


@dataclass
class GroupedCounts:
    """Grouped observations across all service subsets."""

    strata: list[GroupStratum]

    @property
    def n_groups(self) -> int:
        return sum(s.n_groups for s in self.strata)

    @property
    def n_users(self) -> int:
        return sum(s.n_users for s in self.strata)

    def as_dict(self) -> dict[tuple[tuple[int, ...], tuple[int, ...]], int]:
        """{(service subset, bucket vector): count}, for small-scale checks."""
        out = {}
        for s in self.strata:
            for row, count in zip(s.vectors, s.counts):
                out[(s.service_ids, tuple(int(i) for i in row))] = int(count)
        return out


def group_users(
    observations: Observations,
    output_buckets: Mapping[int, Buckets],
    n_services: int | None = None,
) -> GroupedCounts:
    """Collapse users into (service subset, output-bucket vector) groups.

    ``output_buckets`` must cover every service appearing in the
    collection.  Values that fall outside their service's buckets raise a
    DomainError naming the user and service.
    """
    if isinstance(observations, Collection):
        collection = observations
    else:
        collection = Collection.from_user_observations(list(observations), n_services)
    strata = []
    for stratum in collection.strata:
        idx = np.empty(stratum.values.shape, dtype=np.int64)
        sizes = []
        for c, j in enumerate(stratum.service_ids):
            try:
                buckets = output_buckets[j]
            except KeyError:
                raise KeyError(f"no output buckets supplied for service {j}") from None
            try:
                idx[:, c] = buckets.index_batch(stratum.values[:, c])
            except ValueError as err:
                pos = getattr(err, "position", None)
                user = int(stratum.user_ids[pos]) if pos is not None else "?"
                raise type(err)(f"user {user}, service {j}: {err}") from None
            sizes.append(buckets.count)
        vectors, counts = _unique_rows(idx, sizes)
        strata.append(GroupStratum(stratum.service_ids, vectors, counts))
    return GroupedCounts(strata)


def _unique_rows(idx: np.ndarray, sizes: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``idx`` with counts, packing into one integer when it fits."""
    span = 1
    for h in sizes:
        span *= h
    if span <= _PACK_LIMIT:
        radix = np.ones(len(sizes), dtype=np.int64)
        for c in range(1, len(sizes)):
            radix[c] = radix[c - 1] * sizes[c - 1]
        codes = idx @ radix
        unique, counts = np.unique(codes, return_counts=True)
        vectors = np.empty((unique.size, len(sizes)), dtype=np.int64)
        rest = unique.copy()
        for c, h in enumerate(sizes):
            vectors[:, c] = rest % h
            rest //= h
        return vectors, counts
    return np.unique(idx, axis=0, return_counts=True)


@dataclass
class HistogramEstimate:
    """Estimated bucket probabilities over the input grid."""

    grid: BucketGrid
    probs: np.ndarray

    def mean(self) -> float:
        return float(self.probs @ self.grid.midpoints)


def histogram_mean(estimate: HistogramEstimate) -> float:
    """Mean implied by a histogram: probability-weighted bucket midpoints."""
    return estimate.mean()


@dataclass
class EmResult:
    """EM output: the histogram plus the fitting trace."""

    histogram: HistogramEstimate
    loglik: np.ndarray = field(repr=False)
    iterations: int
    converged: bool


def em_estimate(
    grouped: GroupedCounts,
    matrices: Mapping[int, ConditionalMatrix],
    grid: BucketGrid,
    config: EmConfig = EmConfig(),
) -> EmResult:
    """Maximum-likelihood histogram from grouped observations.

    ``matrices`` maps service id to its conditional matrix over ``grid``.
    Starting from the uniform histogram, each step multiplies every bucket
    probability by its responsibility for the observed groups and
    renormalizes, stopping when the log-likelihood moves less than
    ``config.threshold`` or after ``config.max_iterations`` updates.
    Probabilities are floored at ``config.floor`` to keep the estimate
    strictly positive.  The objective never decreases; a drop beyond
    MONOTONE_TOL raises :class:`EmDivergedError`.
    """
    if grouped.n_users == 0:
        raise ValueError("cannot estimate a histogram from an empty collection")
    g, counts, offset = _build_kernel_matrix(grouped, matrices, grid)
    d0 = np.full(grid.count, 1.0 / grid.count)
    d, trace, converged = kernels.em_fit(
        g, counts, d0, config.threshold, config.max_iterations, config.floor
    )
    trace = trace + offset
    drops = np.diff(trace)
    if drops.size and float(drops.min()) < -MONOTONE_TOL:
        raise EmDivergedError(
            f"log-likelihood decreased by {-float(drops.min()):.3e} during EM"
        )
    return EmResult(
        histogram=HistogramEstimate(grid, d),
        loglik=trace,
        iterations=len(trace) - 1,
        converged=converged,
    )


def _build_kernel_matrix(
    grouped: GroupedCounts,
    matrices: Mapping[int, ConditionalMatrix],
    grid: BucketGrid,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Stack per-group kernel rows g[k, t] = P(group k's buckets | midpoint t).

    Strata with many services or tiny matrix entries are built in log
    space, each row rescaled by its peak to dodge underflow.  Rescaling
    rows leaves the EM trajectory unchanged; the returned scalar offset
    (counts dotted with the per-row log peaks) restores the true
    log-likelihood trace.
    """
    blocks = []
    count_blocks = []
    offset_blocks = []
    for stratum in grouped.strata:
        for j in stratum.service_ids:
            model = matrices.get(j)
            if model is None:
                raise KeyError(f"no conditional matrix supplied for service {j}")
            if isinstance(model, LaplaceLikelihood) or isinstance(
                getattr(model, "mechanism", None), LaplaceMechanism
            ):
                raise UnsupportedMechanismError(
                    f"service {j} uses an unbounded-output mechanism and cannot"
                    " join the histogram estimator"
                )
            if model.input_grid != grid:
                raise ValueError(
                    f"conditional matrix for service {j} was built on a different grid"
                )
        used = [matrices[j] for j in stratum.service_ids]
        log_space = len(used) > 8 or any(m.probs.min() < 1e-12 for m in used)
        if log_space:
            logg = np.zeros((stratum.n_groups, grid.count))
            with np.errstate(divide="ignore"):
                for c, model in enumerate(used):
                    logg += np.log(model.probs[stratum.vectors[:, c]])
            peak = logg.max(axis=1)
            dead = ~np.isfinite(peak)
            if np.any(dead):
                k = int(np.flatnonzero(dead)[0])
                raise ImpossibleObservationError(
                    f"bucket vector {tuple(stratum.vectors[k])} for services"
                    f" {stratum.service_ids} has zero probability at every midpoint"
                )
            rows = np.exp(logg - peak[:, None])
            offsets = peak
        else:
            rows = np.ones((stratum.n_groups, grid.count))
            for c, model in enumerate(used):
                rows *= model.probs[stratum.vectors[:, c]]
            dead = ~(rows.sum(axis=1) > 0.0)
            if np.any(dead):
                k = int(np.flatnonzero(dead)[0])
                raise ImpossibleObservationError(
                    f"bucket vector {tuple(stratum.vectors[k])} for services"
                    f" {stratum.service_ids} has zero probability at every midpoint"
                )
            offsets = np.zeros(stratum.n_groups)
        blocks.append(rows)
        count_blocks.append(stratum.counts.astype(float))
        offset_blocks.append(offsets)
    g = np.vstack(blocks)
    counts = np.concatenate(count_blocks)
    offsets = np.concatenate(offset_blocks)
    return g, counts, float(counts @ offsets)


def estimate_histogram(
    observations: Observations,
    mechanisms: Sequence[Mechanism],
    grid: BucketGrid,
    output_resolution: int = 32,
    config: EmConfig = EmConfig(),
    services: Iterable[int] | None = None,
) -> EmResult:
    """Grouping plus EM in one call.

    ``services`` restricts the estimate to a subset of services (users
    with no report among them drop out); by default every service in the
    collection participates.  All participating mechanisms must have
    bounded output.
    """
    collection = as_collection(observations, len(mechanisms))
    if services is not None:
        collection = collection.restrict(services)
    present = sorted({j for s in collection.strata for j in s.service_ids})
    matrices = {
        j: conditional_matrix(mechanisms[j], grid, output_resolution, service_id=j)
        for j in present
    }
    buckets = {j: matrices[j].output_buckets for j in present}
    grouped = group_users(collection, buckets)
    return em_estimate(grouped, matrices, grid, config)
