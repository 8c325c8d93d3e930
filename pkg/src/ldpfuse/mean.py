"""Population-mean estimators over multi-service perturbed collections.

Two estimators are provided:

* :func:`unbiased_average`: unbias every report, average within each user,
  then average across users.  Simple and unbiased, but treats every
  service as equally informative.
* :func:`uwa`: per user, run a Bayesian update over a bucket grid to get a
  posterior on the user's value, evaluate each service's unbiased-output
  variance under that posterior, and combine the user's reports with
  inverse-variance weights.  The weights minimise the variance of the
  per-user combination (see :func:`minimum_variance_weights`), which is
  what "uwa" stands for: user-level weighted averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .buckets import BucketGrid, LikelihoodModel
from .data import Observations, UserObservations, as_collection
from .mechanisms import Mechanism

log = logging.getLogger(__name__)

#: past this many services per user the straight likelihood product risks
#: underflow, so the posterior switches to the log-space path
LOG_SPACE_THRESHOLD = 64

#: users processed per kernel call, to bound the likelihood buffer size
DEFAULT_CHUNK = 32768


def unbiased_average(observations: Observations, mechanisms: Sequence[Mechanism]) -> float:
    """Mean of per-user means of unbiased reports.

    With full participation every user has the same number of reports and
    this equals the grand mean of all unbiased values; with partial
    participation each user still contributes exactly once, so users with
    many reports do not crowd out users with few.
    """
    collection = as_collection(observations, len(mechanisms))
    if collection.n_users == 0:
        raise ValueError("cannot average an empty collection")
    total = 0.0
    for stratum in collection.strata:
        unb = np.empty_like(stratum.values)
        for c, j in enumerate(stratum.service_ids):
            unb[:, c] = mechanisms[j].unbias_canonical(stratum.values[:, c])
        total += float(unb.mean(axis=1).sum())
    return total / collection.n_users


@dataclass
class Posterior:
    """Probabilities over the midpoints of a bucket grid."""

    grid: BucketGrid
    probs: np.ndarray

    def mean(self) -> float:
        return float(self.probs @ self.grid.midpoints)


def bayesian_update(
    observations: UserObservations,
    models: Sequence[LikelihoodModel],
    grid: BucketGrid,
) -> Posterior:
    """Posterior over one user's value after all of their reports.

    Starts from the uniform prior over the grid midpoints and multiplies
    in each report's likelihood row, renormalizing after every step.  The
    result does not depend on the order of the reports.  If a product
    underflows to all zeros the posterior resets to uniform (the reports
    were so contradictory that they carry no usable signal) and a warning
    is logged.
    """
    probs = np.full(grid.count, 1.0 / grid.count)
    for service_id, value in observations.values:
        probs = probs * models[service_id].likelihood(value)
        total = probs.sum()
        if not total > 0.0:
            log.warning(
                "posterior for user %s underflowed to zero; reset to uniform",
                observations.user_id,
            )
            probs = np.full(grid.count, 1.0 / grid.count)
            continue
        probs /= total
    return Posterior(grid, probs)


def posterior_variance(posterior: Posterior, mech: Mechanism) -> float:
    """Expected unbiased-output variance of a mechanism under a posterior.

    Averages the closed-form variance at each grid midpoint, weighted by
    the posterior probabilities.  Everything is in canonical-domain terms.
    """
    table = mech.canonical_unbiased_variance(posterior.grid.midpoints)
    return float(posterior.probs @ table)


def minimum_variance_weights(variances) -> tuple[np.ndarray, float]:
    """Inverse-variance weights and the variance they achieve.

    For independent unbiased estimates with variances ``V_j``, the convex
    weights minimising the variance of the weighted sum are proportional
    to ``1 / V_j``, and the achieved variance is ``1 / sum(1 / V_j)``,
    which never exceeds the smallest single ``V_j``.
    """
    variances = np.asarray(variances, dtype=float)
    if variances.ndim != 1 or variances.size == 0:
        raise ValueError("variances must be a non-empty 1-d array")
    if np.any(variances <= 0.0) or not np.isfinite(variances).all():
        raise ValueError(f"variances must be positive and finite, got {variances}")
    inv = 1.0 / variances
    inv_sum = inv.sum()
    return inv / inv_sum, float(1.0 / inv_sum)


@dataclass
class UwaResult:
    """Weighted-average estimate plus per-run diagnostics."""

    estimate: float
    #: average over users of the variance achieved by their weights
    mean_user_variance: float
    n_users: int
    #: users whose posterior underflowed and was reset to uniform
    degenerate_users: int

    def __float__(self) -> float:
        return self.estimate


def uwa(
    observations: Observations,
    mechanisms: Sequence[Mechanism],
    models: Sequence[LikelihoodModel],
    grid: BucketGrid,
    chunk_size: int = DEFAULT_CHUNK,
) -> UwaResult:
    """Posterior-weighted mean of the population.

    For each user: build the posterior over ``grid`` from their reports,
    average each report's unbiased-output variance under it, weight the
    unbiased reports by inverse variance, and sum.  The population
    estimate is the plain mean of these per-user combinations.

    ``models`` must align index-for-index with ``mechanisms``.  Users are
    processed in chunks through the compiled kernel when available.
    """
    collection = as_collection(observations, len(mechanisms))
    if collection.n_users == 0:
        raise ValueError("cannot average an empty collection")
    if len(models) != len(mechanisms):
        raise ValueError(
            f"{len(models)} likelihood models for {len(mechanisms)} mechanisms"
        )

    var_full = np.empty((len(mechanisms), grid.count))
    for j, mech in enumerate(mechanisms):
        var_full[j] = mech.canonical_unbiased_variance(grid.midpoints)
    if np.any(var_full <= 0.0):
        raise ValueError("a mechanism reports non-positive variance on the grid")

    total = 0.0
    total_var = 0.0
    degenerate = 0
    for stratum in collection.strata:
        svc = list(stratum.service_ids)
        var_tables = var_full[svc]
        kernel = (
            kernels.posterior_weighted_means_log
            if len(svc) > LOG_SPACE_THRESHOLD
            else kernels.posterior_weighted_means
        )
        for start in range(0, stratum.n_users, chunk_size):
            block = stratum.values[start : start + chunk_size]
            likes = np.empty((len(svc), block.shape[0], grid.count))
            unb = np.empty((len(svc), block.shape[0]))
            for c, j in enumerate(svc):
                likes[c] = models[j].likelihood_batch(block[:, c])
                unb[c] = mechanisms[j].unbias_canonical(block[:, c])
            vprime, minvar, ndeg = kernel(likes, var_tables, unb)
            total += float(vprime.sum())
            total_var += float(minvar.sum())
            degenerate += ndeg
    if degenerate:
        log.warning("%d of %d posteriors underflowed and were reset", degenerate, collection.n_users)
    n = collection.n_users
    return UwaResult(total / n, total_var / n, n, degenerate)
