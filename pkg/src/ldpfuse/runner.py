"""Trial loop: simulate collections, run estimators, write tidy CSVs.

One experiment is ``trials`` independent repetitions of: draw (or reuse)
the population, perturb it through every service, and run the requested
estimators.  Per-trial metric rows land in ``results.csv``, per-estimator
aggregates in ``summary.csv``; histogram estimates and EM traces are
optional extras.  All value columns are written with ``repr`` so reruns
with the same seed are byte-identical (wall-time columns excepted).
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buckets import BucketGrid, conditional_matrix, likelihood_models
from .config import ExperimentConfig
from .distribution import em_estimate, group_users
from .mean import unbiased_average, uwa
from .metrics import js_divergence, kl_divergence
from .simulate import Population, generate_synthetic, ingest_csv, simulate_collection

CANONICAL_GRID = (-1.0, 1.0)


@dataclass
class RunResult:
    """Everything a run produced, in memory plus file paths when written."""

    label: str
    eps_label: str
    #: (estimator, trial, metric, value, seconds)
    rows: list[tuple] = field(default_factory=list)
    #: (estimator, metric, value, trials)
    summary: list[tuple] = field(default_factory=list)
    #: true mean (and histogram when needed) per trial
    truths: list[float] = field(default_factory=list)
    paths: dict[str, Path] = field(default_factory=dict)

    def per_trial(self, estimator: str, metric: str) -> list[float]:
        return [value for est, _, met, value, _ in self.rows if est == estimator and met == metric]

    def summary_value(self, estimator: str, metric: str) -> float:
        for est, met, value, _ in self.summary:
            if est == estimator and met == metric:
                return value
        raise KeyError(f"no summary value for ({estimator}, {metric})")


def _population_for_trial(cfg: ExperimentConfig, rng: np.random.Generator, fixed) -> Population:
    if fixed is not None:
        return fixed
    return generate_synthetic(cfg.dataset.kind, cfg.dataset.n, rng)


def run_experiment(
    cfg: ExperimentConfig,
    seed: int | None = None,
    trials: int | None = None,
    out: str | None = None,
    write: bool = True,
) -> RunResult:
    """Run every requested estimator for every trial of one config.

    ``seed``, ``trials``, and ``out`` override the config when given.
    With ``write=False`` nothing touches the filesystem and results stay
    in memory.
    """
    cfg = dataclasses.replace(
        cfg,
        seed=cfg.seed if seed is None else seed,
        trials=cfg.trials if trials is None else trials,
        output_dir=cfg.output_dir if out is None else out,
    )
    mechanisms = cfg.build_mechanisms()
    plan = cfg.build_plan(mechanisms)
    disc = cfg.discretize
    posterior_grid = BucketGrid(*CANONICAL_GRID, disc.posterior_buckets)
    histogram_grid = BucketGrid(*CANONICAL_GRID, disc.histogram_buckets)

    want_uwa = "uwa" in cfg.mean_estimators
    models = (
        likelihood_models(mechanisms, posterior_grid, disc.output_resolution, disc.method)
        if want_uwa
        else None
    )

    dist_services = cfg.effective_distribution_services() if cfg.distribution_estimators else []
    dist_matrices = {
        j: conditional_matrix(mechanisms[j], histogram_grid, disc.output_resolution, disc.method, j)
        for j in dist_services
    }
    dist_buckets = {j: m.output_buckets for j, m in dist_matrices.items()}
    em_config = cfg.em.to_em_config()

    fixed_population = None
    if cfg.dataset.kind == "csv":
        fixed_population, _ = ingest_csv(
            cfg.dataset.path,
            cfg.dataset.column,
            cfg.dataset.lo,
            cfg.dataset.hi,
            cfg.dataset.value_filter,
        )

    result = RunResult(cfg.label, cfg.epsilon_label())
    histogram_rows = []
    trace_rows = []
    trial_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)

    for trial in range(cfg.trials):
        pop_seed, collect_seed = trial_seeds[trial].spawn(2)
        population = _population_for_trial(cfg, np.random.default_rng(pop_seed), fixed_population)
        collection = simulate_collection(population, plan, collect_seed)
        truth = population.true_mean
        result.truths.append(truth)

        for name, estimate, seconds in _mean_estimates(
            cfg, collection, mechanisms, models, posterior_grid
        ):
            result.rows.append((name, trial, "squared_error", (estimate - truth) ** 2, seconds))

        if cfg.distribution_estimators:
            truth_hist = population.true_histogram(histogram_grid)
            for name, em_result, seconds in _distribution_estimates(
                cfg, collection, dist_services, dist_buckets, dist_matrices, histogram_grid, em_config
            ):
                probs = em_result.histogram.probs
                result.rows.append((name, trial, "js", js_divergence(truth_hist, probs), seconds))
                result.rows.append((name, trial, "kl", kl_divergence(truth_hist, probs), seconds))
                if cfg.output.dump_histograms:
                    for b, p in enumerate(probs):
                        histogram_rows.append(
                            (name, trial, b, histogram_grid.midpoints[b], p)
                        )
                if cfg.output.dump_em_traces:
                    for i, ll in enumerate(em_result.loglik):
                        trace_rows.append((name, trial, i, ll))

    _summarize(result, cfg.trials)
    if write:
        _write_outputs(cfg, result, histogram_rows, trace_rows)
    return result


def _mean_estimates(cfg, collection, mechanisms, models, grid):
    """Yield (estimator name, estimate, seconds) for the requested mean estimators."""
    for kind in cfg.mean_estimators:
        if kind == "ua":
            start = time.perf_counter()
            estimate = unbiased_average(collection, mechanisms)
            yield "ua", estimate, time.perf_counter() - start
        elif kind == "uwa":
            start = time.perf_counter()
            estimate = uwa(collection, mechanisms, models, grid).estimate
            yield "uwa", estimate, time.perf_counter() - start
        elif kind == "singles":
            for j, mech in enumerate(mechanisms):
                start = time.perf_counter()
                values = collection.service_view(j)
                if values.size == 0:
                    continue
                estimate = float(np.mean(mech.unbias_canonical(values)))
                yield f"single:{mech.kind}@{j}", estimate, time.perf_counter() - start


def _distribution_estimates(cfg, collection, services, buckets, matrices, grid, em_config):
    """Yield (estimator name, EmResult, seconds) for the requested histogram estimators."""
    for kind in cfg.distribution_estimators:
        if kind == "ule":
            start = time.perf_counter()
            restricted = collection.restrict(services)
            grouped = group_users(restricted, buckets)
            em_result = em_estimate(grouped, matrices, grid, em_config)
            yield "ule", em_result, time.perf_counter() - start
        elif kind == "singles":
            for j in services:
                start = time.perf_counter()
                restricted = collection.restrict([j])
                if restricted.n_users == 0:
                    continue
                grouped = group_users(restricted, buckets)
                em_result = em_estimate(grouped, matrices, grid, em_config)
                mech_kind = cfg.services[j][0]
                yield f"single:{mech_kind}@{j}", em_result, time.perf_counter() - start


def _summarize(result: RunResult, trials: int) -> None:
    by_estimator: dict[tuple[str, str], list[float]] = {}
    order = []
    for est, _, metric, value, _ in result.rows:
        key = (est, metric)
        if key not in by_estimator:
            by_estimator[key] = []
            order.append(key)
        by_estimator[key].append(value)
    for est, metric in order:
        values = by_estimator[(est, metric)]
        if metric == "squared_error":
            result.summary.append((est, "mse", float(np.mean(values)), len(values)))
        else:
            result.summary.append((est, f"{metric}_mean", float(np.mean(values)), len(values)))


def _write_outputs(cfg, result: RunResult, histogram_rows, trace_rows) -> None:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results_path = out_dir / "results.csv"
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "estimator", "eps_label", "trial", "metric", "value", "seconds"])
        for est, trial, metric, value, seconds in result.rows:
            writer.writerow(
                [result.label, est, result.eps_label, trial, metric, repr(float(value)), f"{seconds:.6f}"]
            )
    result.paths["results"] = results_path

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "estimator", "eps_label", "metric", "value", "trials"])
        for est, metric, value, count in result.summary:
            writer.writerow([result.label, est, result.eps_label, metric, repr(float(value)), count])
    result.paths["summary"] = summary_path

    if histogram_rows:
        path = out_dir / "histograms.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "estimator", "trial", "bucket", "midpoint", "prob"])
            for est, trial, bucket, midpoint, prob in histogram_rows:
                writer.writerow(
                    [result.label, est, trial, bucket, repr(float(midpoint)), repr(float(prob))]
                )
        result.paths["histograms"] = path

    if trace_rows:
        path = out_dir / "em_traces.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "estimator", "trial", "iteration", "loglik"])
            for est, trial, iteration, loglik in trace_rows:
                writer.writerow([result.label, est, trial, iteration, repr(float(loglik))])
        result.paths["traces"] = path
