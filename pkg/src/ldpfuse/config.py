"""Experiment configuration: TOML loading, checking, and defaults.

A config names a population source, the per-service mechanisms and
budgets, optional participation groups, which estimators to run, and the
discretization and EM settings.  ``load_config`` is strict: unknown keys
and wrong types are errors, so typos surface before a long run rather
than silently falling back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .distribution import EmConfig
from .mechanisms import MECHANISM_KINDS, Mechanism, make_mechanism
from .simulate import SYNTHETIC_KINDS, ParticipationGroup, ServicePlan

MEAN_ESTIMATORS = ("ua", "uwa", "singles")
DISTRIBUTION_ESTIMATORS = ("ule", "singles")


class ConfigError(ValueError):
    """A config file cannot be parsed into a valid experiment."""


@dataclass
class DatasetConfig:
    kind: str = "beta25"
    n: int = 10000
    path: str | None = None
    column: str | int | None = None
    lo: float | None = None
    hi: float | None = None
    value_filter: tuple[float, float] | None = None


@dataclass
class DiscretizeConfig:
    posterior_buckets: int = 64
    histogram_buckets: int = 64
    output_resolution: int = 32
    method: str = "exact"


@dataclass
class EmSettings:
    threshold: float = 1e-4
    max_iterations: int = 10000
    floor: float = 1e-12
    max_groups: int = 2_000_000

    def to_em_config(self) -> EmConfig:
        return EmConfig(self.threshold, self.max_iterations, self.floor)


@dataclass
class OutputConfig:
    dump_em_traces: bool = False
    dump_histograms: bool = True


@dataclass
class ExperimentConfig:
    label: str = "experiment"
    seed: int = 0
    trials: int = 1
    output_dir: str = "out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    services: list[tuple[str, float]] = field(default_factory=list)
    groups: list[tuple[tuple[int, ...], int]] | None = None
    mean_estimators: list[str] = field(default_factory=lambda: ["ua", "uwa", "singles"])
    distribution_estimators: list[str] = field(default_factory=list)
    distribution_services: list[int] | None = None
    discretize: DiscretizeConfig = field(default_factory=DiscretizeConfig)
    em: EmSettings = field(default_factory=EmSettings)
    output: OutputConfig = field(default_factory=OutputConfig)

    def build_mechanisms(self) -> list[Mechanism]:
        return [make_mechanism(kind, eps) for kind, eps in self.services]

    def build_plan(self, mechanisms: list[Mechanism]) -> ServicePlan:
        groups = None
        if self.groups is not None:
            groups = [ParticipationGroup(tuple(svc), count) for svc, count in self.groups]
        return ServicePlan(mechanisms, groups)

    def effective_distribution_services(self) -> list[int]:
        """Services joining the histogram estimate: explicit list, else all non-Laplace."""
        if self.distribution_services is not None:
            return list(self.distribution_services)
        return [j for j, (kind, _) in enumerate(self.services) if kind != "laplace"]

    def epsilon_label(self) -> str:
        return ";".join(f"{kind}={eps:g}" for kind, eps in self.services)


def _take(section: dict, key: str, types, where: str, default=..., required: bool = False):
    if key not in section:
        if required:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    value = section.pop(key)
    if not isinstance(value, types) or (isinstance(value, bool) and bool not in _tuple(types)):
        raise ConfigError(
            f"{where}.{key}: expected {_type_names(types)}, got {type(value).__name__}"
        )
    return value


def _tuple(types):
    return types if isinstance(types, tuple) else (types,)


def _type_names(types) -> str:
    return " or ".join(t.__name__ for t in _tuple(types))


def _no_leftovers(section: dict, where: str) -> None:
    if section:
        raise ConfigError(f"{where}: unknown key(s) {sorted(section)}")


def _parse_dataset(raw: dict) -> DatasetConfig:
    ds = DatasetConfig()
    ds.kind = _take(raw, "kind", str, "dataset", default="beta25")
    valid = SYNTHETIC_KINDS + ("csv",)
    if ds.kind not in valid:
        raise ConfigError(f"dataset.kind: {ds.kind!r} is not one of {valid}")
    ds.n = int(_take(raw, "n", int, "dataset", default=10000))
    if ds.kind == "csv":
        ds.path = _take(raw, "path", str, "dataset", required=True)
        ds.column = _take(raw, "column", (str, int), "dataset", required=True)
        ds.lo = float(_take(raw, "lo", (int, float), "dataset", required=True))
        ds.hi = float(_take(raw, "hi", (int, float), "dataset", required=True))
        filt = _take(raw, "filter", list, "dataset", default=None)
        if filt is not None:
            if len(filt) != 2 or not all(isinstance(x, (int, float)) for x in filt):
                raise ConfigError("dataset.filter: expected [low, high]")
            ds.value_filter = (float(filt[0]), float(filt[1]))
    _no_leftovers(raw, "dataset")
    return ds


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file; raises ConfigError on any problem."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: invalid TOML: {err}") from None

    cfg = ExperimentConfig()
    cfg.label = _take(raw, "label", str, "config", default=path.stem)
    cfg.seed = int(_take(raw, "seed", int, "config", default=0))
    cfg.trials = int(_take(raw, "trials", int, "config", default=1))
    cfg.output_dir = _take(raw, "output_dir", str, "config", default="out")

    cfg.dataset = _parse_dataset(_take(raw, "dataset", dict, "config", default={}))

    services_raw = _take(raw, "services", list, "config", required=True)
    if not services_raw:
        raise ConfigError("services: at least one service is required")
    cfg.services = []
    for i, svc in enumerate(services_raw):
        where = f"services[{i}]"
        if not isinstance(svc, dict):
            raise ConfigError(f"{where}: expected a table")
        kind = _take(svc, "kind", str, where, required=True).strip().lower()
        if kind not in MECHANISM_KINDS:
            raise ConfigError(f"{where}.kind: {kind!r} is not one of {sorted(MECHANISM_KINDS)}")
        eps = float(_take(svc, "epsilon", (int, float), where, required=True))
        _no_leftovers(svc, where)
        cfg.services.append((kind, eps))

    groups_raw = _take(raw, "groups", list, "config", default=None)
    if groups_raw is not None:
        cfg.groups = []
        for i, grp in enumerate(groups_raw):
            where = f"groups[{i}]"
            if not isinstance(grp, dict):
                raise ConfigError(f"{where}: expected a table")
            svcs = _take(grp, "services", list, where, required=True)
            if not all(isinstance(j, int) for j in svcs):
                raise ConfigError(f"{where}.services: expected a list of service indices")
            count = int(_take(grp, "count", int, where, required=True))
            _no_leftovers(grp, where)
            cfg.groups.append((tuple(svcs), count))

    est = _take(raw, "estimators", dict, "config", default={})
    cfg.mean_estimators = list(_take(est, "mean", list, "estimators", default=cfg.mean_estimators))
    cfg.distribution_estimators = list(
        _take(est, "distribution", list, "estimators", default=[])
    )
    dsvc = _take(est, "distribution_services", list, "estimators", default=None)
    cfg.distribution_services = None if dsvc is None else [int(j) for j in dsvc]
    _no_leftovers(est, "estimators")

    disc = _take(raw, "discretize", dict, "config", default={})
    d = cfg.discretize
    d.posterior_buckets = int(_take(disc, "posterior_buckets", int, "discretize", default=d.posterior_buckets))
    d.histogram_buckets = int(_take(disc, "histogram_buckets", int, "discretize", default=d.histogram_buckets))
    d.output_resolution = int(_take(disc, "output_resolution", int, "discretize", default=d.output_resolution))
    d.method = _take(disc, "method", str, "discretize", default=d.method)
    _no_leftovers(disc, "discretize")

    em = _take(raw, "em", dict, "config", default={})
    e = cfg.em
    e.threshold = float(_take(em, "threshold", (int, float), "em", default=e.threshold))
    e.max_iterations = int(_take(em, "max_iterations", int, "em", default=e.max_iterations))
    e.floor = float(_take(em, "floor", (int, float), "em", default=e.floor))
    e.max_groups = int(_take(em, "max_groups", int, "em", default=e.max_groups))
    _no_leftovers(em, "em")

    out = _take(raw, "output", dict, "config", default={})
    o = cfg.output
    o.dump_em_traces = _take(out, "dump_em_traces", bool, "output", default=o.dump_em_traces)
    o.dump_histograms = _take(out, "dump_histograms", bool, "output", default=o.dump_histograms)
    _no_leftovers(out, "output")

    _no_leftovers(raw, "config")
    return cfg


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Semantic checks; returns human-readable violations (empty means valid)."""
    problems = []
    if cfg.trials < 1:
        problems.append(f"trials: must be at least 1, got {cfg.trials}")
    if cfg.dataset.n < 1:
        problems.append(f"dataset.n: must be at least 1, got {cfg.dataset.n}")
    if cfg.dataset.kind == "csv":
        if cfg.dataset.lo is not None and cfg.dataset.hi is not None and not cfg.dataset.hi > cfg.dataset.lo:
            problems.append("dataset: hi must exceed lo")
        if cfg.dataset.path and not Path(cfg.dataset.path).exists():
            problems.append(f"dataset.path: file not found: {cfg.dataset.path}")
    if not cfg.services:
        problems.append("services: at least one service is required")
    for i, (kind, eps) in enumerate(cfg.services):
        if kind not in MECHANISM_KINDS:
            problems.append(f"services[{i}].kind: unknown mechanism {kind!r}")
        if not eps > 0:
            problems.append(f"services[{i}].epsilon: must be positive, got {eps}")

    for name in cfg.mean_estimators:
        if name not in MEAN_ESTIMATORS:
            problems.append(f"estimators.mean: unknown estimator {name!r}; valid: {MEAN_ESTIMATORS}")
    for name in cfg.distribution_estimators:
        if name not in DISTRIBUTION_ESTIMATORS:
            problems.append(
                f"estimators.distribution: unknown estimator {name!r}; valid: {DISTRIBUTION_ESTIMATORS}"
            )

    n_services = len(cfg.services)
    if cfg.groups is not None:
        total = 0
        for i, (svcs, count) in enumerate(cfg.groups):
            if not svcs:
                problems.append(f"groups[{i}]: reports to no services")
            if len(set(svcs)) != len(svcs):
                problems.append(f"groups[{i}]: lists a service twice")
            for j in svcs:
                if not 0 <= j < n_services:
                    problems.append(f"groups[{i}]: unknown service index {j}")
            if count < 1:
                problems.append(f"groups[{i}].count: must be positive, got {count}")
            total += count
        if total != cfg.dataset.n:
            problems.append(f"groups: counts sum to {total}, dataset.n is {cfg.dataset.n}")

    if cfg.distribution_estimators:
        dsvc = cfg.effective_distribution_services()
        if not dsvc:
            problems.append(
                "estimators.distribution: no bounded-output services available"
                " for the histogram estimators"
            )
        for j in dsvc:
            if not 0 <= j < n_services:
                problems.append(f"estimators.distribution_services: unknown service index {j}")
            elif cfg.services[j][0] == "laplace":
                problems.append(
                    f"estimators.distribution_services: service {j} uses laplace, whose"
                    " unbounded output cannot join the histogram estimators"
                )
        sizes = []
        for j in dsvc:
            if 0 <= j < n_services:
                kind = cfg.services[j][0]
                sizes.append(2 if kind == "sr" else cfg.discretize.output_resolution)
        span = 1
        for s in sizes:
            span *= s
        worst = min(cfg.dataset.n, span)
        if worst > cfg.em.max_groups:
            problems.append(
                f"em.max_groups: up to {worst} distinct observation groups possible,"
                f" above the limit {cfg.em.max_groups}; lower output_resolution or"
                " raise the limit"
            )

    d = cfg.discretize
    if d.posterior_buckets < 2:
        problems.append(f"discretize.posterior_buckets: must be at least 2, got {d.posterior_buckets}")
    if d.histogram_buckets < 2:
        problems.append(f"discretize.histogram_buckets: must be at least 2, got {d.histogram_buckets}")
    if d.output_resolution < 2:
        problems.append(f"discretize.output_resolution: must be at least 2, got {d.output_resolution}")
    if d.method not in ("exact", "midpoint"):
        problems.append(f"discretize.method: must be 'exact' or 'midpoint', got {d.method!r}")

    try:
        cfg.em.to_em_config()
    except ValueError as err:
        problems.append(f"em: {err}")
    if cfg.em.max_groups < 1:
        problems.append(f"em.max_groups: must be positive, got {cfg.em.max_groups}")
    return problems
