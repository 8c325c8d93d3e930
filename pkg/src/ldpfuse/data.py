"""Containers for perturbed collections gathered from multiple services.

A collection groups users into strata by the exact subset of services they
report to.  Within a stratum the perturbed values form a dense
``(users, services)`` array, which is what the batch estimators consume;
``iter_users`` exposes the same data one user at a time for the
user-by-user operations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np


@dataclass
class UserObservations:
    """All perturbed values reported by one user, as (service index, value) pairs."""

    user_id: int
    values: list[tuple[int, float]]

    def __post_init__(self):
        services = [j for j, _ in self.values]
        if len(set(services)) != len(services):
            raise ValueError(f"user {self.user_id} reports a service more than once")


@dataclass
class Stratum:
    """Users sharing one service subset; values[:, c] belongs to service_ids[c]."""

    service_ids: tuple[int, ...]
    user_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.service_ids = tuple(int(j) for j in self.service_ids)
        self.user_ids = np.asarray(self.user_ids, dtype=np.int64)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(self.service_ids) != len(set(self.service_ids)):
            raise ValueError(f"duplicate service ids in stratum {self.service_ids}")
        if self.values.shape != (len(self.user_ids), len(self.service_ids)):
            raise ValueError(
                f"stratum value array has shape {self.values.shape}, expected "
                f"({len(self.user_ids)}, {len(self.service_ids)})"
            )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)


@dataclass
class Collection:
    """Perturbed values from all users, stratified by service subset."""

    strata: list[Stratum]
    n_services: int

    def __post_init__(self):
        for s in self.strata:
            for j in s.service_ids:
                if not 0 <= j < self.n_services:
                    raise ValueError(f"stratum references unknown service {j}")

    @property
    def n_users(self) -> int:
        return sum(s.n_users for s in self.strata)

    def service_view(self, service_id: int) -> np.ndarray:
        """All perturbed values reported to one service, in stratum then user order."""
        parts = [
            s.values[:, s.service_ids.index(service_id)]
            for s in self.strata
            if service_id in s.service_ids
        ]
        if not parts:
            return np.empty(0)
        return np.concatenate(parts)

    def restrict(self, services: Iterable[int]) -> "Collection":
        """Project onto a subset of services, dropping users with no data left."""
        keep = set(int(j) for j in services)
        strata = []
        for s in self.strata:
            cols = [c for c, j in enumerate(s.service_ids) if j in keep]
            if not cols:
                continue
            strata.append(
                Stratum(
                    tuple(s.service_ids[c] for c in cols),
                    s.user_ids,
                    s.values[:, cols],
                )
            )
        return Collection(strata, self.n_services)

    def iter_users(self) -> Iterator[UserObservations]:
        for s in self.strata:
            for i in range(s.n_users):
                yield UserObservations(
                    int(s.user_ids[i]),
                    [(j, float(s.values[i, c])) for c, j in enumerate(s.service_ids)],
                )

    def user_observations(self) -> list[UserObservations]:
        return list(self.iter_users())

    @classmethod
    def from_user_observations(
        cls, observations: Sequence[UserObservations], n_services: int | None = None
    ) -> "Collection":
        """Build a stratified collection from per-user observation lists.

        Users are grouped by their (sorted) service subset; strata appear
        in order of first occurrence.
        """
        groups: dict[tuple[int, ...], list[UserObservations]] = {}
        max_service = -1
        for obs in observations:
            key = tuple(sorted(j for j, _ in obs.values))
            if not key:
                raise ValueError(f"user {obs.user_id} has no observations")
            groups.setdefault(key, []).append(obs)
            max_service = max(max_service, key[-1])
        if n_services is None:
            n_services = max_service + 1
        strata = []
        for key, members in groups.items():
            user_ids = np.array([m.user_id for m in members], dtype=np.int64)
            values = np.empty((len(members), len(key)))
            for i, m in enumerate(members):
                by_service = dict(m.values)
                values[i] = [by_service[j] for j in key]
            strata.append(Stratum(key, user_ids, values))
        return cls(strata, n_services)

    def write_csv(self, path) -> None:
        """Serialize as tidy rows: user_id, service_id, perturbed_value."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "service_id", "perturbed_value"])
            for s in self.strata:
                for i in range(s.n_users):
                    for c, j in enumerate(s.service_ids):
                        writer.writerow([int(s.user_ids[i]), j, repr(float(s.values[i, c]))])


Observations = Union[Collection, Sequence[UserObservations]]


def as_collection(observations: Observations, n_services: int | None = None) -> Collection:
    """Pass a Collection through; stratify a list of per-user observations."""
    if isinstance(observations, Collection):
        return observations
    return Collection.from_user_observations(list(observations), n_services)
