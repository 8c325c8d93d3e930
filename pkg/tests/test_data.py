"""Stratified collection container round-trips and invariants."""

import numpy as np
import pytest

from ldpfuse import Collection, Stratum, UserObservations, as_collection


def _two_strata() -> Collection:
    a = Stratum((0, 2), np.array([0, 1, 2]), np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    b = Stratum((1,), np.array([3, 4]), np.array([[7.0], [8.0]]))
    return Collection([a, b], n_services=3)


def test_shapes_and_counts():
    col = _two_strata()
    assert col.n_users == 5
    assert col.strata[0].n_users == 3
    with pytest.raises(ValueError):
        Stratum((0, 1), np.array([0]), np.array([[1.0]]))  # 1 value for 2 services
    with pytest.raises(ValueError):
        Stratum((0, 0), np.array([0]), np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        Collection([Stratum((5,), np.array([0]), np.array([[1.0]]))], n_services=3)


def test_service_view_order():
    col = _two_strata()
    np.testing.assert_allclose(col.service_view(0), [1.0, 3.0, 5.0])
    np.testing.assert_allclose(col.service_view(2), [2.0, 4.0, 6.0])
    np.testing.assert_allclose(col.service_view(1), [7.0, 8.0])
    assert col.service_view(1).shape == (2,)


def test_restrict_drops_empty_users():
    col = _two_strata()
    only0 = col.restrict([0])
    assert only0.n_users == 3
    assert [s.service_ids for s in only0.strata] == [(0,)]
    np.testing.assert_allclose(only0.strata[0].values[:, 0], [1.0, 3.0, 5.0])
    # original user ids survive the projection
    np.testing.assert_array_equal(only0.strata[0].user_ids, [0, 1, 2])
    assert only0.n_services == 3


def test_user_observations_round_trip():
    col = _two_strata()
    users = col.user_observations()
    assert len(users) == 5
    assert users[0].values == [(0, 1.0), (2, 2.0)]
    back = Collection.from_user_observations(users, n_services=3)
    assert back.n_users == col.n_users
    for j in range(3):
        np.testing.assert_allclose(
            np.sort(back.service_view(j)), np.sort(col.service_view(j))
        )


def test_from_user_observations_groups_by_subset():
    users = [
        UserObservations(0, [(1, 0.5), (0, -0.5)]),
        UserObservations(1, [(0, 0.1), (1, 0.2)]),
        UserObservations(2, [(1, 0.9)]),
    ]
    col = Collection.from_user_observations(users)
    assert col.n_services == 2
    subsets = sorted(s.service_ids for s in col.strata)
    assert subsets == [(0, 1), (1,)]
    # service ids are sorted within a stratum regardless of report order
    pair = next(s for s in col.strata if s.service_ids == (0, 1))
    row = pair.values[list(pair.user_ids).index(0)]
    np.testing.assert_allclose(row, [-0.5, 0.5])


def test_duplicate_service_rejected():
    with pytest.raises(ValueError):
        UserObservations(7, [(0, 1.0), (0, 2.0)])


def test_as_collection_passthrough_and_convert():
    col = _two_strata()
    assert as_collection(col) is col
    users = col.user_observations()
    again = as_collection(users, n_services=3)
    assert isinstance(again, Collection)
    assert again.n_users == 5


def test_write_csv(tmp_path):
    col = _two_strata()
    path = tmp_path / "obs.csv"
    col.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "user_id,service_id,perturbed_value"
    assert len(lines) == 1 + 3 * 2 + 2 * 1
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "0"
    assert float(first[2]) == 1.0
