import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.cluster import KMeans

from tagcast.corpus import Post, UserRecord
from tagcast.neighbors import (NeighborError, NeighborSet, averaged_distances, gap_statistic,
                               harvest_neighbor_tags, kmeans, load_distance_matrix,
                               nearest_neighbors, neighbor_sets_to_json, pairwise_distances,
                               random_neighbors, sample_cluster_neighbors, save_distance_matrix,
                               tsne)


def blobs(n_per, centers, spread, seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([c + spread * rng.normal(size=(n_per, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return X, y


def knn_purity(Y, y, k=5):
    D = pairwise_distances(Y)
    np.fill_diagonal(D, np.inf)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    return float((y[nn] == y[:, None]).mean())


# ---------------------------------------------------------------- k-means

def test_kmeans_matches_sklearn_inertia():
    X, _ = blobs(30, np.eye(4) * 10, 0.5, 0)
    ours = kmeans(X, 4, seed=0)
    sk = KMeans(4, n_init=10, random_state=0).fit(X)
    assert ours.inertia == pytest.approx(sk.inertia_, rel=1e-9)


@given(st.integers(5, 40), st.integers(1, 5), st.integers(0, 1000))
def test_kmeans_invariants(n, k, seed):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    m = kmeans(X, k, seed=seed)
    assert set(m.labels) <= set(range(k))
    d = ((X[:, None] - m.centroids[None]) ** 2).sum(-1)
    assert np.array_equal(m.labels, d.argmin(1))
    assert m.inertia == pytest.approx(d.min(1).sum())
    assert m.inertia <= m.inertia_trace[0] + 1e-9


def test_kmeans_rejects_bad_k():
    with pytest.raises(NeighborError):
        kmeans(np.zeros((3, 2)), 4)


def test_gap_statistic_separated_and_single():
    centers = [np.array([0, 0]), np.array([10, 0]), np.array([0, 10]), np.array([10, 10]),
               np.array([5, 5])]
    X, _ = blobs(40, centers, 0.4, 1)
    assert gap_statistic(X, 2, 8, 10, seed=0).chosen_k in (4, 5, 6)
    one = np.random.default_rng(2).normal(size=(100, 2))
    assert gap_statistic(one, 2, 6, 10, seed=0).chosen_k == 2


# ------------------------------------------------------------------ t-SNE

def test_tsne_separates_clusters():
    centers = np.eye(3, 32) * 8
    X, y = blobs(30, centers, 1.0, 3)
    m = tsne(X, iters=500, perplexity=10, seed=0)
    assert knn_purity(m.coords, y) >= 0.95
    assert m.kl_trace[-1] <= m.kl_trace[0]


def test_tsne_deterministic_and_perplexity_check():
    X = np.random.default_rng(0).normal(size=(20, 5))
    a = tsne(X, iters=60, perplexity=4, seed=1).coords
    b = tsne(X, iters=60, perplexity=4, seed=1).coords
    np.testing.assert_array_equal(a, b)
    with pytest.raises(NeighborError):
        tsne(X, perplexity=10)


def test_averaged_distances_symmetric():
    X = np.random.default_rng(0).normal(size=(15, 4))
    D = averaged_distances(X, runs=2, iters=50, perplexity=4)
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)
    np.testing.assert_allclose(D, averaged_distances(X, runs=2, iters=50, perplexity=4, jobs=2))


# -------------------------------------------------------------- neighbors

def test_nearest_neighbors_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(500):
        n = int(rng.integers(2, 12))
        h = int(rng.integers(1, n))
        D = rng.integers(0, 5, size=(n, n)).astype(float)   # many ties
        D = D + D.T
        ids = [f"u{i:02d}" for i in rng.permutation(n)]
        q = ids[int(rng.integers(0, n))]
        qi = ids.index(q)
        brute = sorted((D[qi, j], ids[j]) for j in range(n) if j != qi)[:h]
        got = nearest_neighbors(D, ids, q, h)
        assert got.neighbors == tuple((u, d) for d, u in brute)


def test_nearest_neighbors_errors():
    with pytest.raises(NeighborError):
        nearest_neighbors(np.zeros((2, 2)), ["a", "b"], "c", 1)
    with pytest.raises(NeighborError):
        nearest_neighbors(np.zeros((2, 2)), ["a", "b"], "a", 0)


def test_random_neighbors_excludes_query():
    ids = [f"u{i}" for i in range(10)]
    ns = random_neighbors(ids, "u3", 4, seed=1)
    assert ns.h == 4 and "u3" not in ns.user_ids and len(set(ns.user_ids)) == 4
    assert ns == random_neighbors(ids, "u3", 4, seed=1)


def test_cluster_sampling_drops_small_clusters():
    X = np.array([[0.0], [0.1], [0.2], [9.0], [9.1]])
    m = kmeans(X, 2, seed=0, user_ids=["a", "b", "c", "d", "e"])
    assert sample_cluster_neighbors(m, "d", 2) is None
    ns = sample_cluster_neighbors(m, "a", 2, seed=0)
    assert sorted(ns.user_ids) == ["b", "c"]


def _user(uid, posts):
    return UserRecord(uid, None, tuple(Post(dt.date(2016, 1, d), "some post text", tuple(kw))
                                       for d, kw in posts))


def test_harvest_hand_fixture():
    users = {
        "a": _user("a", [(1, ["Old", "Scan"]), (5, ["Chemo", "Fatigue"]), (9, ["Future"])]),
        "b": _user("b", [(5, ["Nausea", "chemo"]), (3, ["Scans", "Pain"])]),
    }
    got = harvest_neighbor_tags(users, NeighborSet("q", (("b", 1.0), ("a", 2.0))),
                                dt.date(2016, 1, 9), cap=15)
    # newest first; same day by user id then keyword order; b's "chemo" and a's "Scan"
    # duplicate earlier tags; the day-9 post is not strictly before the query
    assert got == ["Chemo", "Fatigue", "Nausea", "Scans", "Pain", "Old"]
    assert harvest_neighbor_tags(users, ["a", "b"], dt.date(2016, 1, 9), cap=2) == got[:2]
    assert harvest_neighbor_tags(users, ["a"], dt.date(2016, 1, 1)) == []


def test_distance_matrix_roundtrip(tmp_path):
    D = np.random.default_rng(0).random((4, 4))
    save_distance_matrix(D, ["a", "b", "c", "d"], tmp_path / "d.bin")
    back, ids = load_distance_matrix(tmp_path / "d.bin")
    np.testing.assert_array_equal(back, D)
    assert ids == ["a", "b", "c", "d"]
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(NeighborError):
        load_distance_matrix(tmp_path / "x.bin")
    with pytest.raises(NeighborError):
        save_distance_matrix(D, ["a"], tmp_path / "y.bin")


def test_neighbor_json_is_sorted():
    s = neighbor_sets_to_json({"b": None, "a": NeighborSet("a", (("b", 0.5),))})
    assert s == '{"a": [["b", 0.5]], "b": null}'
