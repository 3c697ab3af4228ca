import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigident.clustering import (
    DbscanConfig, MappingReport, adjusted_rand_index, auto_eps, clusters_csv, core_mask,
    dbscan, discovery_report, k_distance_curve, map_clusters_to_classes, read_clusters_csv,
    restricted_purity,
)
from sigident.embedding import TsneConfig
from sigident.features import FeatureMatrix


# ---------------------------------------------------------------- oracles

def dbscan_oracle(points, eps, min_pts):
    """Brute-force density clustering by union-find over core pairs."""
    n = len(points)
    near = [[j for j in range(n) if np.sum((points[i] - points[j]) ** 2) <= eps * eps] for i in range(n)]
    core = [len(nb) >= min_pts for nb in near]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        if core[i]:
            for j in near[i]:
                if core[j]:
                    a, b = find(i), find(j)
                    parent[max(a, b)] = min(a, b)
    labels = [-1] * n
    number = {}
    for i in range(n):
        if core[i]:
            root = find(i)
            if root not in number:
                number[root] = len(number)
            labels[i] = number[root]
    for i in range(n):
        if not core[i]:
            cores = [j for j in near[i] if core[j]]
            if cores:
                labels[i] = labels[min(cores)]
    return np.array(labels)


def ari_oracle(a, b):
    """Pair-counting ARI from an explicit O(N^2) loop over pairs."""
    keep = [i for i in range(len(a)) if a[i] >= 0 and b[i] >= 0]
    both = sa = sb = 0
    pairs = 0
    for i, j in itertools.combinations(keep, 2):
        pairs += 1
        same_a, same_b = a[i] == a[j], b[i] == b[j]
        sa += same_a
        sb += same_b
        both += same_a and same_b
    expected = sa * sb / pairs
    return (both - expected) / ((sa + sb) / 2 - expected)


def same_partition(a, b):
    """Equal up to cluster relabeling with identical noise sets."""
    a, b = np.asarray(a), np.asarray(b)
    if not np.array_equal(a < 0, b < 0):
        return False
    pairs = set(zip(a[a >= 0].tolist(), b[b >= 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def blobs(centers, per, spread, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    pts = np.concatenate([c + spread * rng.standard_normal((per, centers.shape[1])) for c in centers])
    return pts, np.repeat(np.arange(len(centers)), per)


# ---------------------------------------------------------------- dbscan

def test_single_point_is_noise():
    assert dbscan(np.zeros((1, 2)), 1.0, 2).tolist() == [-1]


def test_two_blobs_two_clusters_no_noise():
    pts, truth = blobs([[0, 0], [20, 0]], 30, 0.5, seed=0)
    labels = dbscan(pts, 2.0, 5)
    assert np.array_equal(labels, dbscan_oracle(pts, 2.0, 5))
    assert set(labels.tolist()) == {0, 1}
    assert same_partition(labels, truth)


def test_identical_points_single_cluster():
    assert dbscan(np.ones((7, 3)), 0.1, 7).tolist() == [0] * 7


def test_eps_is_inclusive():
    pts = np.array([[0.0], [1.0]])
    assert dbscan(pts, 1.0, 2).tolist() == [0, 0]
    assert dbscan(pts, 0.999, 2).tolist() == [-1, -1]


def test_border_point_takes_lowest_index_core():
    # point 1 at x=0 touches cores of two separate clusters
    pts = np.array([[1.0], [0.0], [-1.0], [-1.05], [-1.1], [-1.15], [1.05], [1.1], [1.15]])
    labels = dbscan(pts, 1.0, 4)
    core = core_mask(pts, 1.0, 4)
    assert not core[1] and core[0] and core[2]
    assert labels[0] != labels[2]
    assert labels[1] == labels[0]
    flipped = pts[[2, 1, 0, 3, 4, 5, 6, 7, 8]]
    lab2 = dbscan(flipped, 1.0, 4)
    assert lab2[1] == lab2[0] and lab2[0] != lab2[2]


@pytest.mark.parametrize("kwargs", [{"eps": 0.0}, {"eps": -1.0}, {"min_pts": 0}])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        DbscanConfig(**kwargs)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        dbscan(np.zeros((0, 2)), 1.0, 2)


def test_matches_bruteforce_oracle_on_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        d = int(rng.integers(1, 5))
        pts = rng.uniform(0, 10, (n, d))
        eps = float(rng.uniform(0.5, 3.0))
        min_pts = int(rng.integers(2, 7))
        assert np.array_equal(dbscan(pts, eps, min_pts), dbscan_oracle(pts, eps, min_pts))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_keeps_cores_and_noise(seed):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(0, 6, (40, 2)), 1)
    perm = rng.permutation(40)
    a = dbscan(pts, 1.0, 4)
    b = dbscan(pts[perm], 1.0, 4)[np.argsort(perm)]
    assert np.array_equal(a < 0, b < 0)
    core = core_mask(pts, 1.0, 4)
    # the partition of core points never depends on order
    assert same_partition(a[core], b[core])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_every_clustered_point_is_density_reachable(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 5, (50, 2))
    labels = dbscan(pts, 0.8, 4)
    core = core_mask(pts, 0.8, 4)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    for i in range(len(pts)):
        near_core = core & (d[i] <= 0.8)
        if labels[i] == -1:
            assert not core[i] and not near_core.any()
        else:
            assert core[i] or near_core.any()
            assert (labels[near_core] == labels[i]).any() or core[i]


# ---------------------------------------------------------------- k-distance / eps

def test_k_distance_lattice():
    pts = np.arange(10, dtype=float)[:, None]
    assert np.allclose(k_distance_curve(pts, 1), 1.0)


def test_k_distance_matches_naive_oracle():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((100, 3))
    k = 4
    naive = []
    for i in range(100):
        ds = sorted(float(np.linalg.norm(pts[i] - pts[j])) for j in range(100) if j != i)
        naive.append(ds[k - 1])
    curve = k_distance_curve(pts, k)
    assert np.allclose(curve, sorted(naive), atol=1e-9)
    assert np.all(np.diff(curve) >= 0)


def test_k_distance_requires_more_points_than_k():
    with pytest.raises(ValueError):
        k_distance_curve(np.zeros((3, 2)), 3)


def test_auto_eps_separates_blobs_from_gap():
    pts, truth = blobs([[0, 0], [30, 0], [0, 30]], 100, 0.5, seed=2)
    eps = auto_eps(pts, 5)
    assert 0 < eps < 10
    assert same_partition(dbscan(pts, eps, 5)[dbscan(pts, eps, 5) >= 0],
                          truth[dbscan(pts, eps, 5) >= 0])


def test_auto_eps_positive_for_duplicates():
    assert auto_eps(np.zeros((20, 2)), 3) > 0


# ---------------------------------------------------------------- ARI

def test_ari_identical_is_one():
    a = np.array([0, 0, 1, 1, 2])
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, a + 7) == 1.0


def test_ari_matches_pair_loop_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rng.integers(0, 4, 20)
        b = rng.integers(-1, 3, 20)
        assert adjusted_rand_index(a, b) == pytest.approx(ari_oracle(a, b), abs=1e-12)


def test_ari_random_partitions_near_zero():
    rng = np.random.default_rng(0)
    vals = [adjusted_rand_index(rng.integers(0, 4, 1000), rng.integers(0, 4, 1000)) for _ in range(50)]
    assert abs(np.mean(vals)) <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=4, max_size=30), st.integers(0, 1000))
def test_ari_symmetric(a, seed):
    b = np.random.default_rng(seed).integers(0, 3, len(a))
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-12)


def test_ari_length_mismatch():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0])


# ---------------------------------------------------------------- purity / mapping

def test_purity_perfect():
    truth = np.array([3, 3, 5, 5, 7])
    rep = map_clusters_to_classes(np.array([1, 1, 0, 0, 2]), truth)
    assert rep.purity == 1.0 and rep.mapping == {0: 5, 1: 3, 2: 7}


def test_purity_direct_count():
    rep = map_clusters_to_classes(np.zeros(10, dtype=int), np.array([0] * 6 + [1] * 4))
    assert rep.purity == pytest.approx(0.6)


def test_several_to_one_mapping():
    rep = map_clusters_to_classes(np.array([0, 0, 0, 1, 1, 1]), np.array([2, 2, 4, 2, 2, 4]))
    assert rep.mapping == {0: 2, 1: 2}
    assert rep.discovered_cluster_count == 2


def test_noise_excluded_from_purity():
    rep = map_clusters_to_classes(np.array([-1, -1, 0, 0]), np.array([1, 2, 3, 3]))
    assert rep.purity == 1.0 and rep.noise_fraction == 0.5


def test_all_noise_flags_purity_undefined():
    rep = map_clusters_to_classes(np.full(5, -1), np.arange(5))
    assert not rep.purity_defined and rep.discovered_cluster_count == 0
    assert json.loads(rep.to_json())["purity"] is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_purity_bounds(seed):
    rng = np.random.default_rng(seed)
    clusters = rng.integers(-1, 5, 60)
    truth = rng.integers(0, 4, 60)
    rep = map_clusters_to_classes(clusters, truth)
    if rep.purity_defined:
        assert 1 / 4 - 1e-12 <= rep.purity <= 1.0
        assert sum(sum(r) for r in rep.confusion) == int(np.sum(clusters >= 0))


def test_restricted_purity():
    clusters = np.array([0, 0, 0, 0, 1, 1])
    truth = np.array([9, 9, 1, 1, 2, 2])
    assert map_clusters_to_classes(clusters, truth).purity == pytest.approx(4 / 6)
    assert restricted_purity(clusters, truth, [9, 2]) == 1.0
    assert restricted_purity(clusters, truth, [9, 1]) == pytest.approx(0.5)


def test_report_json_round_trip():
    rep = map_clusters_to_classes(np.array([0, 0, 1, -1]), np.array([4, 4, 1, 1]))
    rep.eps, rep.min_pts = 0.25, 5
    back = MappingReport.from_json(rep.to_json())
    assert back == rep
    assert json.loads(rep.to_json())["class_names"] == ["QPSK", "QAM64"]


def test_clusters_csv_round_trip(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(clusters_csv(np.array([4, 8, 9]), np.array([0, -1, 1])))
    assert p.read_text().startswith("# format_version=1\n")
    ids, cl = read_clusters_csv(p)
    assert ids.tolist() == [4, 8, 9] and cl.tolist() == [0, -1, 1]


def test_clusters_csv_rejects_garbage(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,cluster\n1,x\n")
    with pytest.raises(ValueError):
        read_clusters_csv(p)


# ---------------------------------------------------------------- end to end

def _blob_features(seed):
    pts, truth = blobs(np.eye(3) * 12, 60, 1.0, seed)
    pts = np.hstack([pts, np.random.default_rng(seed).standard_normal((len(pts), 5))])
    return FeatureMatrix(values=pts.astype(np.float32), labels=truth, snrs=np.zeros(len(pts), dtype=np.int64),
                         ids=np.arange(len(pts)))


@pytest.fixture(scope="module")
def blob_discovery():
    return discovery_report(_blob_features(0), TsneConfig(perplexity=20, seed=0), DbscanConfig())


def test_discovery_finds_three_pure_clusters(blob_discovery):
    rep = blob_discovery.report
    assert rep.discovered_cluster_count == 3
    assert rep.purity > 0.95


def test_shuffled_labels_control(blob_discovery):
    fm = _blob_features(0)
    shuffled = np.random.default_rng(1).permutation(fm.labels)
    res = discovery_report(fm, embedding=blob_discovery.embedding, truth=shuffled, dbscan_config=DbscanConfig())
    assert res.report.discovered_cluster_count == blob_discovery.report.discovered_cluster_count
    assert abs(res.report.ari) < 0.1
