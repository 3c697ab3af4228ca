"""DBSCAN class discovery and cluster-to-class scoring."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import comb

from .embedding import EmbeddingResult, TsneConfig, tsne
from .features import FeatureMatrix
from .io import CSV_PREAMBLE, read_csv
from .synth import MODULATIONS

REPORT_VERSION = 1


@dataclass
class DbscanConfig:
    eps: float | str = "auto"
    min_pts: int = 5

    def __post_init__(self):
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.eps != "auto":
            self.eps = float(self.eps)
            if not self.eps > 0:
                raise ValueError("eps must be > 0 or 'auto'")


def _neighbor_lists(points, eps, block=1024):
    """Indices within ``eps`` (inclusive, self included) for every point."""
    pts = np.asarray(points, dtype=np.float64)
    sq = np.sum(pts * pts, axis=1)
    eps2 = eps * eps
    out = []
    for start in range(0, len(pts), block):
        blk = pts[start : start + block]
        d2 = np.sum((blk[:, None, :] - pts[None, :, :]) ** 2, axis=2) if pts.shape[1] <= 3 else (
            sq[start : start + block, None] + sq[None, :] - 2.0 * blk @ pts.T
        )
        for row in d2:
            out.append(np.flatnonzero(row <= eps2))
    return out


def dbscan(points, eps: float, min_pts: int = 5) -> np.ndarray:
    """Density clustering; returns labels with -1 for noise and clusters 0..C-1.

    A core point has at least ``min_pts`` points (itself included) within
    ``eps``. Clusters are the connected components of core points, numbered
    in order of their lowest-index core. A border point joins the cluster of
    its lowest-index core neighbor.
    """
    DbscanConfig(eps=eps, min_pts=min_pts)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 1:
        raise ValueError("points must be a non-empty (N, d) array")
    n = len(points)
    nbrs = _neighbor_lists(points, float(eps))
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in nbrs[j]:
                if core[k] and labels[k] == -1:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    for i in np.flatnonzero(~core):
        cores = nbrs[i][core[nbrs[i]]]
        if len(cores):
            labels[i] = labels[cores.min()]
    return labels


def core_mask(points, eps, min_pts):
    return np.array([len(nb) >= min_pts for nb in _neighbor_lists(points, float(eps))])


def k_distance_curve(points, k: int) -> np.ndarray:
    """Ascending distances from each point to its k-th nearest other point."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1 or n <= k:
        raise ValueError(f"need N > k >= 1 (N={n}, k={k})")
    sq = np.sum(points * points, axis=1)
    kth = np.empty(n)
    for start in range(0, n, 1024):
        blk = points[start : start + 1024]
        d2 = sq[start : start + 1024, None] + sq[None, :] - 2.0 * blk @ points.T
        d2[np.arange(len(blk)), np.arange(start, start + len(blk))] = np.inf
        kth[start : start + len(blk)] = np.partition(d2, k - 1, axis=1)[:, k - 1]
    return np.sort(np.sqrt(np.maximum(kth, 0.0)))


def auto_eps(points, k: int) -> float:
    """Elbow of the k-distance curve: largest second difference after smoothing.

    The curve is smoothed with a centered moving average whose width grows
    with N (about 2% of the points, at least 1).
    """
    curve = k_distance_curve(points, k)
    n = len(curve)
    if n < 3:
        return float(curve[-1]) if curve[-1] > 0 else 1.0
    w = max(1, n // 50) | 1
    if w > 1:
        kernel = np.ones(w) / w
        smooth = np.convolve(np.pad(curve, w // 2, mode="edge"), kernel, mode="valid")
    else:
        smooth = curve
    d2 = smooth[2:] - 2 * smooth[1:-1] + smooth[:-2]
    eps = float(smooth[1 + int(np.argmax(d2))])
    if eps <= 0:
        positive = curve[curve > 0]
        eps = float(positive[0]) if len(positive) else 1.0
    return eps


# ---------------------------------------------------------------- scoring

def adjusted_rand_index(a, b) -> float:
    """Pair-counting ARI; positions where either labeling is negative are skipped."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal length")
    keep = (a >= 0) & (b >= 0)
    a, b = a[keep], b[keep]
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_ij = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        # both partitions trivial (one block or all singletons)
        return 1.0 if sum_a == sum_b == sum_ij else 0.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class MappingReport:
    mapping: dict
    purity: float
    ari: float
    discovered_cluster_count: int
    noise_fraction: float
    confusion: list
    classes: list
    purity_defined: bool = True
    eps: float | None = None
    min_pts: int | None = None
    format_version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping"] = {str(k): v for k, v in self.mapping.items()}
        d["purity"] = None if not self.purity_defined else self.purity
        d["class_names"] = [MODULATIONS[c] if 0 <= c < len(MODULATIONS) else str(c) for c in self.classes]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MappingReport":
        d = dict(d)
        d.pop("class_names", None)
        d["mapping"] = {int(k): v for k, v in d["mapping"].items()}
        if d["purity"] is None:
            d["purity"] = float("nan")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MappingReport":
        return cls.from_dict(json.loads(text))


def map_clusters_to_classes(clusters, truth) -> MappingReport:
    """Majority-class map per cluster, purity over non-noise points, and ARI.

    Several clusters may map to the same class. Majority ties go to the
    smallest class id. When every point is noise, ``purity_defined`` is False.
    """
    clusters = np.asarray(clusters, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if clusters.shape != truth.shape:
        raise ValueError("clusters and truth must have equal length")
    classes = sorted(set(truth.tolist()))
    cidx = {c: i for i, c in enumerate(classes)}
    ids = sorted(set(clusters[clusters >= 0].tolist()))
    conf = np.zeros((len(ids), len(classes)), dtype=np.int64)
    for row, cl in enumerate(ids):
        members = truth[clusters == cl]
        for c in members.tolist():
            conf[row, cidx[c]] += 1
    mapping = {cl: classes[int(np.argmax(conf[row]))] for row, cl in enumerate(ids)}
    non_noise = int(conf.sum())
    n = len(clusters)
    defined = non_noise > 0
    purity = float(conf.max(axis=1).sum() / non_noise) if defined else float("nan")
    return MappingReport(
        mapping=mapping,
        purity=purity,
        ari=adjusted_rand_index(clusters, truth) if defined else 0.0,
        discovered_cluster_count=len(ids),
        noise_fraction=float(np.mean(clusters < 0)) if n else 0.0,
        confusion=conf.tolist(),
        classes=classes,
        purity_defined=defined,
    )


def per_class_purity(clusters, truth) -> dict:
    """For each true class: share of its non-noise points whose cluster maps to it."""
    clusters = np.asarray(clusters)
    truth = np.asarray(truth)
    mapping = map_clusters_to_classes(clusters, truth).mapping
    out = {}
    for c in sorted(set(truth.tolist())):
        sel = (truth == c) & (clusters >= 0)
        hits = [mapping[k] == c for k in clusters[sel].tolist()]
        out[c] = float(np.mean(hits)) if hits else 0.0
    return out


def restricted_purity(clusters, truth, classes) -> float:
    """Purity of the clustering restricted to points of ``classes``.

    The cluster map is recomputed on the restricted points, so an analog
    class sharing a cluster with a digital class is not penalized here
    unless another restricted class shares it too.
    """
    truth = np.asarray(truth)
    sel = np.isin(truth, list(classes))
    return map_clusters_to_classes(np.asarray(clusters)[sel], truth[sel]).purity


@dataclass
class DiscoveryResult:
    report: MappingReport
    embedding: EmbeddingResult
    clusters: np.ndarray
    eps: float = field(default=0.0)

    def clusters_csv(self) -> str:
        return clusters_csv(self.embedding.ids, self.clusters)


def clusters_csv(ids, clusters) -> str:
    """``id,cluster`` rows; noise is -1. ``ids`` None means row numbers."""
    clusters = np.asarray(clusters)
    ids = np.arange(len(clusters)) if ids is None else np.asarray(ids)
    return CSV_PREAMBLE + "id,cluster\n" + "".join(f"{i},{c}\n" for i, c in zip(ids.tolist(), clusters.tolist()))


def read_clusters_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """(ids, clusters) from an ``id,cluster`` CSV."""
    header, rows = read_csv(path)
    if header[:2] != ["id", "cluster"]:
        raise ValueError(f"{path}: expected header id,cluster")
    try:
        ids = np.array([int(r["id"]) for r in rows], dtype=np.int64)
        cl = np.array([int(r["cluster"]) for r in rows], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed cluster row") from exc
    return ids, cl


def cluster_points(points, config: DbscanConfig) -> tuple[np.ndarray, float]:
    eps = auto_eps(points, config.min_pts) if config.eps == "auto" else float(config.eps)
    return dbscan(points, eps, config.min_pts), eps


def discovery_report(features: FeatureMatrix, tsne_config: TsneConfig | None = None,
                     dbscan_config: DbscanConfig | None = None, truth=None,
                     cluster_space: str = "embedding", embedding: EmbeddingResult | None = None
                     ) -> DiscoveryResult:
    """Embed, cluster, map clusters to classes and score against ``truth``.

    ``truth`` defaults to the feature rows' labels. Set ``cluster_space`` to
    ``"features"`` to run DBSCAN on the raw features instead of the 2-D map.
    """
    dbscan_config = dbscan_config or DbscanConfig()
    emb = embedding if embedding is not None else tsne(features, tsne_config)
    space = emb.points if cluster_space == "embedding" else np.asarray(features.values, dtype=np.float64)
    labels, eps = cluster_points(space, dbscan_config)
    truth = features.labels if truth is None else np.asarray(truth)
    report = map_clusters_to_classes(labels, truth)
    report.eps, report.min_pts = eps, dbscan_config.min_pts
    return DiscoveryResult(report, emb, labels, eps)
