"""Exact t-SNE and a PCA baseline for 2-D views of feature matrices."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import FeatureMatrix
from .io import CSV_PREAMBLE, fmt_float, read_csv
from .synth import MODULATIONS

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
Q_FLOOR = 1e-12


class EmbeddingError(RuntimeError):
    pass


# ---------------------------------------------------------------- PCA

@dataclass
class PCAResult:
    points: np.ndarray
    components: np.ndarray  # (d, D), rows ordered by decreasing variance
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    mean: np.ndarray

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, Z):
        return np.asarray(Z) @ self.components + self.mean


def pca(X, d: int = 2) -> PCAResult:
    """Project mean-centered rows onto the top-``d`` covariance eigenvectors.

    Each component's sign is fixed so its largest-magnitude loading is
    positive, which makes the projection deterministic.
    """
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    n, dim = X.shape
    if not 1 <= d <= min(n, dim):
        raise ValueError(f"d must lie in [1, {min(n, dim)}], got {d}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(dim)])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    comps = evecs[:, :d].T
    total = evals.sum()
    ratio = evals[:d] / total if total > 0 else np.zeros(d)
    return PCAResult(Xc @ comps.T, comps, evals[:d], ratio, mean)


# ---------------------------------------------------------------- affinities

def pairwise_sq_dists(X) -> np.ndarray:
    """Squared Euclidean distances; symmetric with an exact zero diagonal."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    D = (D + D.T) / 2.0
    np.fill_diagonal(D, 0.0)
    return D


def _row_stats(Drow, beta):
    # Drow is shifted so its minimum is 0; returns (P, perplexity)
    W = np.exp(-Drow * beta[:, None])
    s = W.sum(axis=1)
    P = W / s[:, None]
    H = np.log(s) + beta * np.sum(Drow * P, axis=1)
    return P, np.exp(H)


def perplexity_calibration(D, perplexity: float, tol: float = 1e-5, max_iter: int = 64) -> np.ndarray:
    """Conditional affinities P(j|i) whose per-row perplexity hits the target.

    Gaussian precisions are found per row by bisection in log-precision. Rows
    that miss the target by more than 1e-4 after ``max_iter`` steps raise
    :class:`EmbeddingError`.
    """
    D = np.asarray(D, dtype=np.float64)
    n = len(D)
    if n < 2:
        raise ValueError("need at least 2 points")
    if not 1.0 <= perplexity <= n - 1:
        raise ValueError(f"perplexity must lie in [1, {n - 1}]")
    off = ~np.eye(n, dtype=bool)
    Doff = D[off].reshape(n, n - 1)
    Doff = Doff - Doff.min(axis=1, keepdims=True)
    scale = Doff.mean(axis=1)
    beta = 1.0 / np.where(scale > 0, scale, 1.0)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    P = np.empty_like(Doff)
    perp = np.empty(n)
    active = np.arange(n)
    for _ in range(max_iter):
        Pa, pa = _row_stats(Doff[active], beta[active])
        P[active], perp[active] = Pa, pa
        err = pa - perplexity
        done = np.abs(err) < tol
        active_next = active[~done]
        err = err[~done]
        if len(active_next) == 0:
            active = active_next
            break
        b = beta[active_next]
        too_flat = err > 0  # perplexity too high: sharpen (raise beta)
        lo[active_next] = np.where(too_flat, b, lo[active_next])
        hi[active_next] = np.where(too_flat, hi[active_next], b)
        l, h = lo[active_next], hi[active_next]
        beta[active_next] = np.where(
            np.isinf(h), b * 2.0, np.where(np.isinf(l), b / 2.0, np.sqrt(l * h))
        )
        active = active_next
    if len(active):
        Pa, pa = _row_stats(Doff[active], beta[active])
        P[active], perp[active] = Pa, pa
        bad = active[np.abs(pa - perplexity) > 1e-4]
        if len(bad):
            raise EmbeddingError(
                f"perplexity calibration did not converge for row {int(bad[0])} "
                f"(perplexity {perp[bad[0]]:.6f} vs target {perplexity})"
            )
    out = np.zeros((n, n))
    out[off] = P.ravel()
    return out


def row_perplexity(P) -> np.ndarray:
    """exp of each row's Shannon entropy (nats), i.e. 2**H in bits."""
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(P > 0, P * np.log(P), 0.0), axis=1)
    return np.exp(H)


def symmetrize(P) -> np.ndarray:
    """Joint affinities (P + P^T) / 2N with off-diagonals floored, summing to 1."""
    P = np.asarray(P, dtype=np.float64)
    n = len(P)
    J = (P + P.T) / (2.0 * n)
    off = ~np.eye(n, dtype=bool)
    J[off] = np.maximum(J[off], P_FLOOR)
    J /= J.sum()
    return J


# ---------------------------------------------------------------- objective

def student_t_kernel(Y) -> np.ndarray:
    K = 1.0 / (1.0 + pairwise_sq_dists(Y))
    np.fill_diagonal(K, 0.0)
    return K


def kl_divergence(P, Y) -> float:
    """KL(P || Q) with Student-t Q; both floored, diagonal excluded."""
    P = np.asarray(P, dtype=np.float64)
    K = student_t_kernel(Y)
    Q = K / K.sum()
    off = ~np.eye(len(P), dtype=bool)
    p = np.maximum(P[off], P_FLOOR)
    q = np.maximum(Q[off], Q_FLOOR)
    return float(np.sum(p * np.log(p / q)))


def kl_gradient(P, Y, work=None) -> np.ndarray:
    """d KL(P || Q) / dY = 4 sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2).

    ``work`` may hold two preallocated (N, N) float64 buffers for reuse
    across iterations.
    """
    n = len(Y)
    K, W = work if work is not None else (np.empty((n, n)), np.empty((n, n)))
    np.subtract.outer(Y[:, 0], Y[:, 0], out=K)
    K *= K
    np.subtract.outer(Y[:, 1], Y[:, 1], out=W)
    W *= W
    K += W
    K += 1.0
    np.reciprocal(K, out=K)
    np.fill_diagonal(K, 0.0)
    total = K.sum()
    np.multiply(P, K, out=W)
    K *= K
    K *= 1.0 / total
    W -= K
    return 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)


# ---------------------------------------------------------------- t-SNE

@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration_factor: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0
    init_std: float = 1e-4
    kl_every: int = 50
    max_points: int = 5000
    pca_dims: int | None = None
    min_gain: float = 0.01

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.perplexity <= 1:
            raise ValueError("perplexity must exceed 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmbeddingResult:
    points: np.ndarray
    kl_history: list = field(default_factory=list)  # (iteration, KL) pairs
    config: dict = field(default_factory=dict)
    ids: np.ndarray | None = None
    labels: np.ndarray | None = None
    snrs: np.ndarray | None = None
    method: str = "tsne"

    def kl_at(self, iteration: int) -> float:
        for it, kl in self.kl_history:
            if it == iteration:
                return kl
        raise KeyError(iteration)

    def to_csv(self) -> str:
        n = len(self.points)
        ids = self.ids if self.ids is not None else np.arange(n)
        rows = [CSV_PREAMBLE + "id,x,y,class,snr"]
        for i in range(n):
            cls = MODULATIONS[self.labels[i]] if self.labels is not None else ""
            snr = int(self.snrs[i]) if self.snrs is not None else ""
            rows.append(f"{ids[i]},{fmt_float(self.points[i, 0])},{fmt_float(self.points[i, 1])},{cls},{snr}")
        return "\n".join(rows) + "\n"

    def kl_csv(self) -> str:
        return CSV_PREAMBLE + "iteration,kl\n" + "".join(f"{it},{fmt_float(kl)}\n" for it, kl in self.kl_history)


def _meta(X):
    if isinstance(X, FeatureMatrix):
        return X.values, dict(ids=X.ids, labels=X.labels, snrs=X.snrs)
    return X, {}


def tsne(X, config: TsneConfig | None = None) -> EmbeddingResult:
    """Exact (all-pairs) t-SNE to 2-D.

    Gradient descent with momentum and per-coordinate adaptive gains, early
    exaggeration of P, and a seeded N(0, init_std^2) start. KL divergence
    against the unexaggerated P is logged every ``kl_every`` iterations and
    at the last one.
    """
    cfg = config or TsneConfig()
    values, meta = _meta(X)
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 10:
        raise ValueError("t-SNE needs at least 10 points")
    if n > cfg.max_points:
        raise ValueError(f"{n} points exceeds the exact t-SNE cap of {cfg.max_points}")
    if not 1.0 < cfg.perplexity < (n - 1) / 3.0:
        raise ValueError(f"perplexity {cfg.perplexity} infeasible for N={n}; need < {(n - 1) / 3:.2f}")
    if cfg.pca_dims and cfg.pca_dims < values.shape[1]:
        values = pca(values, min(cfg.pca_dims, n)).points

    P = symmetrize(perplexity_calibration(pairwise_sq_dists(values), cfg.perplexity))
    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, cfg.init_std, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    P_exag = P * cfg.early_exaggeration_factor
    work = (np.empty((n, n)), np.empty((n, n)))
    for it in range(cfg.iterations):
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        grad = kl_gradient(P_exag if it < cfg.exaggeration_iters else P, Y, work)
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        update = mom * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        step = it + 1
        if step % cfg.kl_every == 0 or step == cfg.iterations:
            if not np.all(np.isfinite(Y)):
                raise EmbeddingError(f"non-finite embedding at iteration {step}")
            kl = kl_divergence(P, Y)
            history.append((step, kl))
            log.debug("t-SNE iteration %d KL %.5f", step, kl)
    if not np.all(np.isfinite(Y)):
        raise EmbeddingError(f"non-finite embedding at iteration {cfg.iterations}")
    return EmbeddingResult(Y, history, cfg.to_dict(), method="tsne", **meta)


def pca_embedding(X, seed: int = 0) -> EmbeddingResult:
    values, meta = _meta(X)
    res = pca(values, 2)
    cfg = {"method": "pca", "explained_ratio": res.explained_ratio.tolist()}
    return EmbeddingResult(res.points, [], cfg, method="pca", **meta)


def read_embedding_csv(path) -> EmbeddingResult:
    """Parse an ``id,x,y,class,snr`` CSV written by :meth:`EmbeddingResult.to_csv`."""
    from .synth import class_id

    ids, pts, labels, snrs = [], [], [], []
    header, rows = read_csv(path)
    if header[:3] != ["id", "x", "y"]:
        raise ValueError(f"{path}: expected header id,x,y,class,snr")
    for row in rows:
        try:
            ids.append(int(row["id"]))
            pts.append((float(row["x"]), float(row["y"])))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed row {row}") from exc
        if row.get("class"):
            labels.append(class_id(row["class"]))
        if row.get("snr"):
            snrs.append(int(row["snr"]))
    n = len(ids)
    return EmbeddingResult(
        np.array(pts, dtype=np.float64).reshape(n, 2),
        ids=np.array(ids, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64) if len(labels) == n and n else None,
        snrs=np.array(snrs, dtype=np.int64) if len(snrs) == n and n else None,
    )
