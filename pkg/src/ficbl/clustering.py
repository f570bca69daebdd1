"""Embedding clustering: seeded k-means++ and diagonal-covariance EM.

Both fits are deterministic given their seed.  Assignment is always hard
(nearest center, or arg-max responsibility) because the downstream
frequency tables count whole embeddings; ties break to the smallest
cluster index.  Cluster indices are 1-based everywhere outside this
module's internal arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

KMEANS = "kmeans"
GMM = "em"

VARIANCE_FLOOR = 1e-6
_KMEANS_TOL = 1e-6
_KMEANS_MAX_ITER = 300
_EM_TOL = 1e-6
_EM_MAX_ITER = 200


@dataclass(frozen=True)
class ClusterModel:
    kind: str
    centers: np.ndarray                      # (R, d); GMM means live here too
    weights: np.ndarray | None = None        # (R,), GMM only
    variances: np.ndarray | None = None      # (R, d), GMM only, floored
    objective_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind not in (KMEANS, GMM):
            raise NumericError(f"unknown cluster model kind {self.kind!r}")
        if self.r < 1:
            raise NumericError("need at least one cluster")
        if self.kind == GMM:
            if self.weights is None or self.variances is None:
                raise NumericError("a mixture model needs weights and variances")
            if abs(float(self.weights.sum()) - 1.0) > 1e-9:
                raise NumericError("mixture weights must sum to 1")
            if np.any(self.variances < VARIANCE_FLOOR - 1e-12):
                raise NumericError("mixture variances fell below the floor")

    @property
    def r(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp_init(points: np.ndarray, r: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((r, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for k in range(1, r):
        total = closest.sum()
        if total <= 0:
            centers[k] = points[rng.integers(n)]
        else:
            cumulative = np.cumsum(closest / total)
            centers[k] = points[np.searchsorted(cumulative, rng.random())]
        closest = np.minimum(closest, np.sum((points - centers[k]) ** 2, axis=1))
    return centers


def fit_kmeans(embeddings, r: int, seed: int = 0) -> ClusterModel:
    """Lloyd iterations from a k-means++ start; empty clusters re-seeded."""
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < r:
        raise NumericError(f"need at least {r} embeddings to fit {r} clusters")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, r, rng)
    trace = []
    for _ in range(_KMEANS_MAX_ITER):
        dist = _pairwise_sq(points, centers)
        labels = np.argmin(dist, axis=1)
        # an empty cluster takes over the point farthest from its own center
        for k in range(r):
            if not np.any(labels == k):
                worst = int(np.argmax(dist[np.arange(len(points)), labels]))
                centers[k] = points[worst]
                labels[worst] = k
                dist = _pairwise_sq(points, centers)
        trace.append(float(np.sum(dist[np.arange(len(points)), labels])))
        new_centers = np.array(
            [points[labels == k].mean(axis=0) for k in range(r)]
        )
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < _KMEANS_TOL:
            break
    return ClusterModel(KMEANS, centers, objective_trace=tuple(trace))


def _log_gaussian(points: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """log N(x | mu_k, diag(var_k)) for every point/component pair: (n, R).

    The Mahalanobis term expands into three matrix products, avoiding the
    (n, R, d) temporary a broadcast difference would allocate.
    """
    d = points.shape[1]
    log_det = np.sum(np.log(variances), axis=1)
    inv = 1.0 / variances
    maha = (
        (points * points) @ inv.T
        - 2.0 * points @ (means * inv).T
        + np.sum(means * means * inv, axis=1)[None, :]
    )
    return -0.5 * (d * np.log(2.0 * np.pi) + log_det[None, :] + maha)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    return (amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))).squeeze(axis)


def fit_em_gmm(embeddings, r: int, seed: int = 0) -> ClusterModel:
    """Diagonal-covariance mixture fit by EM, initialized from k-means."""
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < r:
        raise NumericError(f"need at least {r} embeddings to fit {r} clusters")
    n, d = points.shape
    start = fit_kmeans(points, r, seed)
    labels = np.argmin(_pairwise_sq(points, start.centers), axis=1)
    weights = np.array([(labels == k).sum() / n for k in range(r)])
    weights = np.maximum(weights, 1e-12)
    weights /= weights.sum()
    means = start.centers.copy()
    variances = np.empty((r, d))
    for k in range(r):
        member = points[labels == k]
        variances[k] = member.var(axis=0) if member.size else points.var(axis=0)
    variances = np.maximum(variances, VARIANCE_FLOOR)

    trace = []
    prev_ll = -np.inf
    for _ in range(_EM_MAX_ITER):
        log_joint = np.log(weights)[None, :] + _log_gaussian(points, means, variances)
        log_norm = _logsumexp(log_joint, axis=1)
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        weights /= weights.sum()
        means = (resp.T @ points) / nk[:, None]
        second = (resp.T @ (points * points)) / nk[:, None]
        variances = np.maximum(second - means * means, VARIANCE_FLOOR)
        if ll - prev_ll < _EM_TOL and np.isfinite(prev_ll):
            break
        prev_ll = ll
    return ClusterModel(GMM, means, weights, variances, objective_trace=tuple(trace))


def assign(model: ClusterModel, embedding: np.ndarray) -> int:
    """Hard cluster index in 1..R for one embedding."""
    return int(assign_batch(model, np.asarray(embedding, dtype=np.float64)[None, :])[0])


def assign_batch(model: ClusterModel, embeddings: np.ndarray) -> np.ndarray:
    """Pointwise hard assignment of many embeddings; 1-based indices."""
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise NumericError(
            f"embeddings of dimension {points.shape[-1]} do not match model dimension {model.dim}"
        )
    if model.kind == KMEANS:
        score = -_pairwise_sq(points, model.centers)
    else:
        score = np.log(model.weights)[None, :] + _log_gaussian(
            points, model.centers, model.variances
        )
    # argmax keeps the first (smallest) index on exact ties
    return np.argmax(score, axis=1).astype(np.int64) + 1
