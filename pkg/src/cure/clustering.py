"""K-means (and an EM mixture-model alternative) over embeddings, plus the
farthest-cluster mapping used to build pseudo-labels for forget samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ClusteringError
from .model import ModelSnapshot, extract_embeddings

MAX_ITER = 300
CONVERGENCE_TOL = 1e-6  # max centroid displacement


@dataclass
class ClusterModel:
    """Fitted centroids plus the hard assignment of the fitted points.

    Centroid arrays are sealed read-only after fitting; retain-side models
    stay untouched for a whole unlearning run.
    """

    centroids: np.ndarray  # (n_clusters, d)
    n_clusters: int
    source: str  # forget | retain
    assignments: dict  # sample id -> cluster index
    space: str = "teacher"  # embedding space the fit used: teacher | student
    inertia: float = float("nan")

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        self.centroids.flags.writeable = False


@dataclass
class PseudoLabelMap:
    """Baseline cluster labels, their farthest-cluster targets, and the map."""

    baseline: dict  # sample id -> cluster index
    target: dict  # sample id -> mapped cluster index
    mapping: np.ndarray  # phi, length n_clusters


def _weighted_seeds(x, n_clusters, rng):
    """Distance-weighted seeding: each new seed drawn with probability
    proportional to squared distance from the nearest seed chosen so far."""
    n = x.shape[0]
    seeds = np.empty((n_clusters, x.shape[1]))
    first = int(rng.integers(n))
    seeds[0] = x[first]
    closest = kernels.pairwise_sqdist(x, seeds[0:1])[:, 0]
    for k in range(1, n_clusters):
        total = closest.sum()
        if total <= 0.0:
            # all points coincide with chosen seeds; fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        seeds[k] = x[idx]
        d = kernels.pairwise_sqdist(x, seeds[k : k + 1])[:, 0]
        np.minimum(closest, d, out=closest)
    return seeds


def kmeans_fit(embeddings, n_clusters, seed, *, source="forget", space="teacher",
               sample_ids=None, max_iter=MAX_ITER, tol=CONVERGENCE_TOL):
    """Lloyd's algorithm with distance-weighted seeding.

    Deterministic for fixed (embeddings, n_clusters, seed). Empty clusters
    are re-seeded to the point farthest from the emptied centroid.
    """
    x = np.ascontiguousarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n_clusters < 1:
        raise ClusteringError("need at least one cluster")
    if n < n_clusters:
        raise ClusteringError(f"cannot fit {n_clusters} clusters to {n} points")
    rng = np.random.default_rng(seed)
    centroids = _weighted_seeds(x, n_clusters, rng)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = kernels.pairwise_sqdist(x, centroids)
        assign = np.argmin(dist, axis=1)  # ties resolve to the lowest index
        new_centroids = centroids.copy()
        for k in range(n_clusters):
            members = assign == k
            if members.any():
                new_centroids[k] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(kernels.pairwise_sqdist(x, centroids[k : k + 1])[:, 0]))
                new_centroids[k] = x[far]
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    dist = kernels.pairwise_sqdist(x, centroids)
    assign = np.argmin(dist, axis=1)
    inertia = float(dist[np.arange(n), assign].sum())
    ids = range(n) if sample_ids is None else sample_ids
    return ClusterModel(
        centroids=centroids,
        n_clusters=n_clusters,
        source=source,
        assignments={int(i): int(a) for i, a in zip(ids, assign)},
        space=space,
        inertia=inertia,
    )


def assign_clusters(embeddings, model: ClusterModel):
    """Nearest-centroid index for each row; ties go to the lowest index."""
    x = np.ascontiguousarray(np.atleast_2d(embeddings), dtype=np.float64)
    if x.shape[1] != model.centroids.shape[1]:
        raise ValueError("embedding dimension does not match centroids")
    return np.argmin(kernels.pairwise_sqdist(x, model.centroids), axis=1)


def assign_cluster(e, model: ClusterModel):
    """Nearest-centroid index for a single embedding."""
    return int(assign_clusters(np.asarray(e)[None, :], model)[0])


def farthest_cluster_mapping(model_or_centroids):
    """phi[k] = index of the centroid at maximum distance from centroid k.

    Ties break to the lowest index; phi[k] != k whenever centroids differ.
    """
    centroids = getattr(model_or_centroids, "centroids", model_or_centroids)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape[0] < 2:
        raise ClusteringError("farthest-cluster mapping needs at least 2 clusters")
    dist = kernels.pairwise_sqdist(centroids, centroids)
    return np.argmax(dist, axis=1)


def assign_pseudo_labels(forget_embeddings, model: ClusterModel, mapping,
                         sample_ids=None):
    """Compose baseline assignment with the farthest-cluster mapping."""
    if model.source != "forget":
        raise ValueError("pseudo-labels are defined over forget clusters")
    mapping = np.asarray(mapping)
    if mapping.shape[0] != model.n_clusters:
        raise ValueError("mapping length must equal the number of clusters")
    baseline = assign_clusters(forget_embeddings, model)
    target = mapping[baseline]
    ids = range(len(baseline)) if sample_ids is None else sample_ids
    return PseudoLabelMap(
        baseline={int(i): int(b) for i, b in zip(ids, baseline)},
        target={int(i): int(t) for i, t in zip(ids, target)},
        mapping=mapping,
    )


def recompute_forget_clusters(student: ModelSnapshot, forget_samples, n_clusters,
                              seed, backend="kmeans"):
    """Refit forget clusters on current student embeddings; rebuild phi."""
    emb = extract_embeddings(student, forget_samples)
    fit = gmm_fit if backend == "gmm" else kmeans_fit
    model = fit(
        emb,
        n_clusters,
        seed,
        source="forget",
        space="student",
        sample_ids=[s.id for s in forget_samples],
    )
    return model, farthest_cluster_mapping(model)


def _log_gaussian(x, mean, cov):
    d = x.shape[1]
    chol = np.linalg.cholesky(cov)
    solved = np.linalg.solve_triangular if hasattr(np.linalg, "solve_triangular") else None
    diff = x - mean
    if solved is not None:
        y = solved(chol, diff.T, lower=True).T
    else:
        y = np.linalg.solve(chol, diff.T).T
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    maha = np.einsum("ij,ij->i", y, y)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def gmm_fit(embeddings, n_clusters, seed, *, source="forget", space="teacher",
            sample_ids=None, max_iter=100, tol=1e-6, reg=1e-6):
    """Full-covariance Gaussian mixture via EM, hard-assigned by max posterior.

    Initialized from a k-means fit so the result is deterministic per seed.
    Exposes the same ClusterModel surface as kmeans_fit (means as centroids).
    """
    x = np.ascontiguousarray(embeddings, dtype=np.float64)
    n, d = x.shape
    if n < n_clusters:
        raise ClusteringError(f"cannot fit {n_clusters} components to {n} points")
    init = kmeans_fit(x, n_clusters, seed)
    means = np.array(init.centroids)
    hard = np.array([init.assignments[i] for i in range(n)])
    weights = np.ones(n_clusters) / n_clusters
    covs = np.empty((n_clusters, d, d))
    for k in range(n_clusters):
        members = x[hard == k]
        if len(members) > 1:
            covs[k] = np.cov(members.T) + reg * np.eye(d)
        else:
            covs[k] = np.eye(d)
        weights[k] = max(len(members), 1) / n

    prev_ll = -np.inf
    for _ in range(max_iter):
        log_prob = np.stack(
            [np.log(weights[k]) + _log_gaussian(x, means[k], covs[k]) for k in range(n_clusters)],
            axis=1,
        )
        shift = log_prob.max(axis=1, keepdims=True)
        norm = shift[:, 0] + np.log(np.exp(log_prob - shift).sum(axis=1))
        resp = np.exp(log_prob - norm[:, None])
        ll = float(norm.sum())
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for k in range(n_clusters):
            diff = x - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + reg * np.eye(d)
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll

    log_prob = np.stack(
        [np.log(weights[k]) + _log_gaussian(x, means[k], covs[k]) for k in range(n_clusters)],
        axis=1,
    )
    hard = np.argmax(log_prob, axis=1)
    ids = range(n) if sample_ids is None else sample_ids
    return ClusterModel(
        centroids=means,
        n_clusters=n_clusters,
        source=source,
        assignments={int(i): int(a) for i, a in zip(ids, hard)},
        space=space,
        inertia=float("nan"),
    )


def export_centroids_csv(model: ClusterModel, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster"] + [f"c{j}" for j in range(model.centroids.shape[1])])
        for k, row in enumerate(model.centroids):
            writer.writerow([k] + [repr(v) for v in row])


def export_assignments_csv(model: ClusterModel, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "cluster"])
        for sid in sorted(model.assignments):
            writer.writerow([sid, model.assignments[sid]])
