"""Affinity construction and spectral clustering of a self-expressive matrix.

Pipeline: symmetrise |R| into an affinity W, form the symmetric normalised
Laplacian, embed points with its k smallest eigenvectors (rows normalised to
the unit sphere), then k-means with k-means++ restarts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError

KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300
_EIG_RESIDUAL_FACTOR = 1e-8


@dataclass(frozen=True)
class AffinityMatrix:
    w: np.ndarray   # (n, n) nonnegative symmetric, zero diagonal

    @property
    def n(self) -> int:
        return self.w.shape[0]


def affinity_from_r(r, top_s: int | None = None) -> AffinityMatrix:
    """W = (|R| + |R^T|) / 2 with zero diagonal; optional per-row top-s filter.

    When top_s is given, only the s strongest entries of each row survive and
    the result is re-symmetrised with an elementwise max.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ConfigError("self-expressive matrix must be square")
    if not np.isfinite(r).all():
        raise NumericsError("self-expressive matrix contains non-finite values")
    w = (np.abs(r) + np.abs(r.T)) / 2.0
    np.fill_diagonal(w, 0.0)
    if top_s is not None:
        if top_s < 1:
            raise ConfigError("top_s must be >= 1")
        keep = np.zeros_like(w)
        order = np.argsort(-w, axis=1, kind="stable")[:, :top_s]
        rows = np.arange(w.shape[0])[:, None]
        keep[rows, order] = w[rows, order]
        w = np.maximum(keep, keep.T)
    return AffinityMatrix(w=w)


def normalized_laplacian(aff: AffinityMatrix) -> np.ndarray:
    """L = I - D^{-1/2} W D^{-1/2}; isolated vertices keep an identity row."""
    w = aff.w
    deg = w.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(w.shape[0]) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0


def smallest_eigvecs(lap: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal eigenvectors of the k smallest eigenvalues, ascending.

    Signs follow a fixed convention: the first nonzero component of each
    column is positive.  Residuals are checked against 1e-8 * ||L||_F.
    """
    n = lap.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"eigendecomposition failed: {exc}") from exc
    u = vecs[:, :k]
    residual = np.abs(lap @ u - u * vals[None, :k]).max()
    if residual > _EIG_RESIDUAL_FACTOR * max(1e-300, float(np.linalg.norm(lap))):
        raise NumericsError(f"eigenpair residual {residual:.3e} exceeds tolerance")
    u = u.copy()
    for j in range(k):
        col = u[:, j]
        nonzero = np.flatnonzero(np.abs(col) > 1e-12)
        if nonzero.size and col[nonzero[0]] < 0:
            u[:, j] = -col
    return u


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    restarts: int = KMEANS_RESTARTS,
    max_iter: int = KMEANS_MAX_ITER,
) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    best_labels = None
    best_inertia = np.inf
    for _ in range(restarts):
        centers = _kmeanspp_init(points, k, rng)
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for cluster in range(k):
                mask = new_labels == cluster
                if mask.any():
                    centers[cluster] = points[mask].mean(axis=0)
                else:
                    # Re-seat an empty cluster on the worst-fit point.
                    worst = int(d2[np.arange(n), new_labels].argmax())
                    centers[cluster] = points[worst]
                    new_labels[worst] = cluster
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        inertia = float(d2[np.arange(n), labels].sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def spectral_cluster(aff: AffinityMatrix, k: int, seed: int) -> np.ndarray:
    """Cluster the rows of the affinity's Laplacian eigen-embedding."""
    if k < 2:
        raise ConfigError(f"cluster count must be >= 2, got {k}")
    lap = normalized_laplacian(aff)
    u = smallest_eigvecs(lap, k)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    embedded = np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)
    return kmeans(embedded, k, seed)


# ---------------------------------------------------------------------------
# export formats


def write_affinity_binary(aff: AffinityMatrix, path) -> None:
    """u32 little-endian n, then n*n float32 little-endian, row-major."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", aff.n))
        fh.write(np.ascontiguousarray(aff.w, dtype="<f4").tobytes())


def read_affinity_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (n,) = struct.unpack("<I", data[:4])
    return np.frombuffer(data[4:4 + 4 * n * n], dtype="<f4").reshape(n, n)


def write_affinity_csv(aff: AffinityMatrix, path) -> None:
    np.savetxt(path, aff.w, delimiter=",", fmt="%.17g")
