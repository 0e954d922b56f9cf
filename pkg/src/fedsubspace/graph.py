"""Per-client k-nearest-neighbour adjacency graphs on raw sample vectors.

The graph is built once, before any training, from Euclidean distances
between flattened pixel rows.  Entries are binary; the directed k-NN graph is
symmetrised with an elementwise max, so rows can end up with more than k
neighbours.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AdjacencyMatrix:
    a: np.ndarray   # (n, n) float64 with entries in {0, 1}
    k: int

    @property
    def n(self) -> int:
        return self.a.shape[0]


def knn_adjacency(samples, k: int) -> AdjacencyMatrix:
    """Symmetric binary k-NN graph; ties broken towards the smaller index.

    Neighbours are the k nearest rows by Euclidean distance (self excluded).
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DataError("samples must be a 2-d matrix")
    n = x.shape[0]
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if not np.isfinite(x).all():
        raise DataError("samples contain non-finite values")

    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    d2 = np.maximum(d2, 0.0)
    d2 = (d2 + d2.T) / 2.0          # exact symmetry, so ties are well defined
    np.fill_diagonal(d2, np.inf)

    # Stable argsort keeps equal distances in index order.
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    a = np.zeros((n, n))
    a[np.arange(n)[:, None], neighbours] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0.0)
    return AdjacencyMatrix(a=a, k=k)


def write_edges_csv(adj: AdjacencyMatrix, path) -> None:
    """Dump the upper-triangle edge list as (i, j) rows for inspection."""
    rows, cols = np.nonzero(np.triu(adj.a, k=1))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j"])
        writer.writerows(zip(rows.tolist(), cols.tolist()))
