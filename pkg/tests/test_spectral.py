import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsubspace import spectral
from fedsubspace.errors import ConfigError, NumericsError
from fedsubspace.metrics import accuracy
from fedsubspace.spectral import (
    AffinityMatrix,
    affinity_from_r,
    kmeans,
    normalized_laplacian,
    read_affinity_binary,
    smallest_eigvecs,
    spectral_cluster,
    write_affinity_binary,
    write_affinity_csv,
)

from oracles import jacobi_eigh


def block_affinity(sizes, weight=1.0):
    n = sum(sizes)
    w = np.zeros((n, n))
    start = 0
    for size in sizes:
        w[start:start + size, start:start + size] = weight
        start += size
    np.fill_diagonal(w, 0.0)
    return AffinityMatrix(w)


# ---------------------------------------------------------------------------
# affinity


def test_affinity_fixed_point():
    w = np.array([[0.0, 0.3, 0.1], [0.3, 0.0, 0.2], [0.1, 0.2, 0.0]])
    assert np.array_equal(affinity_from_r(w).w, w)


def test_affinity_mixed_signs():
    r = np.array([[0.0, -2.0], [4.0, 0.0]])
    assert np.array_equal(affinity_from_r(r).w, np.array([[0.0, 3.0], [3.0, 0.0]]))


def test_affinity_properties_random():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((5, 5))
    aff = affinity_from_r(r)
    assert np.array_equal(aff.w, aff.w.T)
    assert aff.w.min() >= 0.0
    assert np.all(np.diag(aff.w) == 0.0)
    direct = (np.abs(r) + np.abs(r.T)) / 2.0
    np.fill_diagonal(direct, 0.0)
    assert np.array_equal(aff.w, direct)


def test_affinity_transpose_invariance():
    rng = np.random.default_rng(1)
    r = rng.standard_normal((6, 6))
    assert np.array_equal(affinity_from_r(r).w, affinity_from_r(r.T).w)


def test_affinity_top_s():
    rng = np.random.default_rng(2)
    r = rng.standard_normal((8, 8))
    aff = affinity_from_r(r, top_s=2)
    # Each row keeps at least its own 2 picks; symmetrisation may add more.
    assert ((aff.w > 0).sum(axis=1) >= 2).all() or (aff.w == 0).all()
    assert np.array_equal(aff.w, aff.w.T)


def test_affinity_nan_raises():
    r = np.zeros((3, 3))
    r[0, 1] = np.nan
    with pytest.raises(NumericsError):
        affinity_from_r(r)


# ---------------------------------------------------------------------------
# laplacian


def test_laplacian_two_disconnected_edges():
    aff = block_affinity([2, 2])
    lap = normalized_laplacian(aff)
    block = np.array([[1.0, -1.0], [-1.0, 1.0]])
    expected = np.zeros((4, 4))
    expected[:2, :2] = block
    expected[2:, 2:] = block
    assert np.allclose(lap, expected, atol=1e-15)


def test_laplacian_empty_graph_is_identity():
    aff = AffinityMatrix(np.zeros((3, 3)))
    assert np.array_equal(normalized_laplacian(aff), np.eye(3))


def test_laplacian_eigenvalues_in_range():
    rng = np.random.default_rng(3)
    for _ in range(5):
        r = rng.standard_normal((10, 10))
        lap = normalized_laplacian(affinity_from_r(r))
        vals = np.linalg.eigvalsh(lap)
        assert vals.min() >= -1e-10
        assert vals.max() <= 2.0 + 1e-10


# ---------------------------------------------------------------------------
# eigensolver contract


def test_smallest_eigvecs_identity_spectrum():
    u = smallest_eigvecs(np.eye(3), 2)
    assert np.allclose(u.T @ u, np.eye(2), atol=1e-12)
    for j in range(2):
        assert np.allclose(np.eye(3) @ u[:, j], u[:, j], atol=1e-12)


def test_smallest_eigvecs_diagonal():
    lap = np.diag([0.0, 1.0, 2.0])
    u = smallest_eigvecs(lap, 1)
    assert np.allclose(u[:, 0], [1.0, 0.0, 0.0], atol=1e-12)


def test_smallest_eigvecs_match_jacobi_oracle():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((8, 8))
    sym = (a + a.T) / 2.0
    u = smallest_eigvecs(sym, 8)
    vals_o, vecs_o = jacobi_eigh(sym)
    vals = np.einsum("ij,ij->j", u, sym @ u)
    assert np.allclose(np.sort(vals), vals_o, atol=1e-8)
    for j in range(8):
        ours = u[:, j]
        ref = vecs_o[:, j]
        ref = ref if abs(ours @ ref) > 0 and (ours @ ref) > 0 else -ref
        assert np.allclose(ours, ref, atol=1e-7)


def test_smallest_eigvecs_residual_bound():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((12, 12))
    sym = (a + a.T) / 2.0
    u = smallest_eigvecs(sym, 4)
    vals = np.einsum("ij,ij->j", u, sym @ u)
    res = np.abs(sym @ u - u * vals[None, :]).max()
    assert res <= 1e-8 * np.linalg.norm(sym)


def test_smallest_eigvecs_sign_convention():
    lap = np.diag([0.0, 1.0, 2.0])
    u = smallest_eigvecs(lap, 3)
    for j in range(3):
        col = u[:, j]
        first = col[np.abs(col) > 1e-12][0]
        assert first > 0


def test_smallest_eigvecs_k_bounds():
    with pytest.raises(ConfigError):
        smallest_eigvecs(np.eye(3), 0)
    with pytest.raises(ConfigError):
        smallest_eigvecs(np.eye(3), 4)


# ---------------------------------------------------------------------------
# k-means


def test_kmeans_perfect_blobs():
    rng = np.random.default_rng(7)
    pts = np.vstack([
        rng.normal(0.0, 0.05, size=(20, 2)),
        rng.normal(10.0, 0.05, size=(20, 2)),
    ])
    labels = kmeans(pts, 2, seed=0)
    truth = np.repeat([0, 1], 20)
    assert accuracy(labels, truth) == 100.0


def test_kmeans_k_equals_n():
    pts = np.arange(8.0).reshape(4, 2)
    labels = kmeans(pts, 4, seed=1)
    assert len(set(labels.tolist())) == 4


def test_kmeans_deterministic():
    rng = np.random.default_rng(8)
    pts = rng.uniform(size=(50, 3))
    assert np.array_equal(kmeans(pts, 4, seed=3), kmeans(pts, 4, seed=3))


# ---------------------------------------------------------------------------
# spectral clustering


def test_spectral_two_cliques():
    aff = block_affinity([3, 3])
    labels = spectral_cluster(aff, 2, seed=0)
    truth = np.repeat([0, 1], 3)
    assert accuracy(labels, truth) == 100.0


def test_spectral_components_recovered_exactly():
    for sizes in ([4, 5], [3, 3, 4], [2, 3, 4, 5]):
        aff = block_affinity(sizes, weight=0.7)
        labels = spectral_cluster(aff, len(sizes), seed=1)
        truth = np.repeat(np.arange(len(sizes)), sizes)
        assert accuracy(labels, truth) == 100.0


def test_spectral_each_point_own_cluster():
    rng = np.random.default_rng(9)
    r = np.abs(rng.standard_normal((5, 5))) + 0.1
    np.fill_diagonal(r, 0.0)
    labels = spectral_cluster(affinity_from_r(r), 5, seed=0)
    assert len(set(labels.tolist())) == 5


def test_spectral_three_gaussian_blobs_pairwise_affinity():
    # Huge separation: affinity from pairwise distances clusters perfectly.
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        pts = np.vstack([
            rng.normal((0, 0), 0.1, size=(20, 2)),
            rng.normal((50, 0), 0.1, size=(20, 2)),
            rng.normal((0, 50), 0.1, size=(20, 2)),
        ])
        d2 = ((pts[:, None] - pts[None, :]) ** 2).sum(-1)
        w = np.exp(-d2 / 10.0)
        np.fill_diagonal(w, 0.0)
        labels = spectral_cluster(AffinityMatrix(w), 3, seed=seed)
        truth = np.repeat([0, 1, 2], 20)
        assert accuracy(labels, truth) == 100.0


def test_spectral_permutation_equivariance():
    rng = np.random.default_rng(17)
    r = np.abs(rng.standard_normal((12, 12)))
    np.fill_diagonal(r, 0.0)
    # Strengthen a planted 2-block structure so clusters are unambiguous.
    r[:6, :6] += 3.0
    r[6:, 6:] += 3.0
    np.fill_diagonal(r, 0.0)
    aff = affinity_from_r(r)
    labels = spectral_cluster(aff, 2, seed=5)
    perm = rng.permutation(12)
    permuted = AffinityMatrix(aff.w[perm][:, perm])
    labels_p = spectral_cluster(permuted, 2, seed=5)
    assert accuracy(labels_p, labels[perm]) == 100.0


def test_spectral_k_below_two():
    with pytest.raises(ConfigError):
        spectral_cluster(block_affinity([2, 2]), 1, seed=0)


# ---------------------------------------------------------------------------
# export


def test_affinity_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(20)
    aff = affinity_from_r(rng.standard_normal((6, 6)))
    path = tmp_path / "aff.bin"
    write_affinity_binary(aff, path)
    loaded = read_affinity_binary(path)
    assert loaded.dtype == np.float32
    assert np.array_equal(loaded, aff.w.astype(np.float32))


def test_affinity_csv(tmp_path):
    aff = block_affinity([2, 2])
    path = tmp_path / "aff.csv"
    write_affinity_csv(aff, path)
    loaded = np.loadtxt(path, delimiter=",")
    assert np.array_equal(loaded, aff.w)
