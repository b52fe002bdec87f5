"""Shared numerical substrate: distance matrices, the row-correlation loss,
Gram plane signatures, SVD, and PCA.

All matrices are dense float64 numpy arrays.  Every function here is pure
and safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegenerateRowError,
    InvalidBatchError,
    InvalidComponentCountError,
    ShapeMismatchError,
)


def _as_matrix(x, name="input"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeMismatchError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(a)


def pairwise_dist(x):
    """b x b Euclidean distance matrix between the rows of x (b >= 2)."""
    a = _as_matrix(x)
    if a.shape[0] < 2:
        raise InvalidBatchError(f"need at least 2 rows, got {a.shape[0]}")
    return kernels.pairwise_dist(a)


def corr_loss(da, db):
    """Row-correlation loss between two b x b distance matrices.

    loss = sum_k (1 - rho_k) with rho_k the Pearson correlation of row k of
    da with row k of db (per-row scalar means subtracted, diagonal entries
    included).  Returns (loss, grad) where grad is d loss / d db.  A zero
    variance row in either matrix raises DegenerateRowError naming the row.
    """
    a = _as_matrix(da, "da")
    b = _as_matrix(db, "db")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch {a.shape} vs {b.shape}")

    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt(np.sum(ac * ac, axis=1))
    nb = np.sqrt(np.sum(bc * bc, axis=1))
    for name, norms in (("da", na), ("db", nb)):
        bad = np.nonzero(norms == 0.0)[0]
        if bad.size:
            raise DegenerateRowError(int(bad[0]), name)

    rho = np.sum(ac * bc, axis=1) / (na * nb)
    loss = float(np.sum(1.0 - rho))
    # d(-rho_k)/d bc_k = -(ac_k/(na nb) - rho_k bc_k/nb^2); both terms have
    # zero row mean, so the centering chain rule adds nothing.
    grad = -(ac / (na * nb)[:, None] - (rho / (nb * nb))[:, None] * bc)
    return loss, grad


def gram_projection(t):
    """Plane signature T^T T of stacked tangent rows (paper-literal Gram)."""
    a = _as_matrix(t)
    return a.T @ a


def proj_dist_matrix(mats):
    """Pairwise Frobenius distances between equally shaped square matrices."""
    if len(mats) < 2:
        raise InvalidBatchError("need at least 2 matrices")
    shape = np.shape(mats[0])
    flat = []
    for i, p in enumerate(mats):
        a = _as_matrix(p, f"matrix {i}")
        if a.shape != shape:
            raise ShapeMismatchError(f"matrix {i} has shape {a.shape}, expected {shape}")
        flat.append(a.reshape(-1))
    return kernels.pairwise_dist(np.ascontiguousarray(np.stack(flat)))


def svd(m):
    """Thin SVD with a deterministic sign convention.

    Singular values are nonincreasing; the largest-magnitude entry of each
    right singular vector is made positive, with U flipped to match.
    """
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return u * signs[None, :], s, vt * signs[:, None]


@dataclass
class PcaModel:
    """Affine PCA map: project subtracts the mean and applies the top-k
    right singular directions; reconstruct inverts onto the subspace."""

    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray  # (k,), nonincreasing

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def ambient_dim(self):
        return self.components.shape[1]


def pca_fit(data, k):
    """Fit a PcaModel on an N x D matrix, retaining k components."""
    a = _as_matrix(data, "data")
    n, dim = a.shape
    if n < 2:
        raise InvalidBatchError(f"need at least 2 samples, got {n}")
    if not 1 <= k <= min(n, dim):
        raise InvalidComponentCountError(f"k={k} out of range [1, {min(n, dim)}]")
    mean = a.mean(axis=0)
    _, s, vt = svd(a - mean)
    return PcaModel(
        mean=mean,
        components=np.ascontiguousarray(vt[:k]),
        explained_variance=s[:k] ** 2 / (n - 1),
    )


def pca_project(model, x):
    """Map ambient vectors (D,) or (N, D) to PCA coordinates."""
    x = np.asarray(x, dtype=np.float64)
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model, y):
    """Map PCA coordinates back to the ambient space."""
    y = np.asarray(y, dtype=np.float64)
    return y @ model.components + model.mean
