"""Tangent-space estimation on the image manifold.

At a training sample the manifold's tangent directions are approximated
from neighboring views: each difference image divided by its rotation
angle is a secant approximation of a tangent vector, and an SVD of the
collected secants extracts an orthonormal basis.  A finite-difference
pushforward carries such a basis through a trained mapper into latent
space.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import so3_distance
from .errors import (
    DegeneratePushforwardError,
    DuplicateRotationError,
    RankDeficiencyError,
    ValidationError,
)
from .numerics import svd


@dataclass
class TangentBasis:
    """Orthonormal basis rows spanning an estimated tangent space."""

    base: np.ndarray  # point the space is attached to (ambient vector)
    basis: np.ndarray  # (r, ambient_dim), rows orthonormal
    r: int
    neighbor_ids: tuple

    def __post_init__(self):
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.r), atol=1e-8):
            raise ValidationError("tangent basis rows must be orthonormal")


def _effective_rank(s, rel_tol=1e-10):
    if len(s) == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def estimate_tangents(samples, i, n_prime, r=None):
    """Tangent basis at samples[i] from its n_prime nearest neighbors.

    Neighbors are ranked by rotation distance; each secant
    (I_j - I_i) / theta_j feeds an SVD whose top-r directions form the
    basis.  r defaults to min(3, n_prime) since the rotation manifold
    has dimension at most 3.
    """
    if r is None:
        r = min(3, n_prime)
    if not (n_prime >= r >= 1):
        raise ValidationError(f"need n_prime >= r >= 1, got n_prime={n_prime}, r={r}")
    if n_prime > len(samples) - 1:
        raise ValidationError(f"n_prime={n_prime} exceeds available neighbors")
    base = samples[i]
    dists = np.array([
        np.inf if j == i else so3_distance(base.rotation, s.rotation)
        for j, s in enumerate(samples)
    ])
    order = np.argsort(dists, kind="stable")[:n_prime]
    base_vec = base.image.reshape(-1)
    cols = []
    for j in order:
        theta = dists[j]
        if theta < 1e-12:
            raise DuplicateRotationError(
                f"neighbor {j} duplicates the rotation of sample {i}")
        cols.append((samples[j].image.reshape(-1) - base_vec) / theta)
    m = np.stack(cols, axis=1)  # ambient x n_prime, secants as columns
    u, s, _ = svd(m)
    achieved = _effective_rank(s)
    if achieved < r:
        raise RankDeficiencyError(r, achieved)
    return TangentBasis(base=base_vec.copy(), basis=u[:, :r].T.copy(), r=r,
                        neighbor_ids=tuple(int(j) for j in order))


def pushforward(mapper, base_image, tangent, eps=1e-2):
    """Finite-difference image of a tangent basis under mapper.phi.

    Each basis direction is stepped by eps relative to the base image
    norm; the latent secants are re-orthonormalized by SVD.  Rank loss
    triggers a warning, total collapse an error.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    base_vec = base_image.reshape(-1)
    scale = float(np.linalg.norm(base_vec))
    if scale == 0:
        raise ValidationError("base image must be nonzero")
    w0 = np.asarray(mapper.phi(base_image))
    step = eps * scale
    rows = []
    for u_dir in tangent.basis:
        shifted = (base_vec + step * u_dir).reshape(base_image.shape)
        rows.append((np.asarray(mapper.phi(shifted)) - w0) / step)
    m = np.stack(rows, axis=1)  # latent_dim x r, secants as columns
    u, s, _ = svd(m)
    achieved = _effective_rank(s, rel_tol=1e-8)
    if achieved < 1:
        raise DegeneratePushforwardError(
            "all tangent directions collapse under the mapper")
    if achieved < tangent.r:
        warnings.warn(
            f"pushforward rank dropped from {tangent.r} to {achieved}",
            RuntimeWarning, stacklevel=2)
    return TangentBasis(base=w0.reshape(-1).copy(), basis=u[:, :achieved].T.copy(),
                        r=achieved, neighbor_ids=tangent.neighbor_ids)


def principal_angles_deg(basis_a, basis_b):
    """Principal angles between two orthonormal row spaces, in degrees."""
    a = np.atleast_2d(basis_a)
    b = np.atleast_2d(basis_b)
    s = np.linalg.svd(a @ b.T, compute_uv=False)
    k = min(a.shape[0], b.shape[0])
    return np.degrees(np.arccos(np.clip(s[:k], -1.0, 1.0)))
