"""Pure-numpy reference implementations of the hot kernels.

These are the fallback backend when the compiled extension is unavailable
(see ``geomkit.kernels``).  They also serve as the reference the compiled
kernels are tested against, so keep the arithmetic straightforward: one
pass over splat points in input order, truncation at 4 sigma, turning-angle
curvature for curves.
"""

import numpy as np

TRUNCATE_SIGMAS = 4.0


def splat_accumulate(rows, cols, amps, sigmas, height, width):
    """Additively splat Gaussian blobs onto a (c, height, width) grid.

    rows/cols are float pixel centers per point, amps is (n, c) per-channel
    amplitude, sigmas (n,) the blob std-dev in pixels.  Blobs are truncated
    at 4 sigma.  No clipping; the caller owns [0, 1] semantics.
    """
    n = rows.shape[0]
    c = amps.shape[1]
    out = np.zeros((c, height, width), dtype=np.float64)
    for p in range(n):
        s = sigmas[p]
        if s <= 0.0:
            continue
        r0 = rows[p]
        c0 = cols[p]
        reach = TRUNCATE_SIGMAS * s
        rlo = max(0, int(np.ceil(r0 - reach)))
        rhi = min(height - 1, int(np.floor(r0 + reach)))
        clo = max(0, int(np.ceil(c0 - reach)))
        chi = min(width - 1, int(np.floor(c0 + reach)))
        if rlo > rhi or clo > chi:
            continue
        rr = np.arange(rlo, rhi + 1, dtype=np.float64) - r0
        cc = np.arange(clo, chi + 1, dtype=np.float64) - c0
        g = np.exp(-(rr[:, None] ** 2 + cc[None, :] ** 2) / (2.0 * s * s))
        for ch in range(c):
            out[ch, rlo : rhi + 1, clo : chi + 1] += amps[p, ch] * g
    return out


def pairwise_dist(x):
    """Euclidean distance matrix between rows of x, exact zero diagonal."""
    b = x.shape[0]
    out = np.empty((b, b), dtype=np.float64)
    for k in range(b):
        d2 = np.sum((x - x[k]) ** 2, axis=1)
        out[k] = np.sqrt(d2)
        out[k, k] = 0.0
    return out


def _segments(pts):
    e = np.diff(pts, axis=0)
    lens = np.sqrt(np.sum(e * e, axis=1))
    return e, lens


def elastica_energy(pts, lam):
    """Discrete bending energy and length of a polyline in R^d.

    Turning-angle curvature: at interior node i, theta_i is the angle
    between consecutive segments, ds_i the average adjacent segment length,
    kappa_i = theta_i / ds_i and E = 0.5 * sum kappa_i^2 ds_i.  Returns
    (E_bend, length, objective).  A zero-length segment yields +inf so line
    searches reject collapsed configurations.
    """
    e, lens = _segments(pts)
    if np.any(lens <= 0.0):
        return np.inf, np.inf, np.inf
    cosang = np.sum(e[:-1] * e[1:], axis=1) / (lens[:-1] * lens[1:])
    cosang = np.clip(cosang, -1.0, 1.0)
    theta = np.arccos(cosang)
    ds = 0.5 * (lens[:-1] + lens[1:])
    ebend = 0.5 * np.sum(theta * theta / ds)
    length = float(np.sum(lens))
    return float(ebend), length, float(ebend + lam * length)


def elastica_energy_grad(pts, lam):
    """elastica_energy plus the analytic gradient wrt every curve point."""
    e, lens = _segments(pts)
    if np.any(lens <= 0.0):
        return np.inf, np.inf, np.inf, np.full_like(pts, np.nan)
    cosang = np.sum(e[:-1] * e[1:], axis=1) / (lens[:-1] * lens[1:])
    cosang = np.clip(cosang, -1.0, 1.0)
    theta = np.arccos(cosang)
    ds = 0.5 * (lens[:-1] + lens[1:])
    ebend = 0.5 * np.sum(theta * theta / ds)
    length = float(np.sum(lens))

    # dF/dcos_i = -(theta/sin theta)/ds_i; the ratio tends to 1 as theta->0.
    sin_t = np.sqrt(np.maximum(1.0 - cosang * cosang, 0.0))
    small = theta < 1e-6
    ratio = np.where(small, 1.0 + theta * theta / 6.0, theta / np.maximum(sin_t, 1e-300))
    dF_dcos = -ratio / ds

    grad_e = np.zeros_like(e)
    inv_ll = 1.0 / (lens[:-1] * lens[1:])
    # chain through cos_i into both adjacent segments
    grad_e[:-1] += dF_dcos[:, None] * (
        e[1:] * inv_ll[:, None] - cosang[:, None] * e[:-1] / (lens[:-1] ** 2)[:, None]
    )
    grad_e[1:] += dF_dcos[:, None] * (
        e[:-1] * inv_ll[:, None] - cosang[:, None] * e[1:] / (lens[1:] ** 2)[:, None]
    )
    # chain through ds_i and the length penalty into segment lengths
    dF_dds = -0.5 * theta * theta / (ds * ds)
    dF_dlen = np.full(lens.shape, lam)
    dF_dlen[:-1] += 0.5 * dF_dds
    dF_dlen[1:] += 0.5 * dF_dds
    grad_e += (dF_dlen / lens)[:, None] * e

    grad = np.zeros_like(pts)
    grad[1:] += grad_e
    grad[:-1] -= grad_e
    return float(ebend), length, float(ebend + lam * length), grad
