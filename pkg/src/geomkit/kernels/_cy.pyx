# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Gaussian splatting, pairwise distances, and the
discrete elastica objective/gradient.  Mirrors geomkit.kernels._py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, acos, ceil, exp, floor, sqrt

cnp.import_array()

DEF TRUNCATE_SIGMAS = 4.0


def splat_accumulate(double[::1] rows, double[::1] cols, double[:, ::1] amps,
                     double[::1] sigmas, int height, int width):
    cdef int n = rows.shape[0]
    cdef int c = amps.shape[1]
    out_arr = np.zeros((c, height, width), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef int p, ch, r, col, rlo, rhi, clo, chi
    cdef double s, r0, c0, reach, dr, dc, g, inv2s2
    with nogil:
        for p in range(n):
            s = sigmas[p]
            if s <= 0.0:
                continue
            r0 = rows[p]
            c0 = cols[p]
            reach = TRUNCATE_SIGMAS * s
            rlo = <int>ceil(r0 - reach)
            rhi = <int>floor(r0 + reach)
            clo = <int>ceil(c0 - reach)
            chi = <int>floor(c0 + reach)
            if rlo < 0:
                rlo = 0
            if rhi > height - 1:
                rhi = height - 1
            if clo < 0:
                clo = 0
            if chi > width - 1:
                chi = width - 1
            if rlo > rhi or clo > chi:
                continue
            inv2s2 = 1.0 / (2.0 * s * s)
            for r in range(rlo, rhi + 1):
                dr = r - r0
                for col in range(clo, chi + 1):
                    dc = col - c0
                    g = exp(-(dr * dr + dc * dc) * inv2s2)
                    for ch in range(c):
                        out[ch, r, col] += amps[p, ch] * g
    return out_arr


def pairwise_dist(double[:, ::1] x):
    cdef int b = x.shape[0]
    cdef int d = x.shape[1]
    out_arr = np.empty((b, b), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef int k, m, j
    cdef double acc, diff
    with nogil:
        for k in range(b):
            out[k, k] = 0.0
            for m in range(k + 1, b):
                acc = 0.0
                for j in range(d):
                    diff = x[k, j] - x[m, j]
                    acc += diff * diff
                acc = sqrt(acc)
                out[k, m] = acc
                out[m, k] = acc
    return out_arr


def elastica_energy(double[:, ::1] pts, double lam):
    cdef int m = pts.shape[0] - 1
    cdef int d = pts.shape[1]
    cdef int i, j
    cdef double ebend = 0.0, length = 0.0
    cdef double lprev, lcur, dot, cosang, theta, ds, diff
    cdef bint degenerate = 0
    with nogil:
        lprev = 0.0
        for i in range(m):
            lcur = 0.0
            dot = 0.0
            for j in range(d):
                diff = pts[i + 1, j] - pts[i, j]
                lcur += diff * diff
                if i > 0:
                    dot += diff * (pts[i, j] - pts[i - 1, j])
            lcur = sqrt(lcur)
            if lcur <= 0.0:
                degenerate = 1
                break
            length += lcur
            if i > 0:
                cosang = dot / (lprev * lcur)
                if cosang > 1.0:
                    cosang = 1.0
                elif cosang < -1.0:
                    cosang = -1.0
                theta = acos(cosang)
                ds = 0.5 * (lprev + lcur)
                ebend += 0.5 * theta * theta / ds
            lprev = lcur
    if degenerate:
        return INFINITY, INFINITY, INFINITY
    return ebend, length, ebend + lam * length


def elastica_energy_grad(double[:, ::1] pts, double lam):
    cdef int m = pts.shape[0] - 1
    cdef int d = pts.shape[1]
    grad_arr = np.zeros((m + 1, d), dtype=np.float64)
    e_arr = np.empty((m, d), dtype=np.float64)
    lens_arr = np.empty(m, dtype=np.float64)
    ge_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] e = e_arr
    cdef double[::1] lens = lens_arr
    cdef double[:, ::1] ge = ge_arr
    cdef int i, j
    cdef double ebend = 0.0, length = 0.0
    cdef double dot, cosang, theta, ds, sin_t, ratio, dF_dcos, inv_ll, dF_dds, acc
    cdef bint degenerate = 0
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(d):
                e[i, j] = pts[i + 1, j] - pts[i, j]
                acc += e[i, j] * e[i, j]
            lens[i] = sqrt(acc)
            if lens[i] <= 0.0:
                degenerate = 1
                break
            length += lens[i]
    if degenerate:
        grad_arr.fill(np.nan)
        return INFINITY, INFINITY, INFINITY, grad_arr
    with nogil:
        for i in range(1, m):
            dot = 0.0
            for j in range(d):
                dot += e[i - 1, j] * e[i, j]
            cosang = dot / (lens[i - 1] * lens[i])
            if cosang > 1.0:
                cosang = 1.0
            elif cosang < -1.0:
                cosang = -1.0
            theta = acos(cosang)
            ds = 0.5 * (lens[i - 1] + lens[i])
            ebend += 0.5 * theta * theta / ds
            sin_t = sqrt(1.0 - cosang * cosang)
            if theta < 1e-6:
                ratio = 1.0 + theta * theta / 6.0
            else:
                if sin_t < 1e-300:
                    sin_t = 1e-300
                ratio = theta / sin_t
            dF_dcos = -ratio / ds
            inv_ll = 1.0 / (lens[i - 1] * lens[i])
            for j in range(d):
                ge[i - 1, j] += dF_dcos * (
                    e[i, j] * inv_ll - cosang * e[i - 1, j] / (lens[i - 1] * lens[i - 1])
                )
                ge[i, j] += dF_dcos * (
                    e[i - 1, j] * inv_ll - cosang * e[i, j] / (lens[i] * lens[i])
                )
            dF_dds = -0.5 * theta * theta / (ds * ds)
            for j in range(d):
                ge[i - 1, j] += 0.5 * dF_dds * e[i - 1, j] / lens[i - 1]
                ge[i, j] += 0.5 * dF_dds * e[i, j] / lens[i]
        for i in range(m):
            for j in range(d):
                ge[i, j] += lam * e[i, j] / lens[i]
                grad[i + 1, j] += ge[i, j]
                grad[i, j] -= ge[i, j]
    return ebend, length, ebend + lam * length, grad_arr
