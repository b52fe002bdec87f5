"""Discrete free elastica between directed points in R^d.

A polyline eta_0..eta_m minimizes bending energy plus a length penalty,
E_bend + lambda * length, with the endpoints pinned and the first and
last segments constrained to rays along the departure and arrival
directions.  Curvature uses the turning-angle form: at interior node i
with segment vectors e_{i-1}, e_i, kappa_i = theta_i / ds_i where
theta_i is the angle between the segments and ds_i the average of their
lengths, so E_bend = 1/2 sum kappa_i^2 ds_i.

Minimization is plain gradient descent over the interior points plus
the two ray distances, with an Armijo backtracking line search whose
trial step doubles after each accepted iteration.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    DegenerateCurveError,
    ElasticaStalledError,
    ValidationError,
)

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 60


@dataclass
class DirectedPoint:
    """Position with a unit direction attached."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.w.shape != self.v.shape or self.w.ndim != 1:
            raise ValidationError("w and v must be 1-d vectors of equal dim")
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-9:
            raise ValidationError("direction must be unit norm within 1e-9")


@dataclass
class ElasticaCurve:
    points: np.ndarray  # (m + 1, d)
    lam: float
    converged: bool
    objective: float
    bend_energy: float
    length: float
    objective_history: np.ndarray = field(default=None, repr=False)

    @property
    def m(self):
        return len(self.points) - 1


@dataclass
class PickedDirections:
    v1: np.ndarray  # departure direction at w1
    u2: np.ndarray  # arrival direction at w2
    inner_v1_v2: float  # diagnostic: the "pointing towards each other" score
    used_chord_fallback: bool


def pick_directions(w1, t1, w2, t2):
    """Departure/arrival directions from tangent bases at the endpoints.

    Each direction is the normalized projection of the chord onto the
    local tangent span, so the endpoints point as much towards each
    other as their tangent planes allow.  A chord nearly orthogonal to a
    tangent plane falls back to the chord itself with a warning.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    chord = w2 - w1
    norm = np.linalg.norm(chord)
    if norm == 0:
        raise ValidationError("endpoints coincide; no chord direction")
    unit = chord / norm

    def project(basis, target):
        p = basis.T @ (basis @ target)
        n = np.linalg.norm(p)
        if n < 1e-8:
            warnings.warn("chord nearly orthogonal to tangent plane; "
                          "falling back to chord direction", RuntimeWarning,
                          stacklevel=3)
            return target, True
        return p / n, False

    v1, fb1 = project(t1.basis, unit)
    v2, fb2 = project(t2.basis, -unit)
    return PickedDirections(v1=v1, u2=-v2, inner_v1_v2=float(v1 @ v2),
                            used_chord_fallback=fb1 or fb2)


def energy(curve):
    """(E_bend, length, objective) of a curve's polyline."""
    pts = np.ascontiguousarray(curve.points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 5:
        raise ValidationError("curve needs at least 5 points (m >= 4)")
    eb, ln, obj = kernels.elastica_energy(pts, float(curve.lam))
    if not np.isfinite(obj):
        raise DegenerateCurveError("curve has a zero-length segment")
    return eb, ln, obj


def _hermite(w1, v1, w2, u2, m):
    """Cubic Hermite samples matching endpoint positions and directions,
    with tangent magnitude equal to the chord length."""
    ell = np.linalg.norm(w2 - w1)
    t = np.linspace(0.0, 1.0, m + 1)[:, None]
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * w1 + h10 * (ell * v1) + h01 * w2 + h11 * (ell * u2)


def solve_free_elastica(p1, p2, lam=1.0, m=40, max_iters=5000, tol=1e-8):
    """Minimize E_bend + lam*length from p1 to p2 (arrival direction p2.v).

    Free variables are the interior points and the two boundary-adjacent
    ray distances, which keeps the endpoint constraints exact.  Returns
    converged=False when the iteration budget runs out; a failed line
    search away from a stationary point raises ElasticaStalledError.
    """
    if m < 4:
        raise ValidationError("need m >= 4 segments")
    if lam < 0 or tol <= 0 or max_iters < 1:
        raise ValidationError("need lam >= 0, tol > 0, max_iters >= 1")
    w1, v1 = p1.w, p1.v
    w2, u2 = p2.w, p2.v
    ell = np.linalg.norm(w2 - w1)
    if ell == 0:
        raise ValidationError("endpoints must be distinct")
    pts = _hermite(w1, v1, w2, u2, m)
    ray_floor = 1e-3 * ell / m
    a = max(float((pts[1] - w1) @ v1), ray_floor)
    b = max(float((w2 - pts[m - 1]) @ u2), ray_floor)
    pts[1] = w1 + a * v1
    pts[m - 1] = w2 - b * u2
    eb, ln, f = kernels.elastica_energy(pts, lam)
    if not np.isfinite(f):
        raise DegenerateCurveError("degenerate initial curve")
    history = [f]
    step = 1.0
    converged = False
    for _ in range(max_iters):
        eb, ln, f, g = kernels.elastica_energy_grad(pts, lam)
        ga = float(g[1] @ v1)
        gb = -float(g[m - 1] @ u2)
        gint = g[2:m - 1]
        gnorm2 = ga * ga + gb * gb + float((gint * gint).sum())
        if gnorm2 <= (1e-14 * max(1.0, abs(f))) ** 2:
            converged = True
            break
        accepted = False
        for _ in range(_MAX_HALVINGS):
            a_new = a - step * ga
            b_new = b - step * gb
            if a_new > 0 and b_new > 0:
                cand = pts.copy()
                cand[1] = w1 + a_new * v1
                cand[m - 1] = w2 - b_new * u2
                cand[2:m - 1] = pts[2:m - 1] - step * gint
                _, _, f_new = kernels.elastica_energy(cand, lam)
                if f_new <= f - _ARMIJO_C * step * gnorm2:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            raise ElasticaStalledError(
                f"line search failed with gradient norm {np.sqrt(gnorm2):.3e}")
        pts, a, b = cand, a_new, b_new
        rel_drop = (f - f_new) / max(abs(f), 1e-12)
        f = f_new
        history.append(f)
        step *= 2.0
        if rel_drop < tol:
            converged = True
            break
    eb, ln, obj = kernels.elastica_energy(pts, lam)
    return ElasticaCurve(points=pts, lam=lam, converged=converged, objective=obj,
                         bend_energy=eb, length=ln,
                         objective_history=np.asarray(history))


def resample_uniform(curve_or_points, t_count):
    """t_count points on the polyline, equally spaced in arc length."""
    pts = curve_or_points.points if hasattr(curve_or_points, "points") else curve_or_points
    pts = np.asarray(pts, dtype=np.float64)
    if t_count < 2:
        raise ValidationError("need at least 2 resample points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        raise DegenerateCurveError("curve has zero length")
    targets = np.linspace(0.0, total, t_count)
    out = np.empty((t_count, pts.shape[1]))
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _point_segment_dist(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _directed_hausdorff(pa, pb):
    worst = 0.0
    for p in pa:
        best = min(_point_segment_dist(p, pb[i], pb[i + 1]) for i in range(len(pb) - 1))
        worst = max(worst, best)
    return worst


def hausdorff_distance(points_a, points_b):
    """Symmetric Hausdorff distance between two polylines."""
    pa = np.asarray(points_a, dtype=np.float64)
    pb = np.asarray(points_b, dtype=np.float64)
    return max(_directed_hausdorff(pa, pb), _directed_hausdorff(pb, pa))


def write_curve_csv(path, curve_or_points):
    """Plain CSV, one row per curve point, d columns."""
    pts = curve_or_points.points if hasattr(curve_or_points, "points") else curve_or_points
    np.savetxt(path, np.asarray(pts, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_curve_csv(path):
    pts = np.loadtxt(path, delimiter=",", dtype=np.float64)
    return np.atleast_2d(pts)
