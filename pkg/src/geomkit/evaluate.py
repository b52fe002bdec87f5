"""Path interpolation, metrics against ground-truth videos, and denoising.

A path between two test views is produced by estimating image tangents
at the endpoints, pushing them into latent space, solving a free
elastica between the directed latent points, and mapping the resampled
curve back through the inverse mapper.  Straight-line baselines in
latent and pixel space provide the comparison; squared-error metrics
are computed against frames rendered along the ground-truth rotation
geodesic.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import csv
import numpy as np

from . import dataset as ds
from .elastica import DirectedPoint, pick_directions, resample_uniform, solve_free_elastica
from .errors import ConfigError, GeomkitError, ShapeMismatchError, ValidationError
from .tangent import estimate_tangents, pushforward

SUITE_COLUMNS = ("method", "t", "mean_se", "std_se", "mean_ev", "std_ev")
METHODS = ("elastica", "latent-lerp", "pixel-lerp")


@dataclass
class PathResult:
    frames: np.ndarray  # (T, c, h, w)
    curve: object  # ElasticaCurve for the elastica method, else None
    image_se: np.ndarray  # (T,)
    velocity_se: np.ndarray  # (T - 1,)
    pair: tuple  # endpoint rotations (s_i, s_j)
    method: str
    latent_samples: np.ndarray = field(default=None, repr=False)  # (T, d)

    def __post_init__(self):
        t = len(self.frames)
        if len(self.image_se) != t or len(self.velocity_se) != t - 1:
            raise ValidationError("metric arrays must have lengths T and T-1")


def image_se(frames, gt):
    """Per-frame squared error ||I'_t - I_t||^2."""
    frames = np.asarray(frames, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if frames.shape != gt.shape:
        raise ShapeMismatchError(f"frames {frames.shape} vs ground truth {gt.shape}")
    diff = frames - gt
    return (diff * diff).reshape(len(frames), -1).sum(axis=1)


def velocity_se(frames, gt):
    """Per-step velocity error ||(I'_{t+1} - I'_t) - (I_{t+1} - I_t)||^2."""
    frames = np.asarray(frames, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if frames.shape != gt.shape:
        raise ShapeMismatchError(f"frames {frames.shape} vs ground truth {gt.shape}")
    if len(frames) < 2:
        raise ValidationError("need at least 2 frames for velocity error")
    dv = np.diff(frames, axis=0) - np.diff(gt, axis=0)
    return (dv * dv).reshape(len(frames) - 1, -1).sum(axis=1)


def _identity_path(sample, t_count, method):
    frames = np.repeat(sample.image[None], t_count, axis=0)
    return PathResult(frames=frames, curve=None,
                      image_se=np.zeros(t_count), velocity_se=np.zeros(t_count - 1),
                      pair=(sample.rotation, sample.rotation), method=method)


def _finish(dataset, si, sj, frames, curve, latents, t_count, method):
    frames = np.asarray(frames)
    frames[0] = si.image
    frames[-1] = sj.image
    gt = np.stack(ds.ground_truth_path(dataset.obj, si.rotation, sj.rotation,
                                       t_count, dataset.channels, dataset.height,
                                       dataset.width))
    return PathResult(frames=frames, curve=curve,
                      image_se=image_se(frames, gt), velocity_se=velocity_se(frames, gt),
                      pair=(si.rotation, sj.rotation), method=method,
                      latent_samples=latents)


def interpolate_path(mapper, dataset, i, j, lam=1.0, t_count=10, n_prime=8, m=40,
                     tol=1e-8):
    """Elastica interpolation between test samples i and j."""
    samples = dataset.test
    si, sj = samples[i], samples[j]
    if i == j:
        return _identity_path(si, t_count, "elastica")
    try:
        t_img_i = estimate_tangents([si] + dataset.train, 0, n_prime)
        t_img_j = estimate_tangents([sj] + dataset.train, 0, n_prime)
        w1 = mapper.phi(si.image)
        w2 = mapper.phi(sj.image)
        t_lat_i = pushforward(mapper, si.image, t_img_i)
        t_lat_j = pushforward(mapper, sj.image, t_img_j)
        picked = pick_directions(w1, t_lat_i, w2, t_lat_j)
        curve = solve_free_elastica(DirectedPoint(w1, picked.v1),
                                    DirectedPoint(w2, picked.u2),
                                    lam=lam, m=m, tol=tol)
        latents = resample_uniform(curve, t_count)
    except GeomkitError as exc:
        exc.args = exc.args + (f"while interpolating path {i} -> {j}",)
        raise
    frames = mapper.phi_inv_batch(latents)
    return _finish(dataset, si, sj, frames, curve, latents, t_count, "elastica")


def baseline_linear_latent(mapper, dataset, i, j, t_count=10):
    """Straight line in latent space mapped through the inverse mapper."""
    si, sj = dataset.test[i], dataset.test[j]
    if i == j:
        return _identity_path(si, t_count, "latent-lerp")
    w1 = mapper.phi(si.image)
    w2 = mapper.phi(sj.image)
    ts = np.linspace(0.0, 1.0, t_count)[:, None]
    latents = (1.0 - ts) * w1 + ts * w2
    frames = mapper.phi_inv_batch(latents)
    return _finish(dataset, si, sj, frames, None, latents, t_count, "latent-lerp")


def baseline_linear_image(dataset, i, j, t_count=10):
    """Straight line in pixel space."""
    si, sj = dataset.test[i], dataset.test[j]
    if i == j:
        return _identity_path(si, t_count, "pixel-lerp")
    ts = np.linspace(0.0, 1.0, t_count)[:, None, None, None]
    frames = (1.0 - ts) * si.image + ts * sj.image
    return _finish(dataset, si, sj, frames, None, None, t_count, "pixel-lerp")


# ---------------------------------------------------------------------------
# evaluation suite


def sample_test_pairs(dataset, angle_min_deg, angle_max_deg, n_paths, seed):
    """n_paths (i, j) index pairs of test samples with rotation gaps in
    the given range, sampled without replacement."""
    q = np.stack([s.rotation.q for s in dataset.test])
    gaps = 2.0 * np.arccos(np.clip(np.abs(q @ q.T), 0.0, 1.0))
    lo, hi = np.deg2rad(angle_min_deg), np.deg2rad(angle_max_deg)
    ii, jj = np.nonzero(np.triu((gaps >= lo) & (gaps <= hi), k=1))
    if len(ii) < n_paths:
        raise ConfigError(
            f"only {len(ii)} test pairs with gap in [{angle_min_deg}, "
            f"{angle_max_deg}] degrees; need {n_paths}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(ii), size=n_paths, replace=False)
    return [(int(ii[p]), int(jj[p])) for p in pick]


@dataclass
class SuiteResult:
    rows: list  # summary dicts with SUITE_COLUMNS keys
    paths: dict  # method -> list of PathResult, in pair order
    pairs: list  # the evaluated (i, j) index pairs


def evaluate_suite(mapper, dataset, angle_min_deg=20.0, angle_max_deg=40.0,
                   n_paths=20, t_count=10, seed=0, lam=1.0, n_prime=8, m=40,
                   tol=1e-8, jobs=1):
    """Evaluate all methods over sampled rotation pairs.

    Paths may be computed in parallel; aggregation is by stored path
    index, so summaries do not depend on completion order.
    """
    pairs = sample_test_pairs(dataset, angle_min_deg, angle_max_deg, n_paths, seed)

    def run_pair(pair):
        i, j = pair
        return (
            interpolate_path(mapper, dataset, i, j, lam=lam, t_count=t_count,
                             n_prime=n_prime, m=m, tol=tol),
            baseline_linear_latent(mapper, dataset, i, j, t_count=t_count),
            baseline_linear_image(dataset, i, j, t_count=t_count),
        )
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_pair, pairs))
    else:
        results = [run_pair(p) for p in pairs]
    paths = {method: [res[k] for res in results] for k, method in enumerate(METHODS)}
    rows = []
    for method in METHODS:
        se = np.stack([p.image_se for p in paths[method]])  # (n_paths, T)
        ev = np.stack([p.velocity_se for p in paths[method]])  # (n_paths, T-1)
        for t in range(t_count):
            has_ev = t < t_count - 1
            rows.append({
                "method": method,
                "t": t,
                "mean_se": float(se[:, t].mean()),
                "std_se": float(se[:, t].std()),
                "mean_ev": float(ev[:, t].mean()) if has_ev else float("nan"),
                "std_ev": float(ev[:, t].std()) if has_ev else float("nan"),
            })
    return SuiteResult(rows=rows, paths=paths, pairs=pairs)


def write_suite_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUITE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# denoising


def denoise(mapper, noisy, path_bank):
    """Project a corrupted image onto the nearest interpolated-path point.

    The bank's resampled latent samples form the candidate set; the
    winner (by Euclidean latent distance) is mapped back to image space.
    """
    candidates = [p.latent_samples for p in path_bank
                  if p.latent_samples is not None and len(p.latent_samples)]
    if not candidates:
        raise ConfigError("path bank has no latent samples")
    bank = np.concatenate(candidates, axis=0)
    w = mapper.phi(noisy)
    nearest = bank[np.argmin(((bank - w) ** 2).sum(axis=1))]
    return mapper.phi_inv(nearest)
