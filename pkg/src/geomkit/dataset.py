"""Procedural pose-manifold datasets.

An asymmetric 3D point-splat object is rotated through axis grids and
rendered orthographically: rotate the points by a unit quaternion, drop z,
and additively splat each point as a Gaussian blob, clipping at 1.  The
projection is smooth, so images vary continuously with pose.

Images are (channels, height, width) float64 arrays in [0, 1].
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    AmbiguousGeodesicError,
    ConfigError,
    ObjectGenerationError,
    ValidationError,
)

_AXES = {"x": np.array([1.0, 0.0, 0.0]),
         "y": np.array([0.0, 1.0, 0.0]),
         "z": np.array([0.0, 0.0, 1.0])}

# half-width of the visible object-space square; keeps splats in frame
VIEW_EXTENT = 1.4


class Rotation:
    """Unit quaternion (w, x, y, z); q and -q are identified by
    canonicalizing to w >= 0 (first nonzero component positive if w == 0)."""

    __slots__ = ("q",)

    def __init__(self, w, x, y, z):
        q = np.array([w, x, y, z], dtype=np.float64)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-9:
            if n <= 0 or not np.isfinite(n):
                raise ValidationError("quaternion must be nonzero and finite")
            q = q / n
        else:
            q = q / n
        nz = np.nonzero(q)[0]
        if q[nz[0]] < 0:
            q = -q
        self.q = q

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle_rad):
        a = _AXES[axis] if isinstance(axis, str) else np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        half = 0.5 * angle_rad
        s = np.sin(half)
        return cls(np.cos(half), *(s * a))

    @property
    def wxyz(self):
        return tuple(self.q)

    def matrix(self):
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, points):
        return np.asarray(points, dtype=np.float64) @ self.matrix().T

    def __repr__(self):
        return f"Rotation(w={self.q[0]:.6f}, x={self.q[1]:.6f}, y={self.q[2]:.6f}, z={self.q[3]:.6f})"


def so3_distance(s1, s2):
    """Angle of the relative rotation, in [0, pi]."""
    dot = abs(float(np.dot(s1.q, s2.q)))
    return 2.0 * np.arccos(min(dot, 1.0))


def so3_geodesic(s1, s2, t):
    """Constant-speed slerp along the shorter arc; endpoints exact."""
    q1, q2 = s1.q, s2.q
    dot = float(np.dot(q1, q2))
    if dot < 0:
        q2, dot = -q2, -dot
    if dot < 1e-9:
        raise AmbiguousGeodesicError("antipodal rotations have no unique geodesic")
    if t == 0.0:
        return s1
    if t == 1.0:
        return s2
    if dot > 1.0 - 1e-12:
        q = (1.0 - t) * q1 + t * q2
    else:
        theta = np.arccos(min(dot, 1.0))
        q = (np.sin((1.0 - t) * theta) * q1 + np.sin(t * theta) * q2) / np.sin(theta)
    return Rotation(*q)


# ---------------------------------------------------------------------------
# procedural objects


@dataclass
class ObjectModel:
    """Point-splat object: positions, per-point RGB intensity, splat radii."""

    points: np.ndarray  # (n, 3)
    colors: np.ndarray  # (n, 3) in [0, 1]
    radii: np.ndarray  # (n,) in object units
    kind: str
    seed: int


def _part(rng, centers, color, radius, jitter=0.02):
    pts = np.asarray(centers, dtype=np.float64)
    pts = pts + rng.normal(scale=jitter, size=pts.shape)
    cols = np.tile(np.asarray(color, dtype=np.float64), (len(pts), 1))
    cols = np.clip(cols + rng.normal(scale=0.05, size=cols.shape), 0.05, 1.0)
    radii = np.full(len(pts), radius) * rng.uniform(0.8, 1.2, size=len(pts))
    return pts, cols, radii


def _grid2d(u, v, origin, du, dv, nu, nv):
    out = []
    for i in range(nu):
        for j in range(nv):
            out.append(np.asarray(origin) + i * du * np.asarray(u) + j * dv * np.asarray(v))
    return np.asarray(out)


def _line(p0, p1, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(p0) * (1 - t) + np.asarray(p1) * t


def _build_chairlike(rng):
    parts = []
    for sx in (-0.5, 0.5):
        for sz in (-0.5, 0.5):
            parts.append(_part(rng, _line([sx, -0.9, sz], [sx, -0.1, sz], 6),
                                [0.55, 0.35, 0.2], 0.05))
    parts.append(_part(rng, _grid2d([1, 0, 0], [0, 0, 1], [-0.55, 0.0, -0.55],
                                    0.138, 0.138, 9, 9), [0.8, 0.6, 0.3], 0.05))
    parts.append(_part(rng, _grid2d([1, 0, 0], [0, 1, 0], [-0.55, 0.1, -0.55],
                                    0.138, 0.12, 9, 7), [0.7, 0.45, 0.25], 0.05))
    return parts


def _build_planelike(rng):
    parts = [
        _part(rng, _line([-0.9, 0.0, 0.0], [0.9, 0.0, 0.0], 14), [0.75, 0.75, 0.85], 0.06),
        _part(rng, _grid2d([0, 0, 1], [1, 0, 0], [-0.15, 0.0, -0.85], 0.17, 0.12, 11, 3),
              [0.6, 0.65, 0.8], 0.05),
        _part(rng, _line([-0.85, 0.0, 0.0], [-0.9, 0.45, 0.0], 5), [0.85, 0.3, 0.25], 0.05),
        _part(rng, _grid2d([0, 0, 1], [1, 0, 0], [-0.88, 0.1, -0.3], 0.15, 0.1, 5, 2),
              [0.85, 0.35, 0.3], 0.04),
    ]
    return parts


def _build_teapotlike(rng):
    phi = np.arccos(np.clip(rng.uniform(-1, 1, 60), -1, 1))
    theta = rng.uniform(0, 2 * np.pi, 60)
    body = 0.45 * np.stack([np.sin(phi) * np.cos(theta),
                            np.cos(phi) * 0.8,
                            np.sin(phi) * np.sin(theta)], axis=1)
    parts = [
        _part(rng, body, [0.85, 0.8, 0.75], 0.06, jitter=0.0),
        _part(rng, _line([0.4, 0.0, 0.0], [0.85, 0.35, 0.0], 7), [0.8, 0.7, 0.6], 0.05),
        _part(rng, 0.3 * np.stack([-np.cos(np.linspace(-0.9, 0.9, 8)) * 1.2 - 0.6,
                                   np.sin(np.linspace(-0.9, 0.9, 8)),
                                   np.zeros(8)], axis=1) + [0.0, 0.1, 0.0],
              [0.75, 0.65, 0.55], 0.04),
        _part(rng, [[0.0, 0.5, 0.0]], [0.95, 0.9, 0.85], 0.08),
    ]
    return parts


def _build_polyhedron(rng):
    n = 32
    pts = rng.normal(size=(n, 3))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True) * rng.uniform(0.3, 0.95, (n, 1))
    cols = rng.uniform(0.2, 1.0, size=(n, 3))
    radii = rng.uniform(0.04, 0.09, size=n)
    return [(pts, cols, radii)]

_BUILDERS = {
    "chairlike": _build_chairlike,
    "planelike": _build_planelike,
    "teapotlike": _build_teapotlike,
    "random-polyhedron": _build_polyhedron,
}

OBJECT_KINDS = tuple(_BUILDERS)

# candidate exact symmetries worth ruling out
_SYMMETRY_PROBES = [
    Rotation.from_axis_angle(axis, np.deg2rad(deg))
    for axis in ("x", "y", "z")
    for deg in (90.0, 180.0)
]


def _is_symmetric(obj, tol=5e-2):
    for rot in _SYMMETRY_PROBES:
        moved = rot.rotate(obj.points)
        d = np.sqrt(((moved[:, None, :] - obj.points[None, :, :]) ** 2).sum(-1))
        if max(d.min(axis=0).max(), d.min(axis=1).max()) < tol:
            return True
    return False


def make_object(kind, seed):
    """Deterministic asymmetric object; reseeds up to 10 times if a
    symmetry probe matches, then raises ObjectGenerationError."""
    if kind not in _BUILDERS:
        raise ValidationError(f"unknown object kind {kind!r}; choose from {OBJECT_KINDS}")
    for attempt in range(10):
        rng = np.random.default_rng(np.random.SeedSequence([hash_seed(kind), seed, attempt]))
        parts = _BUILDERS[kind](rng)
        obj = ObjectModel(
            points=np.concatenate([p for p, _, _ in parts]),
            colors=np.concatenate([c for _, c, _ in parts]),
            radii=np.concatenate([r for _, _, r in parts]),
            kind=kind,
            seed=seed,
        )
        if not _is_symmetric(obj):
            return obj
    raise ObjectGenerationError(f"could not generate asymmetric {kind!r} after 10 reseeds")


def hash_seed(text):
    """Stable small integer from a string (process-independent)."""
    h = 2166136261
    for ch in text.encode("utf-8"):
        h = ((h ^ ch) * 16777619) % (1 << 32)
    return h


# ---------------------------------------------------------------------------
# rendering


def render(obj, rotation, channels, height, width):
    """Orthographic Gaussian-splat image of the rotated object."""
    if height < 8 or width < 8:
        raise ValidationError("image must be at least 8x8")
    if channels not in (1, 3):
        raise ValidationError("channels must be 1 or 3")
    moved = rotation.rotate(obj.points)
    scale_r = (height - 1) / (2.0 * VIEW_EXTENT)
    scale_c = (width - 1) / (2.0 * VIEW_EXTENT)
    rows = (VIEW_EXTENT - moved[:, 1]) * scale_r
    cols = (moved[:, 0] + VIEW_EXTENT) * scale_c
    sigmas = obj.radii * min(scale_r, scale_c)
    if channels == 3:
        amps = np.ascontiguousarray(obj.colors)
    else:
        amps = np.ascontiguousarray(obj.colors.mean(axis=1, keepdims=True))
    img = kernels.splat_accumulate(
        np.ascontiguousarray(rows), np.ascontiguousarray(cols), amps,
        np.ascontiguousarray(sigmas), height, width)
    return np.clip(img, 0.0, 1.0)


@dataclass
class PoseSample:
    rotation: Rotation
    image: np.ndarray
    index: int


@dataclass
class GridSpec:
    """Rotations about each listed axis at evenly spaced angles.

    Angles are cell centers: -max + (i + phase) * step with step =
    2*max/n_per_axis, which keeps 0 and +-max out of the grid so no two
    grid rotations coincide.
    """

    n_per_axis: int
    axes: tuple = ("x", "y", "z")
    max_angle_deg: float = 180.0
    phase: float = 0.5

    def angles_deg(self):
        step = 2.0 * self.max_angle_deg / self.n_per_axis
        return [-self.max_angle_deg + (i + self.phase) * step for i in range(self.n_per_axis)]


def grid_rotations(spec):
    return [
        Rotation.from_axis_angle(axis, np.deg2rad(a))
        for axis in spec.axes
        for a in spec.angles_deg()
    ]


def sample_grid(obj, spec, channels, height, width):
    """Render every grid rotation into a PoseSample list."""
    rots = grid_rotations(spec)
    return [
        PoseSample(rotation=r, image=render(obj, r, channels, height, width), index=i)
        for i, r in enumerate(rots)
    ]


def check_disjoint(train_spec, test_spec, tol_deg=1e-9):
    """Train/test angle sets must not overlap on any shared axis."""
    train = np.asarray(train_spec.angles_deg())
    test = np.asarray(test_spec.angles_deg())
    shared = set(train_spec.axes) & set(test_spec.axes)
    if shared and np.any(np.abs(train[:, None] - test[None, :]) < tol_deg):
        raise ConfigError("train and test rotation angles overlap")


def ground_truth_path(obj, s1, s2, n_frames, channels, height, width):
    """Render n_frames equally spaced slerp samples from s1 to s2."""
    if n_frames < 2:
        raise ValidationError("need at least 2 frames")
    ts = np.linspace(0.0, 1.0, n_frames)
    return [render(obj, so3_geodesic(s1, s2, t), channels, height, width) for t in ts]


@dataclass
class Dataset:
    obj: ObjectModel
    train: list
    test: list
    channels: int
    height: int
    width: int
    train_spec: GridSpec = None
    test_spec: GridSpec = None


def make_dataset(kind, seed, n_train_per_axis, n_test_per_axis, channels, height, width,
                 axes=("x", "y", "z"), max_angle_deg=180.0):
    train_spec = GridSpec(n_train_per_axis, tuple(axes), max_angle_deg, phase=0.5)
    test_spec = GridSpec(n_test_per_axis, tuple(axes), max_angle_deg, phase=0.25)
    check_disjoint(train_spec, test_spec)
    obj = make_object(kind, seed)
    return Dataset(
        obj=obj,
        train=sample_grid(obj, train_spec, channels, height, width),
        test=sample_grid(obj, test_spec, channels, height, width),
        channels=channels,
        height=height,
        width=width,
        train_spec=train_spec,
        test_spec=test_spec,
    )


# ---------------------------------------------------------------------------
# file formats


def write_pnm(path, image):
    """16-bit PGM (1 channel) or PPM (3 channels), big-endian samples."""
    c, h, w = image.shape
    q = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        if c == 1:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(q[0].tobytes())
        elif c == 3:
            fh.write(f"P6\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(np.moveaxis(q, 0, 2).tobytes())
        else:
            raise ValidationError("PNM images must have 1 or 3 channels")


def read_pnm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    magic, dims, maxval = parts[0], parts[1].split(), int(parts[2])
    if magic not in (b"P5", b"P6") or maxval != 65535:
        raise ValidationError(f"unsupported PNM header in {path}")
    w, h = int(dims[0]), int(dims[1])
    raw = np.frombuffer(parts[3], dtype=">u2")
    if magic == b"P5":
        img = raw.reshape(1, h, w)
    else:
        img = np.moveaxis(raw.reshape(h, w, 3), 2, 0)
    return img.astype(np.float64) / 65535.0

GSTN_MAGIC = b"GSTN"


def write_gstn(path, tensor):
    """Raw tensor sidecar: magic, u32 dims, little-endian f64 payload."""
    t = np.ascontiguousarray(tensor, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(GSTN_MAGIC)
        fh.write(struct.pack("<I", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        fh.write(t.tobytes())


def read_gstn(path):
    with open(path, "rb") as fh:
        if fh.read(4) != GSTN_MAGIC:
            raise ValidationError(f"bad GSTN magic in {path}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        return np.frombuffer(fh.read(), dtype="<f8").reshape(shape).copy()


def save_dataset(ds, out_dir):
    """Write manifest, viewable PNM images, and exact GSTN tensors."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ds.channels == 1 else "ppm"
    manifest = {
        "format": "geomkit-dataset",
        "object": {"kind": ds.obj.kind, "seed": ds.obj.seed},
        "image": {"channels": ds.channels, "height": ds.height, "width": ds.width},
        "grid": {
            "axes": list(ds.train_spec.axes),
            "max_angle_deg": ds.train_spec.max_angle_deg,
            "n_train_per_axis": ds.train_spec.n_per_axis,
            "n_test_per_axis": ds.test_spec.n_per_axis,
        },
    }
    for split in ("train", "test"):
        samples = getattr(ds, split)
        entries = []
        for s in samples:
            name = f"images/{split}_{s.index:04d}.{ext}"
            write_pnm(out / name, s.image)
            entries.append({"index": s.index, "quaternion": list(s.rotation.wxyz),
                            "image": name})
        manifest[split] = entries
        write_gstn(out / f"{split}.gstn", np.stack([s.image for s in samples]))
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return out / "manifest.json"


def load_dataset(data_dir):
    """Rebuild a Dataset from a saved directory (tensors are authoritative)."""
    root = Path(data_dir)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "geomkit-dataset":
        raise ValidationError(f"{data_dir} is not a geomkit dataset")
    img = manifest["image"]
    grid = manifest["grid"]
    obj = make_object(manifest["object"]["kind"], manifest["object"]["seed"])
    splits = {}
    for split in ("train", "test"):
        tensors = read_gstn(root / f"{split}.gstn")
        splits[split] = [
            PoseSample(rotation=Rotation(*e["quaternion"]), image=tensors[i], index=e["index"])
            for i, e in enumerate(manifest[split])
        ]
    return Dataset(
        obj=obj,
        train=splits["train"],
        test=splits["test"],
        channels=img["channels"],
        height=img["height"],
        width=img["width"],
        train_spec=GridSpec(grid["n_train_per_axis"], tuple(grid["axes"]),
                            grid["max_angle_deg"], phase=0.5),
        test_spec=GridSpec(grid["n_test_per_axis"], tuple(grid["axes"]),
                           grid["max_angle_deg"], phase=0.25),
    )
