"""Minimal fully-connected networks with a reverse-mode gradient engine.

The engine records a graph of array-valued nodes (Var) over a small set of
primitives: affine ops, activations, pairwise distances, Gram plane
signatures with Frobenius pairwise distances, and the row-Pearson
correlation loss.  That is exactly the vocabulary needed to backpropagate
the reconstruction, pairwise-distance, and tangent-space losses through
the encoder/generator MLPs, and nothing more.

Double precision throughout: the nets are desk-scale and gradient-check
fidelity matters more than speed.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import NonFiniteError, ShapeMismatchError, ValidationError


# ---------------------------------------------------------------------------
# reverse-mode engine


class Var:
    """Node in the recorded computation graph."""

    __slots__ = ("value", "parents", "backward_fn", "grad")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` to invert numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(root, seed=None):
    """Reverse-mode sweep from a root Var; fills .grad on every node.

    Visits nodes in reverse topological order exactly once.  `seed` defaults
    to 1 for scalar roots.
    """
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def _accum(var, grad):
    g = _unbroadcast(np.asarray(grad, dtype=np.float64), var.value.shape)
    var.grad = g if var.grad is None else var.grad + g


def add(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))
    out.backward_fn = lambda g: (_accum(a, g), _accum(b, g))
    return out


def sub(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, (a, b))
    out.backward_fn = lambda g: (_accum(a, g), _accum(b, -g))
    return out


def scale(a, c):
    a = as_var(a)
    c = float(c)
    out = Var(a.value * c, (a,))
    out.backward_fn = lambda g: _accum(a, g * c)
    return out


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value @ b.value, (a, b))

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    out.backward_fn = bw
    return out


def tanh(a):
    a = as_var(a)
    y = np.tanh(a.value)
    out = Var(y, (a,))
    out.backward_fn = lambda g: _accum(a, g * (1.0 - y * y))
    return out


def leaky_relu(a, slope=0.2):
    a = as_var(a)
    pos = a.value > 0
    out = Var(np.where(pos, a.value, slope * a.value), (a,))
    out.backward_fn = lambda g: _accum(a, g * np.where(pos, 1.0, slope))
    return out


def reshape(a, shape):
    a = as_var(a)
    out = Var(a.value.reshape(shape), (a,))
    out.backward_fn = lambda g: _accum(a, g.reshape(a.value.shape))
    return out


def gather_rows(a, idx):
    """Select rows of a 2-d Var; backward scatter-adds."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[idx], (a,))

    def bw(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        _accum(a, acc)

    out.backward_fn = bw
    return out


def sum_squares(a, denom=1.0):
    """sum(a**2) / denom as a scalar Var."""
    a = as_var(a)
    out = Var(np.sum(a.value * a.value) / denom, (a,))
    out.backward_fn = lambda g: _accum(a, (2.0 / denom) * float(g) * a.value)
    return out


def pairwise_dist(a):
    """Row Euclidean distance matrix as a differentiable op."""
    a = as_var(a)
    d = numerics.pairwise_dist(a.value)
    out = Var(d, (a,))

    def bw(g):
        w = g + g.T
        safe = np.where(d > 0.0, d, 1.0)
        r = np.where(d > 0.0, w / safe, 0.0)
        _accum(a, r.sum(axis=1)[:, None] * a.value - r @ a.value)

    out.backward_fn = bw
    return out


def _gram_cross(t):
    # C[k, m] = T_k T_m^T for a (b, n, q) stack
    return np.einsum("kiq,mjq->kmij", t, t)


def gram_frob_pdist(a):
    """Pairwise Frobenius distances between plane signatures T_k^T T_k.

    Input is a (b, n, q) stack of tangent-difference rows.  Uses the
    ||A^T A - B^T B||_f^2 = ||AA^T||^2 + ||BB^T||^2 - 2||AB^T||^2 identity,
    so the q x q Gram matrices are never materialized.
    """
    a = as_var(a)
    t = a.value
    if t.ndim != 3:
        raise ShapeMismatchError(f"expected (b, n, q) stack, got shape {t.shape}")
    c = _gram_cross(t)
    s = np.einsum("kmij,kmij->km", c, c)
    diag = np.diag(s)
    d2 = np.maximum(diag[:, None] + diag[None, :] - 2.0 * s, 0.0)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    out = Var(d, (a,))

    def bw(g):
        safe = np.where(d > 0.0, d, 1.0)
        w = np.where(d > 0.0, (g + g.T) / (2.0 * safe), 0.0)
        gs = -w
        np.fill_diagonal(gs, 0.0)
        np.fill_diagonal(gs, w.sum(axis=1))
        _accum(a, 4.0 * np.einsum("km,kmij,mjq->kiq", gs, c, t))

    out.backward_fn = bw
    return out


def corr_loss(da, db):
    """Row-Pearson correlation loss, differentiable in either argument."""
    da, db = as_var(da), as_var(db)
    loss, grad_db = numerics.corr_loss(da.value, db.value)
    out = Var(loss, (da, db))

    def bw(g):
        _accum(db, float(g) * grad_db)
        _accum(da, float(g) * numerics.corr_loss(db.value, da.value)[1])

    out.backward_fn = bw
    return out


# ---------------------------------------------------------------------------
# networks

_ACTIVATIONS = ("tanh", "leaky_relu")


@dataclass
class Mlp:
    """Fully connected net; hidden activations, identity on the last layer."""

    layer_dims: list
    weights: list
    biases: list
    activation: str = "tanh"

    @classmethod
    def init(cls, layer_dims, activation="tanh", rng=None):
        if len(layer_dims) < 2:
            raise ValidationError("need at least input and output dims")
        if activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for din, dout in zip(layer_dims[:-1], layer_dims[1:]):
            a = np.sqrt(6.0 / (din + dout))
            weights.append(rng.uniform(-a, a, size=(din, dout)))
            biases.append(np.zeros(dout))
        return cls(list(layer_dims), weights, biases, activation)

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def parameters(self):
        """Flat parameter list, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _apply_activation(self, h):
        if self.activation == "tanh":
            return tanh(h)
        return leaky_relu(h)

    def forward(self, x):
        """Plain ndarray forward pass (inference)."""
        h = np.asarray(x, dtype=np.float64)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        if h.shape[1] != self.in_dim:
            raise ShapeMismatchError(f"input dim {h.shape[1]} != {self.in_dim}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if not np.all(np.isfinite(h)):
                raise NonFiniteError(f"non-finite activation at layer {i}")
            if i < last:
                if self.activation == "tanh":
                    h = np.tanh(h)
                else:
                    h = np.where(h > 0, h, 0.2 * h)
        return h[0] if squeeze else h

    def forward_var(self, x, param_vars):
        """Taped forward pass; param_vars as returned by param_vars()."""
        h = as_var(x)
        if h.value.shape[1] != self.in_dim:
            raise ShapeMismatchError(f"input dim {h.value.shape[1]} != {self.in_dim}")
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            h = add(matmul(h, param_vars[2 * i]), param_vars[2 * i + 1])
            if not np.all(np.isfinite(h.value)):
                raise NonFiniteError(f"non-finite activation at layer {i}")
            if i < last:
                h = self._apply_activation(h)
        return h

    def param_vars(self):
        return [Var(p) for p in self.parameters()]


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class Optimizer:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")

    def step(self, params, grads):
        """Update parameter arrays in place from matching gradient arrays."""
        if len(params) != len(grads):
            raise ShapeMismatchError("parameter/gradient count mismatch")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ShapeMismatchError(f"grad shape {g.shape} != param {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient in optimizer step")
        self.step_count += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoint io

CHECKPOINT_MAGIC = b"GSMK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, header, arrays):
    """Write magic, version, JSON header, then a little-endian f64 blob.

    `arrays` is an ordered name -> f64 ndarray mapping; shapes are recorded
    in the header so the blob round-trips byte-exactly.
    """
    meta = dict(header)
    meta["_arrays"] = [[name, list(a.shape)] for name, a in arrays.items()]
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (header, name -> array dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"bad checkpoint magic {magic!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in meta.pop("_arrays"):
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValidationError("truncated checkpoint blob")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return meta, arrays


def mlp_to_arrays(net, prefix):
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_arrays(arrays, prefix, layer_dims, activation):
    weights, biases = [], []
    for i in range(len(layer_dims) - 1):
        weights.append(arrays[f"{prefix}.w{i}"])
        biases.append(arrays[f"{prefix}.b{i}"])
    return Mlp(list(layer_dims), weights, biases, activation)
