"""Geometry-preserving latent mapper.

The forward map is phi = E o P and the inverse is phi_inv = P_inv o G,
where P is a PCA projection and E, G are small MLPs.  Training augments
pixel reconstruction with two geometry terms on each side:

  * a pairwise-distance condition: row-Pearson correlation between the
    latent distance matrix and the image-space distance matrix, and
  * a tangent-space condition: the same correlation applied to Frobenius
    distances between Gram matrices of local tangent frames.

G and E are updated in strict 1:1 alternation.  In the default
autoencoder mode the latent batch for the G losses is E applied to the
image batch; in prior-sampling mode it is F(z) with z standard Gaussian
and F a frozen mapping network.
"""

import csv
import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import netcore as nc
from . import numerics
from .errors import (
    ConfigError,
    InvalidBatchError,
    NonFiniteError,
    TrainingDivergedError,
    UntrainedMapperError,
    ValidationError,
)
from .netcore import Mlp, Optimizer, load_checkpoint, mlp_from_arrays, mlp_to_arrays, save_checkpoint

TRAIN_LOG_COLUMNS = ("epoch", "step", "recon", "dist_g", "tan_g", "dist_e", "tan_e", "total")

_MODES = ("autoencoder", "prior-sampling")


@dataclass
class TrainConfig:
    b: int = 32
    d: int = 8
    n_prime: int = 8
    epochs: int = 30
    lr_g: float = 1e-3
    lr_e: float = 1e-3
    alpha_rec: float = 1.0
    alpha_dist: float = 1.0
    alpha_tan: float = 1.0
    mode: str = "autoencoder"
    seed: int = 0
    pca_k: int = 64
    hidden: tuple = (128,)
    activation: str = "tanh"
    optimizer: str = "adam"

    def __post_init__(self):
        if not (self.b > self.n_prime >= 1):
            raise ConfigError(f"need b > n_prime >= 1, got b={self.b}, n_prime={self.n_prime}")
        if min(self.alpha_rec, self.alpha_dist, self.alpha_tan) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lr_g <= 0 or self.lr_e <= 0:
            raise ConfigError("learning rates must be positive")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}")
        if self.epochs < 1 or self.d < 1 or self.pca_k < 1:
            raise ConfigError("epochs, d, and pca_k must be positive")


@dataclass
class GeomMapper:
    d: int
    image_shape: tuple = None
    pca: numerics.PcaModel = None
    encoder: Mlp = None
    generator: Mlp = None
    mapper_f: Mlp = None

    def _require_trained(self):
        if self.pca is None or self.encoder is None or self.generator is None:
            raise UntrainedMapperError("mapper has no trained weights")

    def phi_batch(self, images):
        """Images (b, c, h, w) or flattened rows (b, D) to latents (b, d)."""
        self._require_trained()
        x = np.asarray(images, dtype=np.float64)
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        return self.encoder.forward(numerics.pca_project(self.pca, x))

    def phi(self, image):
        return self.phi_batch(np.asarray(image).reshape(1, -1))[0]

    def phi_inv_batch(self, w):
        """Latents (b, d) to images (b, c, h, w), clipped to [0, 1]."""
        self._require_trained()
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        flat = numerics.pca_reconstruct(self.pca, self.generator.forward(w))
        return np.clip(flat, 0.0, 1.0).reshape((len(w),) + tuple(self.image_shape))

    def phi_inv(self, w):
        return self.phi_inv_batch(np.asarray(w)[None, :])[0]


def _batch_neighbor_idx(w, n_prime):
    """Indices of the n_prime nearest other rows, by Euclidean distance."""
    b = len(w)
    if n_prime >= b:
        raise ConfigError(f"n_prime={n_prime} must be smaller than batch size {b}")
    d = numerics.pairwise_dist(w)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :n_prime]


def _tangent_stack_var(net, pvars, center, rows_flat, b, n_prime):
    """Taped (b, n_prime, out) stack of net(rows) - net(center) differences."""
    out_nb = net.forward_var(rows_flat, pvars)
    nb = nc.reshape(out_nb, (b, n_prime, net.out_dim))
    ctr = nc.reshape(center, (b, 1, net.out_dim))
    return nc.sub(nb, ctr)


def _gram_pdist_literal(t_stack):
    """Frobenius distances between materialized Gram signatures T^T T.

    Used on the low-dimensional constant side; the high-dimensional side
    goes through the factored identity in netcore.gram_frob_pdist.
    """
    return numerics.proj_dist_matrix([numerics.gram_projection(t) for t in t_stack])


def loss_pairwise_g(mapper, w):
    """Distance-correlation loss between latents and generated images."""
    mapper._require_trained()
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or len(w) < 2:
        raise InvalidBatchError("w must be (b, d) with b >= 2")
    pvars = mapper.generator.param_vars()
    gen = mapper.generator.forward_var(w, pvars)
    lv = nc.corr_loss(numerics.pairwise_dist(w), nc.pairwise_dist(gen))
    nc.backward(lv)
    return float(lv.value), [p.grad for p in pvars]


def loss_pairwise_e(mapper, x):
    """Distance-correlation loss between encoded latents and inputs."""
    mapper._require_trained()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InvalidBatchError("x must be (b, pca_k) with b >= 2")
    pvars = mapper.encoder.param_vars()
    enc = mapper.encoder.forward_var(x, pvars)
    lv = nc.corr_loss(nc.pairwise_dist(enc), numerics.pairwise_dist(x))
    nc.backward(lv)
    return float(lv.value), [p.grad for p in pvars]


def loss_tangent_g(mapper, w, n_prime):
    """Tangent-frame Gram-distance correlation, gradients through G."""
    mapper._require_trained()
    w = np.asarray(w, dtype=np.float64)
    b = len(w)
    idx = _batch_neighbor_idx(w, n_prime)
    d_w = _gram_pdist_literal(w[idx] - w[:, None, :])
    pvars = mapper.generator.param_vars()
    gen = mapper.generator.forward_var(w, pvars)
    t_img = _tangent_stack_var(mapper.generator, pvars,
                               gen, w[idx].reshape(b * n_prime, -1), b, n_prime)
    lv = nc.corr_loss(d_w, nc.gram_frob_pdist(t_img))
    nc.backward(lv)
    return float(lv.value), [p.grad for p in pvars]


def loss_tangent_e(mapper, x, neighbors):
    """Tangent-frame Gram-distance correlation, gradients through E.

    neighbors holds each row's n_prime dataset neighbors, shape
    (b, n_prime, pca_k); tangent frames on the image side come from the
    dataset grid rather than from within the batch.
    """
    mapper._require_trained()
    x = np.asarray(x, dtype=np.float64)
    if neighbors is None:
        raise ConfigError("loss_tangent_e requires neighbor images")
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.ndim != 3 or neighbors.shape[0] != len(x) or neighbors.shape[2] != x.shape[1]:
        raise ConfigError(f"neighbors must be (b, n_prime, {x.shape[1]})")
    b, n_prime, _ = neighbors.shape
    d_x = nc.gram_frob_pdist(neighbors - x[:, None, :]).value
    pvars = mapper.encoder.param_vars()
    enc = mapper.encoder.forward_var(x, pvars)
    t_lat = _tangent_stack_var(mapper.encoder, pvars,
                               enc, neighbors.reshape(b * n_prime, -1), b, n_prime)
    lv = nc.corr_loss(nc.gram_frob_pdist(t_lat), d_x)
    nc.backward(lv)
    return float(lv.value), [p.grad for p in pvars]


# ---------------------------------------------------------------------------
# training


def _so3_neighbor_table(samples, n_prime):
    """(N, n_prime) nearest-neighbor indices by rotation distance."""
    q = np.stack([s.rotation.q for s in samples])
    dots = np.clip(np.abs(q @ q.T), 0.0, 1.0)
    dist = 2.0 * np.arccos(dots)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :n_prime]


def _g_step(mapper, opt, cfg, x, w_rec, w_geo):
    """One generator update; returns (recon, dist_g, tan_g) floats."""
    gen_net = mapper.generator
    b = len(x)
    pvars = gen_net.param_vars()
    recon_out = gen_net.forward_var(w_rec, pvars)
    recon = nc.sum_squares(nc.sub(recon_out, nc.as_var(x)), denom=b)
    gen_geo = gen_net.forward_var(w_geo, pvars)
    dist = nc.corr_loss(numerics.pairwise_dist(w_geo), nc.pairwise_dist(gen_geo))
    idx = _batch_neighbor_idx(w_geo, cfg.n_prime)
    d_w = _gram_pdist_literal(w_geo[idx] - w_geo[:, None, :])
    t_img = _tangent_stack_var(gen_net, pvars, gen_geo,
                               w_geo[idx].reshape(b * cfg.n_prime, -1), b, cfg.n_prime)
    tan = nc.corr_loss(d_w, nc.gram_frob_pdist(t_img))
    total = nc.add(nc.scale(recon, cfg.alpha_rec),
                   nc.add(nc.scale(dist, cfg.alpha_dist), nc.scale(tan, cfg.alpha_tan)))
    nc.backward(total)
    opt.step(gen_net.parameters(), [p.grad for p in pvars])
    return float(recon.value), float(dist.value), float(tan.value)


def _e_step(mapper, opt, cfg, x, neighbors):
    """One encoder update; returns (recon, dist_e, tan_e) floats."""
    enc_net, gen_net = mapper.encoder, mapper.generator
    b = len(x)
    pvars = enc_net.param_vars()
    gvars = gen_net.param_vars()  # constants: their grads are discarded
    enc = enc_net.forward_var(x, pvars)
    recon = nc.sum_squares(nc.sub(gen_net.forward_var(enc, gvars), nc.as_var(x)), denom=b)
    dist = nc.corr_loss(nc.pairwise_dist(enc), numerics.pairwise_dist(x))
    d_x = nc.gram_frob_pdist(neighbors - x[:, None, :]).value
    t_lat = _tangent_stack_var(enc_net, pvars, enc,
                               neighbors.reshape(b * cfg.n_prime, -1), b, cfg.n_prime)
    tan = nc.corr_loss(nc.gram_frob_pdist(t_lat), d_x)
    total = nc.add(nc.scale(recon, cfg.alpha_rec),
                   nc.add(nc.scale(dist, cfg.alpha_dist), nc.scale(tan, cfg.alpha_tan)))
    nc.backward(total)
    opt.step(enc_net.parameters(), [p.grad for p in pvars])
    return float(recon.value), float(dist.value), float(tan.value)


def _snapshot(mapper):
    return {
        "encoder": [p.copy() for p in mapper.encoder.parameters()],
        "generator": [p.copy() for p in mapper.generator.parameters()],
    }


def _restore(mapper, snap):
    for p, s in zip(mapper.encoder.parameters(), snap["encoder"]):
        p[...] = s
    for p, s in zip(mapper.generator.parameters(), snap["generator"]):
        p[...] = s


def train(dataset, config, log_path=None):
    """Train a GeomMapper on dataset.train; returns (mapper, log rows).

    Each step runs one G update then one E update.  The log holds one
    row per epoch with step = cumulative step count and each column the
    epoch mean of that loss term.
    """
    imgs = np.stack([s.image.reshape(-1) for s in dataset.train])
    n = len(imgs)
    if n < config.b:
        raise ConfigError(f"dataset has {n} samples, need at least b={config.b}")
    rng = np.random.default_rng(config.seed)
    pca = numerics.pca_fit(imgs, config.pca_k)
    x_all = numerics.pca_project(pca, imgs)
    dims_hidden = list(config.hidden)
    enc = Mlp.init([config.pca_k] + dims_hidden + [config.d], config.activation, rng)
    gen = Mlp.init([config.d] + dims_hidden + [config.pca_k], config.activation, rng)
    map_f = None
    if config.mode == "prior-sampling":
        map_f = Mlp.init([config.d] + dims_hidden + [config.d], config.activation, rng)
    mapper = GeomMapper(
        d=config.d,
        image_shape=(dataset.channels, dataset.height, dataset.width),
        pca=pca, encoder=enc, generator=gen, mapper_f=map_f,
    )
    nbr_table = _so3_neighbor_table(dataset.train, config.n_prime)
    opt_g = Optimizer(config.optimizer, config.lr_g)
    opt_e = Optimizer(config.optimizer, config.lr_e)
    steps_per_epoch = n // config.b
    rows = []
    last_good = _snapshot(mapper)
    gstep = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(5)
        for s in range(steps_per_epoch):
            batch = perm[s * config.b:(s + 1) * config.b]
            x = x_all[batch]
            w_rec = enc.forward(x)
            if config.mode == "prior-sampling":
                w_geo = map_f.forward(rng.standard_normal((config.b, config.d)))
            else:
                w_geo = w_rec
            try:
                recon, dist_g, tan_g = _g_step(mapper, opt_g, config, x, w_rec, w_geo)
                _, dist_e, tan_e = _e_step(mapper, opt_e, config, x, x_all[nbr_table[batch]])
            except NonFiniteError as exc:
                _restore(mapper, last_good)
                raise TrainingDivergedError(
                    f"diverged at epoch {epoch} step {s}: {exc}", last_good=mapper) from exc
            vals = np.array([recon, dist_g, tan_g, dist_e, tan_e])
            if not np.all(np.isfinite(vals)):
                _restore(mapper, last_good)
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {s}", last_good=mapper)
            sums += vals
            gstep += 1
        mean = sums / steps_per_epoch
        total = (config.alpha_rec * mean[0]
                 + config.alpha_dist * (mean[1] + mean[3])
                 + config.alpha_tan * (mean[2] + mean[4]))
        rows.append(OrderedDict(zip(TRAIN_LOG_COLUMNS,
                                    (epoch, gstep, *np.round(mean, 12), round(total, 12)))))
        last_good = _snapshot(mapper)
    if log_path is not None:
        write_train_log(log_path, rows)
    return mapper, rows


def write_train_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAIN_LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# persistence


def save_mapper(path, mapper, config=None, manifest_hash=None):
    """GSMK checkpoint plus a JSON sidecar binding config and data hash."""
    mapper._require_trained()
    path = Path(path)
    arrays = OrderedDict()
    arrays["pca.mean"] = mapper.pca.mean
    arrays["pca.components"] = mapper.pca.components
    arrays["pca.explained_variance"] = mapper.pca.explained_variance
    arrays.update(mlp_to_arrays(mapper.encoder, "encoder"))
    arrays.update(mlp_to_arrays(mapper.generator, "generator"))
    header = {
        "kind": "geom-mapper",
        "d": mapper.d,
        "image_shape": list(mapper.image_shape),
        "encoder_dims": list(mapper.encoder.layer_dims),
        "generator_dims": list(mapper.generator.layer_dims),
        "activation": mapper.encoder.activation,
        "has_mapper_f": mapper.mapper_f is not None,
    }
    if mapper.mapper_f is not None:
        arrays.update(mlp_to_arrays(mapper.mapper_f, "mapper_f"))
        header["mapper_f_dims"] = list(mapper.mapper_f.layer_dims)
    save_checkpoint(path, header, arrays)
    sidecar = {
        "checkpoint": path.name,
        "checkpoint_sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "pca": {"k": mapper.pca.k, "ambient_dim": mapper.pca.ambient_dim},
        "config": None if config is None else asdict(config),
        "dataset_manifest_sha256": manifest_hash,
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return path


def load_mapper(path):
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "geom-mapper":
        raise ValidationError(f"{path} is not a mapper checkpoint")
    pca = numerics.PcaModel(
        mean=arrays["pca.mean"],
        components=arrays["pca.components"],
        explained_variance=arrays["pca.explained_variance"],
    )
    act = header["activation"]
    mapper = GeomMapper(
        d=int(header["d"]),
        image_shape=tuple(header["image_shape"]),
        pca=pca,
        encoder=mlp_from_arrays(arrays, "encoder", header["encoder_dims"], act),
        generator=mlp_from_arrays(arrays, "generator", header["generator_dims"], act),
    )
    if header.get("has_mapper_f"):
        mapper.mapper_f = mlp_from_arrays(arrays, "mapper_f", header["mapper_f_dims"], act)
    return mapper
