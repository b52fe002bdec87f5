"""Command-line front end for reproducible generation, training, and
evaluation runs.

Every subcommand loads a schema-validated config (file path or preset
name), honors the GEOMKIT_SEED environment override, and writes a JSON
run manifest recording config hash, seeds, code version, and git-style
blob hashes of the produced artifacts.  Exit codes: 0 success, 1
validation error, 2 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfg
from . import dataset as ds
from . import elastica as el
from . import embed, evaluate, netcore, numerics
from .errors import ConfigError, GeomkitError, NumericalError, ValidationError


def _blob_sha1(path):
    """Hash a file the way git hashes blobs."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def _load_config(source):
    doc = cfg.load_config(source)
    env = os.environ.get("GEOMKIT_SEED")
    if env is not None:
        try:
            doc = cfg.override_seed(doc, int(env))
        except ValueError as exc:
            raise ConfigError(f"GEOMKIT_SEED must be an integer, got {env!r}") from exc
    return doc


def _write_manifest(path, doc, artifacts):
    manifest = {
        "code_version": __version__,
        "config": doc,
        "config_hash": cfg.config_hash(doc),
        "seeds": {"dataset": doc["dataset"]["seed"], "train": doc["train"]["seed"]},
        "artifacts": {name: _blob_sha1(p) for name, p in sorted(artifacts.items())},
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _prepare_out_dir(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    doc = _load_config(args.config)
    out = _prepare_out_dir(args.out, args.force)
    data = cfg.dataset_from_config(doc)
    ds.save_dataset(data, out)
    artifacts = {
        "manifest.json": out / "manifest.json",
        "train.gstn": out / "train.gstn",
        "test.gstn": out / "test.gstn",
    }
    _write_manifest(out / "run.json", doc, artifacts)
    print(f"wrote {len(data.train)} train / {len(data.test)} test samples to {out}")
    return 0


def cmd_train(args):
    doc = _load_config(args.config)
    data = ds.load_dataset(args.data)
    tc = cfg.train_config_from(doc)
    t0 = time.perf_counter()
    mapper, rows = embed.train(data, tc, log_path=args.log)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    embed.save_mapper(out, mapper, config=tc,
                      manifest_hash=_blob_sha1(Path(args.data) / "manifest.json"))
    artifacts = {out.name: out}
    if args.log:
        artifacts["train_log"] = args.log
    _write_manifest(out.with_suffix(".run.json"), doc, artifacts)
    print(f"trained {tc.epochs} epochs in {elapsed:.1f}s; "
          f"final total loss {rows[-1]['total']:.6f}; checkpoint {out}")
    return 0


def cmd_interpolate(args):
    doc = _load_config(args.config)
    mapper = embed.load_mapper(args.ckpt)
    data = ds.load_dataset(args.data)
    t_count = args.t if args.t is not None else doc["eval"]["t_count"]
    res = evaluate.interpolate_path(
        mapper, data, args.i, args.j,
        lam=doc["elastica"]["lambda"], t_count=t_count,
        n_prime=doc["train"]["n_prime"], m=doc["elastica"]["m"],
        tol=doc["elastica"]["tol"])
    out = _prepare_out_dir(args.out, args.force)
    ext = "pgm" if data.channels == 1 else "ppm"
    artifacts = {}
    for t in range(t_count):
        name = f"frame_{t:03d}.{ext}"
        ds.write_pnm(out / name, res.frames[t])
        artifacts[name] = out / name
    if res.latent_samples is not None:  # absent for the i == j constant path
        el.write_curve_csv(out / "curve.csv", res.latent_samples)
        artifacts["curve.csv"] = out / "curve.csv"
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write("t,image_se,velocity_se\n")
        for t in range(t_count):
            ev = f"{res.velocity_se[t]:.17g}" if t < t_count - 1 else ""
            fh.write(f"{t},{res.image_se[t]:.17g},{ev}\n")
    artifacts["metrics.csv"] = out / "metrics.csv"
    _write_manifest(out / "run.json", doc, artifacts)
    print(f"interpolated path {args.i} -> {args.j} ({t_count} frames) into {out}")
    return 0


def cmd_eval(args):
    doc = _load_config(args.config)
    mapper = embed.load_mapper(args.ckpt)
    data = ds.load_dataset(args.data)
    ev = doc["eval"]
    suite = evaluate.evaluate_suite(
        mapper, data,
        angle_min_deg=ev["angle_min_deg"], angle_max_deg=ev["angle_max_deg"],
        n_paths=ev["n_paths"], t_count=ev["t_count"],
        seed=doc["dataset"]["seed"],
        lam=doc["elastica"]["lambda"], n_prime=doc["train"]["n_prime"],
        m=doc["elastica"]["m"], tol=doc["elastica"]["tol"], jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluate.write_suite_csv(out, suite.rows)
    _write_manifest(out.with_suffix(out.suffix + ".run.json"), doc, {out.name: out})
    interior = [r for r in suite.rows if 0 < r["t"] < ev["t_count"] - 1]
    for method in evaluate.METHODS:
        mean = np.mean([r["mean_se"] for r in interior if r["method"] == method])
        print(f"{method}: mean interior SE {mean:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_denoise(args):
    doc = _load_config(args.config)
    mapper = embed.load_mapper(args.ckpt)
    data = ds.load_dataset(args.data)
    with open(args.paths) as fh:
        spec = json.load(fh)
    pairs = spec["pairs"] if isinstance(spec, dict) else spec
    if not pairs:
        raise ConfigError(f"{args.paths} lists no index pairs")
    bank = [
        evaluate.interpolate_path(
            mapper, data, int(i), int(j),
            lam=doc["elastica"]["lambda"], t_count=doc["eval"]["t_count"],
            n_prime=doc["train"]["n_prime"], m=doc["elastica"]["m"],
            tol=doc["elastica"]["tol"])
        for i, j in pairs
    ]
    noisy = ds.read_pnm(args.image)
    clean = evaluate.denoise(mapper, noisy, bank)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.write_pnm(out, clean)
    _write_manifest(out.with_suffix(out.suffix + ".run.json"), doc, {out.name: out})
    print(f"denoised {args.image} against {len(bank)} paths -> {out}")
    return 0


# ---------------------------------------------------------------------------
# selfcheck


def _check_corr_affine(rng):
    pts = rng.normal(size=(9, 4))
    d1 = numerics.pairwise_dist(pts)
    a = rng.uniform(0.5, 2.0, size=(9, 1))
    b = rng.uniform(-1.0, 1.0, size=(9, 1))
    val, _ = numerics.corr_loss(d1, a * d1 + b)
    assert val < 1e-12, f"corr_loss {val:.3e} not ~0 under row-affine map"


def _tiny_mapper(rng):
    pca = numerics.pca_fit(rng.uniform(size=(12, 18)), 6)
    return embed.GeomMapper(
        d=3, image_shape=(1, 3, 6), pca=pca,
        encoder=netcore.Mlp.init([6, 10, 3], "tanh", rng),
        generator=netcore.Mlp.init([3, 10, 6], "tanh", rng))


def _fd_check(loss_fn, net, rng, h=1e-6, tol=1e-4):
    _, grads = loss_fn()
    flat = np.concatenate([g.ravel() for g in grads])
    params = net.parameters()
    sizes = [p.size for p in params]
    u = rng.normal(size=flat.size)
    u /= np.linalg.norm(u)
    chunks = np.split(u, np.cumsum(sizes)[:-1])
    for p, c in zip(params, chunks):
        p += h * c.reshape(p.shape)
    f_plus = loss_fn()[0]
    for p, c in zip(params, chunks):
        p -= 2 * h * c.reshape(p.shape)
    f_minus = loss_fn()[0]
    for p, c in zip(params, chunks):
        p += h * c.reshape(p.shape)
    fd = (f_plus - f_minus) / (2 * h)
    rel = abs(float(flat @ u) - fd) / max(abs(fd), 1e-10)
    assert rel < tol, f"gradient rel err {rel:.3e} >= {tol}"


def _check_gradients(rng):
    mapper = _tiny_mapper(rng)
    w = rng.normal(size=(6, 3))
    x = rng.normal(size=(6, 6))
    neighbors = rng.normal(size=(6, 4, 6))

    def recon_loss():
        pvars = [netcore.Var(p) for p in mapper.generator.parameters()]
        out = mapper.generator.forward_var(netcore.as_var(mapper.encoder.forward(x)), pvars)
        loss = netcore.sum_squares(netcore.sub(out, netcore.as_var(x)), denom=len(x))
        netcore.backward(loss)
        return float(loss.value), [v.grad for v in pvars]

    checks = [
        ("reconstruction", recon_loss, mapper.generator),
        ("pairwise-g", lambda: embed.loss_pairwise_g(mapper, w), mapper.generator),
        ("pairwise-e", lambda: embed.loss_pairwise_e(mapper, x), mapper.encoder),
        ("tangent-g", lambda: embed.loss_tangent_g(mapper, w, 4), mapper.generator),
        ("tangent-e", lambda: embed.loss_tangent_e(mapper, x, neighbors), mapper.encoder),
    ]
    for name, fn, net in checks:
        _fd_check(fn, net, rng)
        print(f"ok - gradient {name}")


def _check_elastica():
    basis = np.zeros((2, 3))
    basis[0, 0] = basis[1, 1] = 1.0
    # collinear boundary directions admit the straight chord
    v = np.array([1.0, 0.0, 0.0])
    curve = el.solve_free_elastica(el.DirectedPoint(np.zeros(3), v),
                                   el.DirectedPoint(2.0 * v, v), lam=1.0, m=40)
    eb, ln, _ = el.energy(curve)
    assert eb < 1e-6, f"straight-line bend energy {eb:.3e}"
    assert abs(ln - 2.0) < 1e-6, f"straight-line length {ln}"
    print("ok - elastica straight line")

    m = 200
    ang = np.linspace(-np.pi / 2, np.pi / 2, m + 1)
    half_circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    eb, _, _ = el.energy(el.ElasticaCurve(points=half_circle, lam=0.0,
                                          converged=True, objective=0.0,
                                          bend_energy=0.0, length=0.0))
    rel = abs(eb - np.pi / 2) / (np.pi / 2)
    assert rel < 0.02, f"half-circle energy off by {rel:.3%}"
    print("ok - elastica half-circle energy")

    p1 = el.DirectedPoint(np.zeros(2), np.array([0.0, 1.0]))
    p2 = el.DirectedPoint(np.array([1.0, 0.0]), np.array([0.0, -1.0]))
    lengths = [el.energy(el.solve_free_elastica(p1, p2, lam=lam, m=40))[1]
               for lam in (0.2, 1.0, 5.0)]
    assert lengths[0] >= lengths[1] >= lengths[2], f"lengths not monotone: {lengths}"
    print("ok - elastica length monotone in lambda")


def cmd_selfcheck(args):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    _check_corr_affine(rng)
    print("ok - corr_loss affine invariance")
    _check_gradients(rng)
    _check_elastica()
    print(f"selfcheck passed in {time.perf_counter() - t0:.1f}s")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="geomkit",
        description="pose-manifold learning and elastica interpolation")
    parser.add_argument("--version", action="version", version=f"geomkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", default="desk",
                       help="config JSON path or preset name (default: desk)")

    p = sub.add_parser("gen-data", help="render a rotation dataset")
    add_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a geometry-preserving mapper")
    add_config(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="checkpoint path (.gsmk)")
    p.add_argument("--log", default=None, help="optional training-log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="elastica path between two test views")
    add_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--i", type=int, required=True, help="first test sample index")
    p.add_argument("--j", type=int, required=True, help="second test sample index")
    p.add_argument("--t", type=int, default=None,
                   help="frames along the path (default: config eval.t_count)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="compare elastica against baselines")
    add_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--jobs", type=int, default=1, help="parallel path workers")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("denoise", help="project a corrupted image onto paths")
    add_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--image", required=True, help="corrupted PGM/PPM image")
    p.add_argument("--paths", required=True,
                   help='JSON file with test index pairs, e.g. {"pairs": [[0, 7]]}')
    p.add_argument("--out", required=True, help="output PGM/PPM path")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("selfcheck", help="run gradient and solver sanity checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        # selfcheck failures are numerical findings
        print(f"selfcheck failed: {exc}", file=sys.stderr)
        return 2
    except GeomkitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
