"""Run configuration: schema-validated JSON documents and shipped presets.

A run is fully described by one JSON document with dataset, pca, train,
elastica, and eval sections.  Validation happens before any work and
rejects unknown keys, so configs cannot silently drift from the code.
"""

import copy
import hashlib
import json

import jsonschema

from . import dataset as ds
from .embed import TrainConfig
from .errors import ConfigError


def _obj(required, properties):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": required,
        "properties": properties,
    }


_POS_INT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_NUM = {"type": "number", "minimum": 0}

SCHEMA = _obj(
    ["dataset", "pca", "train", "elastica", "eval"],
    {
        "dataset": _obj(
            ["kind", "seed", "size", "grid"],
            {
                "kind": {"enum": ["chairlike", "planelike", "teapotlike", "polyhedron"]},
                "seed": _SEED,
                "size": _obj(
                    ["channels", "height", "width"],
                    {"channels": {"enum": [1, 3]}, "height": _POS_INT, "width": _POS_INT},
                ),
                "grid": _obj(
                    ["n_train_per_axis", "n_test_per_axis", "axes", "max_angle_deg"],
                    {
                        "n_train_per_axis": _POS_INT,
                        "n_test_per_axis": _POS_INT,
                        "axes": {
                            "type": "array",
                            "items": {"enum": ["x", "y", "z"]},
                            "minItems": 1,
                            "uniqueItems": True,
                        },
                        "max_angle_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
                    },
                ),
            },
        ),
        "pca": _obj(["k"], {"k": _POS_INT}),
        "train": _obj(
            ["b", "d", "n_prime", "epochs", "lrs", "weights", "mode", "seed"],
            {
                "b": _POS_INT,
                "d": _POS_INT,
                "n_prime": _POS_INT,
                "epochs": _POS_INT,
                "lrs": _obj(["g", "e"], {"g": _POS_NUM, "e": _POS_NUM}),
                "weights": _obj(
                    ["rec", "dist", "tan"],
                    {"rec": _NONNEG_NUM, "dist": _NONNEG_NUM, "tan": _NONNEG_NUM},
                ),
                "mode": {"enum": ["autoencoder", "prior-sampling"]},
                "seed": _SEED,
            },
        ),
        "elastica": _obj(
            ["lambda", "m", "tol"],
            {"lambda": _NONNEG_NUM, "m": {"type": "integer", "minimum": 4}, "tol": _POS_NUM},
        ),
        "eval": _obj(
            ["n_paths", "t_count", "angle_min_deg", "angle_max_deg"],
            {
                "n_paths": _POS_INT,
                "t_count": {"type": "integer", "minimum": 2},
                "angle_min_deg": _NONNEG_NUM,
                "angle_max_deg": _POS_NUM,
            },
        ),
    },
)

_PRESETS = {
    # fits in minutes on one CPU core; grayscale 48x48, +-60 degree sweeps
    "desk": {
        "dataset": {
            "kind": "chairlike",
            "seed": 0,
            "size": {"channels": 1, "height": 48, "width": 48},
            "grid": {"n_train_per_axis": 80, "n_test_per_axis": 160,
                     "axes": ["x", "y", "z"], "max_angle_deg": 60.0},
        },
        "pca": {"k": 64},
        "train": {"b": 32, "d": 8, "n_prime": 8, "epochs": 150,
                  "lrs": {"g": 1e-3, "e": 1e-3},
                  "weights": {"rec": 1.0, "dist": 1.0, "tan": 1.0},
                  "mode": "autoencoder", "seed": 0},
        "elastica": {"lambda": 1.0, "m": 40, "tol": 1e-8},
        "eval": {"n_paths": 20, "t_count": 10,
                 "angle_min_deg": 20.0, "angle_max_deg": 40.0},
    },
    # full-rotation RGB setting: 1200 train / 3600 test images at 128x128
    "paper": {
        "dataset": {
            "kind": "chairlike",
            "seed": 0,
            "size": {"channels": 3, "height": 128, "width": 128},
            "grid": {"n_train_per_axis": 400, "n_test_per_axis": 1200,
                     "axes": ["x", "y", "z"], "max_angle_deg": 180.0},
        },
        "pca": {"k": 768},
        "train": {"b": 128, "d": 8, "n_prime": 12, "epochs": 200,
                  "lrs": {"g": 1e-3, "e": 1e-3},
                  "weights": {"rec": 1.0, "dist": 1.0, "tan": 1.0},
                  "mode": "autoencoder", "seed": 0},
        "elastica": {"lambda": 1.0, "m": 40, "tol": 1e-8},
        "eval": {"n_paths": 114, "t_count": 10,
                 "angle_min_deg": 15.0, "angle_max_deg": 40.0},
    },
}


def validate_config(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    ev = doc["eval"]
    if ev["angle_min_deg"] >= ev["angle_max_deg"]:
        raise ConfigError("eval.angle_min_deg must be below eval.angle_max_deg")
    return doc


def preset(name):
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(_PRESETS)}")
    return copy.deepcopy(_PRESETS[name])


def load_config(source):
    """Read a config from a JSON file path, or by preset name."""
    if source in _PRESETS:
        return validate_config(preset(source))
    try:
        with open(source) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def config_hash(doc):
    """sha256 of the canonical (sorted, compact) JSON encoding."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def override_seed(doc, seed):
    """New document with both dataset and train seeds replaced."""
    out = copy.deepcopy(doc)
    out["dataset"]["seed"] = int(seed)
    out["train"]["seed"] = int(seed)
    return out


def dataset_from_config(doc):
    d = doc["dataset"]
    return ds.make_dataset(
        d["kind"], d["seed"],
        d["grid"]["n_train_per_axis"], d["grid"]["n_test_per_axis"],
        d["size"]["channels"], d["size"]["height"], d["size"]["width"],
        axes=tuple(d["grid"]["axes"]), max_angle_deg=d["grid"]["max_angle_deg"],
    )


def train_config_from(doc):
    t = doc["train"]
    return TrainConfig(
        b=t["b"], d=t["d"], n_prime=t["n_prime"], epochs=t["epochs"],
        lr_g=t["lrs"]["g"], lr_e=t["lrs"]["e"],
        alpha_rec=t["weights"]["rec"], alpha_dist=t["weights"]["dist"],
        alpha_tan=t["weights"]["tan"],
        mode=t["mode"], seed=t["seed"], pca_k=doc["pca"]["k"],
    )
