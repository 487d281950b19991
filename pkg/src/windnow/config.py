"""Run configuration: a YAML document validated against a fixed schema.

Unknown keys are rejected; every default matches the published pipeline
constants (3-neighbor graph, gamma 3 / delta 0.3 / top-8 diffusion,
36-in/6-out windows, mask ratio 0.3, queue 512, lr 0.001, batch 32,
200 epochs, offset 3, warm-up 20, kappa 10, theta 2). Flags passed on
the command line win over file values.
"""

import copy
import os

import yaml

from .errors import ConfigError
from .features import FeatureLayout
from .diffusion import DiffusionParams
from .objectives import ContrastiveConfig, LambdaSchedule
from .training import TrainConfig

_NUM = (int, float)

SCHEMA = {
    "data": {
        "dataset_dir": (str, None),
        "t_in": (int, 36),
        "t_out": (int, 6),
        "stride": (int, 1),
        "eval_stride": (int, 1),
        "max_ffill_steps": (int, 3),
    },
    "grid": {
        "rows": (int, None),      # null -> dataset manifest, else 9
        "cols": (int, None),
        "bbox": (list, None),     # [lat_min, lat_max, lon_min, lon_max]
    },
    "graph": {
        "k_neighbors": (int, 3),
    },
    "diffusion": {
        "alpha_ppr": (_NUM, 0.15),
        "gamma": (_NUM, 3.0),
        "delta": (_NUM, 0.3),
        "top_k": (int, 8),
        "renormalize": (bool, True),
    },
    "features": {
        "type_embed_dim": (int, 8),
    },
    "model": {
        "embed_dim": (int, 64),
    },
    "contrastive": {
        "strategy": (str, "augmented"),
        "tau": (_NUM, 0.07),
        "mask_ratio": (_NUM, 0.3),
        "offset": (int, 3),
        "use_moco": (bool, True),
        "queue_capacity": (int, 512),
        "momentum": (_NUM, 0.999),
        "include_positive": (bool, True),
    },
    "training": {
        "lr": (_NUM, 0.001),
        "weight_decay": (_NUM, 1e-4),
        "batch_size": (int, 32),
        "max_epochs": (int, 200),
        "early_stop_patience": (int, 15),
        "plateau_patience": (int, 5),
        "plateau_factor": (_NUM, 0.5),
        "seed": (int, 0),
        "val_fraction": (_NUM, 0.1),
    },
    "lambda_schedule": {
        "e_warmup": (int, 20),
        "kappa": (_NUM, 10.0),
        "theta": (_NUM, 2.0),
    },
    "split": {
        "withheld_ids": (list, None),   # null -> manifest flags
        "withheld_count": (int, None),
        "seed": (int, 0),
    },
    "synth": {
        "lat_min": (_NUM, 51.0),
        "lat_max": (_NUM, 53.0),
        "lon_min": (_NUM, 4.0),
        "lon_max": (_NUM, 6.5),
        "grid_rows": (int, 5),
        "grid_cols": (int, 5),
        "n_stations": (int, 16),
        "n_withheld": (int, 4),
        "duration_steps": (int, 8000),
        "mean_speed": (_NUM, 6.0),
        "base_direction_deg": (_NUM, 225.0),
        "direction_drift_deg": (_NUM, 40.0),
        "direction_variability_deg": (_NUM, 25.0),
        "speed_variability": (_NUM, 1.6),
        "gust_factor": (_NUM, 0.5),
        "correlation_length_km": (_NUM, 60.0),
        "noise_scale": (_NUM, 0.4),
        "field_memory": (_NUM, 0.97),
        "seed": (int, 7),
    },
    "output_dir": (str, "runs/default"),
}


def _validate(doc, schema, path=""):
    out = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config section '{path or '<root>'}' must be a mapping")
    for key in doc:
        if key not in schema:
            raise ConfigError(f"unknown config key '{path}{key}'")
    for key, spec in schema.items():
        here = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _validate(doc.get(key, {}) or {}, spec, here + ".")
            continue
        types, default = spec
        value = doc.get(key, default)
        if value is None:
            out[key] = None
            continue
        if types is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"'{here}' must be a boolean")
        elif types is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"'{here}' must be an integer")
        elif types is _NUM:
            if isinstance(value, bool) or not isinstance(value, _NUM):
                raise ConfigError(f"'{here}' must be a number")
            value = float(value)
        elif types is str:
            if not isinstance(value, str):
                raise ConfigError(f"'{here}' must be a string")
        elif types is list:
            if not isinstance(value, list):
                raise ConfigError(f"'{here}' must be a list")
        out[key] = value
    return out


class RunConfig:
    """Validated configuration document with typed section builders."""

    def __init__(self, doc):
        self.doc = _validate(doc or {}, SCHEMA)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls(yaml.safe_load(fh))

    def override(self, dotted_key, value):
        parts = dotted_key.split(".")
        node = self.doc
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
        self.doc = _validate(self.doc, SCHEMA)

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.doc, fh, sort_keys=True)

    def copy(self):
        return RunConfig(copy.deepcopy(self.doc))

    def __getitem__(self, key):
        return self.doc[key]

    @property
    def output_dir(self):
        out = self.doc["output_dir"]
        root = os.environ.get("WINDNOW_OUTPUT_ROOT")
        if root and not os.path.isabs(out):
            return os.path.join(root, out)
        return out

    def diffusion_params(self):
        d = self.doc["diffusion"]
        return DiffusionParams(d["alpha_ppr"], d["gamma"], d["delta"],
                               d["top_k"], d["renormalize"])

    def contrastive_config(self):
        c = self.doc["contrastive"]
        return ContrastiveConfig(c["strategy"], c["tau"], c["mask_ratio"],
                                 c["offset"], c["use_moco"], c["queue_capacity"],
                                 c["momentum"], c["include_positive"])

    def train_config(self):
        t = self.doc["training"]
        return TrainConfig(t["lr"], t["weight_decay"], t["batch_size"],
                           t["max_epochs"], t["early_stop_patience"],
                           t["plateau_patience"], t["plateau_factor"],
                           t["seed"], t["val_fraction"])

    def lambda_schedule(self):
        s = self.doc["lambda_schedule"]
        return LambdaSchedule(s["e_warmup"], s["kappa"], s["theta"])

    def feature_layout(self):
        return FeatureLayout(self.doc["features"]["type_embed_dim"])

    def synthetic_config(self):
        from .datakit import SyntheticConfig

        return SyntheticConfig(**self.doc["synth"])
