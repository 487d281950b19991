"""Shared wiring between the CLI commands: dataset -> node set -> graph
-> diffusion -> features -> windows."""

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import datakit, diffusion, features, geo
from .errors import ConfigError

log = logging.getLogger(__name__)


def method_name(strategy, use_moco, use_diffusion):
    base = "gcn_diff" if use_diffusion else "gcn_plain"
    if strategy == "none":
        return base
    suffix = "_moco" if use_moco else ""
    return f"{base}_{strategy}{suffix}"


@dataclass
class Context:
    cfg: object
    dataset: object
    node_set: object
    grid: object
    adjacency: np.ndarray
    s_mix: object            # sparse propagation matrix used by the encoder
    fs: object               # FeatureSet
    truth_by_station: dict
    use_diffusion: bool


def resolve_withheld(cfg, dataset):
    split_cfg = cfg["split"]
    all_ids = [m["id"] for m in dataset.manifest["stations"]]
    if split_cfg["withheld_ids"] is not None:
        _, withheld = datakit.split(all_ids, withheld_ids=split_cfg["withheld_ids"])
    elif split_cfg["withheld_count"] is not None:
        _, withheld = datakit.split(all_ids, withheld_count=split_cfg["withheld_count"],
                                    seed=split_cfg["seed"])
    else:
        withheld = [m["id"] for m in dataset.manifest["stations"] if m["withheld"]]
    return withheld


def build_grid(cfg, dataset):
    g = cfg["grid"]
    manifest = dataset.manifest
    rows = g["rows"] if g["rows"] is not None else manifest.get("grid_rows", 9)
    cols = g["cols"] if g["cols"] is not None else manifest.get("grid_cols", 9)
    bbox = g["bbox"] if g["bbox"] is not None else manifest.get("bbox")
    if bbox is None:
        raise ConfigError("grid.bbox must be set when the dataset manifest "
                          "carries none")
    return geo.GridSpec(bbox[0], bbox[1], bbox[2], bbox[3], rows, cols)


def build_context(cfg, use_diffusion=True, need_features=True):
    data_cfg = cfg["data"]
    if not data_cfg["dataset_dir"]:
        raise ConfigError("data.dataset_dir is not set")
    dataset = datakit.load_dataset(data_cfg["dataset_dir"])
    withheld = resolve_withheld(cfg, dataset)
    grid = build_grid(cfg, dataset)

    stations = [(m["id"], m["lat"], m["lon"]) for m in dataset.stations]
    node_set = geo.build_node_set(stations, grid, withheld)
    adj = geo.knn_adjacency(node_set, cfg["graph"]["k_neighbors"])

    if use_diffusion:
        s_mix = diffusion.build_diffusion(adj, node_set.kinds, cfg.diffusion_params())
    else:
        s_mix = diffusion.from_dense_rows(diffusion.transition(adj))

    fs = None
    truth = {}
    if need_features:
        fs = features.assemble_features(dataset, node_set, cfg.feature_layout(),
                                        max_ffill_steps=data_cfg["max_ffill_steps"])
        for sid in withheld:
            series = dataset.series.get(sid)
            if series is not None:
                truth[sid] = series.values
    return Context(cfg, dataset, node_set, grid, adj, s_mix, fs, truth,
                   use_diffusion)


def windows_for(ctx, stride_key="stride"):
    d = ctx.cfg["data"]
    return features.make_windows(ctx.fs, t_in=d["t_in"], t_out=d["t_out"],
                                 stride=d[stride_key],
                                 offset=ctx.cfg["contrastive"]["offset"])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
