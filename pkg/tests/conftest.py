import numpy as np
import pytest

from windnow import datakit, diffusion, features, geo


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset on disk: 5x5 grid, 16 stations, 400 steps."""
    cfg = datakit.SyntheticConfig(duration_steps=400, seed=7)
    ds = datakit.generate_synthetic(cfg)
    out = tmp_path_factory.mktemp("tiny_ds")
    datakit.write_dataset(ds, str(out))
    return cfg, ds, str(out)


@pytest.fixture(scope="session")
def tiny_context(tiny_dataset):
    """Loaded dataset plus node set, diffusion matrix, and features."""
    cfg, ds, path = tiny_dataset
    dataset = datakit.load_dataset(path)
    grid = geo.GridSpec(cfg.lat_min, cfg.lat_max, cfg.lon_min, cfg.lon_max,
                        cfg.grid_rows, cfg.grid_cols)
    stations = [(m["id"], m["lat"], m["lon"]) for m in dataset.stations]
    node_set = geo.build_node_set(stations, grid, ds.withheld_ids)
    adj = geo.knn_adjacency(node_set, 3)
    s_mix = diffusion.build_diffusion(adj, node_set.kinds,
                                      diffusion.DiffusionParams())
    fs = features.assemble_features(dataset, node_set, features.FeatureLayout())
    truth = {sid: dataset.series[sid].values for sid in ds.withheld_ids}
    return {
        "cfg": cfg, "synthetic": ds, "path": path, "dataset": dataset,
        "grid": grid, "node_set": node_set, "adj": adj, "s_mix": s_mix,
        "fs": fs, "truth": truth,
    }


def toy_graph(n_real=4, n_virtual=2, seed=3):
    """Hand-built node set + diffusion matrix for toy-scale tests."""
    rng = np.random.default_rng(seed)
    grid = geo.GridSpec(50.0, 53.0, 4.0, 7.0, 2, 3)
    stations = []
    cells = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    n_total = n_real + n_virtual
    assert n_total <= len(cells)
    for i in range(n_total):
        r, c = cells[i]
        lat = 50.0 + (r + 0.2 + 0.6 * rng.random()) * 1.5
        lon = 4.0 + (c + 0.2 + 0.6 * rng.random()) * 1.0
        stations.append((f"T{i}", lat, lon))
    withheld = [f"T{i}" for i in range(n_real, n_total)]
    node_set = geo.build_node_set(stations, grid, withheld)
    adj = geo.knn_adjacency(node_set, 2)
    s_mix = diffusion.build_diffusion(adj, node_set.kinds,
                                      diffusion.DiffusionParams())
    return node_set, adj, s_mix
