import numpy as np
import pytest

from windnow import datakit
from windnow.datakit import (ALL_CHANNELS, StationSeries, SyntheticConfig,
                             dataset_hash, generate_synthetic,
                             parse_station_csv, split, write_station_csv)
from windnow.errors import ConfigError, DataError

HEADER = ",".join(datakit.META_COLUMNS + ALL_CHANNELS)


def _row(sid="S1", ts="2024-01-01T00:00:00Z", lat=52.0, lon=4.5, **vals):
    cells = [sid, ts, str(lat), str(lon)]
    for ch in ALL_CHANNELS:
        cells.append(str(vals[ch]) if ch in vals else "")
    return ",".join(cells)


def test_parse_basic_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = 1704067200 + 600 * np.arange(20, dtype=np.int64)
    values = rng.uniform(0, 300, (20, 29))
    values[:, 0] %= 360.0
    values[3, 5] = np.nan
    series = StationSeries("S9", 52.123456789, 4.987654321, t, values)
    path = tmp_path / "s9.csv"
    write_station_csv(path, series)
    back = parse_station_csv(path)["S9"]
    assert np.array_equal(back.timestamps, t)
    assert back.lat == series.lat and back.lon == series.lon
    same = np.isfinite(values) == np.isfinite(back.values)
    assert same.all()
    f = np.isfinite(values)
    assert np.array_equal(values[f], back.values[f])


def test_parse_excludes_station_without_wind(tmp_path):
    path = tmp_path / "mixed.csv"
    rows = [HEADER,
            _row("W1", dd=10.0, ff=3.0, gff=4.0),
            _row("NOWIND", ta=15.0)]
    path.write_text("\n".join(rows) + "\n")
    out = parse_station_csv(path)
    assert "W1" in out and "NOWIND" not in out


def test_parse_dd_360_folds_to_zero(tmp_path):
    path = tmp_path / "fold.csv"
    path.write_text("\n".join([HEADER, _row(dd=360.0, ff=1.0, gff=2.0)]) + "\n")
    out = parse_station_csv(path)
    assert out["S1"].values[0, 0] == 0.0


def test_parse_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert parse_station_csv(path) == {}


def test_parse_missing_columns_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("station_id,timestamp,lat,lon,dd\nS1,2024-01-01T00:00:00Z,1,2,3\n")
    with pytest.raises(DataError):
        parse_station_csv(path)


def test_parse_malformed_row_skipped(tmp_path):
    path = tmp_path / "malformed.csv"
    rows = [HEADER,
            _row(ts="2024-01-01T00:00:00Z", dd=10.0, ff=1.0, gff=2.0),
            _row(ts="not-a-time", dd=20.0, ff=1.0, gff=2.0),
            _row(ts="2024-01-01T00:10:00Z", dd=30.0, ff=1.0, gff=2.0)]
    path.write_text("\n".join(rows) + "\n")
    out = parse_station_csv(path)
    assert len(out["S1"].timestamps) == 2


def test_parse_snaps_within_60s_rejects_beyond(tmp_path):
    path = tmp_path / "snap.csv"
    rows = [HEADER,
            _row(ts="2024-01-01T00:00:45Z", dd=10.0, ff=1.0, gff=2.0),
            _row(ts="2024-01-01T00:13:00Z", dd=20.0, ff=1.0, gff=2.0)]
    path.write_text("\n".join(rows) + "\n")
    out = parse_station_csv(path)
    assert list(out["S1"].timestamps) == [1704067200]


def test_parse_negative_speed_flagged_out(tmp_path):
    path = tmp_path / "neg.csv"
    path.write_text("\n".join([HEADER, _row(dd=10.0, ff=-1.0, gff=2.0)]) + "\n")
    out = parse_station_csv(path)
    assert np.isnan(out["S1"].values[0, 1])


def test_synthetic_gust_not_below_speed():
    ds = generate_synthetic(SyntheticConfig(duration_steps=200, seed=3))
    for sid in ds.station_ids:
        v = ds.observed[sid]
        assert np.all(v[:, 2] >= v[:, 1] - 1e-12)


def test_synthetic_deterministic_hash():
    cfg = SyntheticConfig(duration_steps=150, seed=11)
    h1 = dataset_hash(generate_synthetic(cfg))
    h2 = dataset_hash(generate_synthetic(cfg))
    assert h1 == h2
    h3 = dataset_hash(generate_synthetic(SyntheticConfig(duration_steps=150, seed=12)))
    assert h1 != h3


def test_synthetic_infinite_correlation_makes_stations_agree():
    cfg = SyntheticConfig(duration_steps=100, seed=4, noise_scale=0.0,
                          correlation_length_km=1e9)
    ds = generate_synthetic(cfg)
    speeds = np.stack([ds.observed[sid][:, 1] for sid in ds.station_ids], axis=1)
    spread = speeds.max(axis=1) - speeds.min(axis=1)
    # only the deterministic spatial phase terms remain; the stochastic field
    # is common to all stations
    assert spread.mean() < 0.25 * cfg.mean_speed


def test_synthetic_noiseless_truth_is_smooth_field():
    cfg = SyntheticConfig(duration_steps=100, seed=5, noise_scale=0.0,
                          gust_factor=0.0)
    ds = generate_synthetic(cfg)
    sid = ds.withheld_ids[0]
    assert np.array_equal(ds.truth[sid], ds.observed[sid])
    assert np.all(ds.truth[sid][:, 2] == ds.truth[sid][:, 1])  # gust == speed


def test_synthetic_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(n_stations=4, n_withheld=4)
    with pytest.raises(ConfigError):
        SyntheticConfig(grid_rows=2, grid_cols=2, n_stations=5)
    with pytest.raises(ConfigError):
        SyntheticConfig(mean_speed=0.0)


def test_write_and_load_dataset_round_trip(tmp_path):
    cfg = SyntheticConfig(duration_steps=60, seed=6)
    ds = generate_synthetic(cfg)
    out = tmp_path / "ds"
    h = datakit.write_dataset(ds, str(out))
    loaded = datakit.load_dataset(str(out))
    assert loaded.manifest["hash"] == h
    assert len(loaded.stations) == cfg.n_stations
    assert len(loaded.timestamps) == 60
    sid = ds.station_ids[0]
    assert np.allclose(loaded.series[sid].values, ds.observed[sid], equal_nan=True)


def test_load_dataset_requires_manifest(tmp_path):
    with pytest.raises(DataError):
        datakit.load_dataset(str(tmp_path))


def test_split_by_ids_and_count():
    ids = [f"S{i}" for i in range(33)]
    train, test = split(ids, withheld_ids=["S1", "S5"])
    assert test == ["S1", "S5"] and len(train) == 31
    train, test = split(ids, withheld_count=8, seed=3)
    assert len(test) == 8 and len(train) == 25
    assert set(train) | set(test) == set(ids)


def test_split_deterministic_same_seed():
    ids = [f"S{i}" for i in range(20)]
    a = split(ids, withheld_count=5, seed=9)
    b = split(ids, withheld_count=5, seed=9)
    assert a == b


def test_split_zero_withheld_all_train():
    ids = ["A", "B", "C"]
    train, test = split(ids)
    assert train == ids and test == []


def test_split_errors():
    with pytest.raises(ConfigError):
        split(["A"], withheld_ids=["B"])
    with pytest.raises(ConfigError):
        split(["A", "B"], withheld_ids=["A", "A"])
    with pytest.raises(ConfigError):
        split(["A"], withheld_count=2)
