"""Station data: CSV schema, parsing, synthetic generation, train/test splits.

The on-disk schema is one CSV per station with columns
    station_id, timestamp, lat, lon, <29 variable codes>
where timestamps are UTC ISO-8601 on a strict 10-minute grid (rows
within 60 s of a grid point are snapped, others rejected). Missing
values are empty fields. A dataset directory holds stations/<id>.csv
plus manifest.json (station list, bbox, period, content hash).
"""

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

STEP_SECONDS = 600

WIND_CHANNELS = ("dd", "ff", "gff")
MET_CHANNELS = (
    "ta", "rh", "pp", "zm", "qg", "D1H", "dr", "R6H", "R12H", "R24H",
    "rg", "ss", "td", "Tgn", "Tgn6", "Tgn12", "Tgn14", "Tn", "Tn6",
    "Tn12", "Tn14", "Tx", "Tx6", "Tx12", "Tx24", "ww-10",
)
ALL_CHANNELS = WIND_CHANNELS + MET_CHANNELS  # 29
META_COLUMNS = ("station_id", "timestamp", "lat", "lon")

DD, FF, GFF = 0, 1, 2


@dataclass
class StationSeries:
    station_id: str
    lat: float
    lon: float
    timestamps: np.ndarray  # epoch seconds, int64, ascending
    values: np.ndarray      # [T, 29] float64, NaN where missing

    def has_any_wind(self):
        return bool(np.any(np.isfinite(self.values[:, :3])))


def _parse_timestamp(text):
    from datetime import datetime, timezone

    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(epoch):
    from datetime import datetime, timezone

    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def parse_station_csv(path):
    """Parse one schema CSV into per-station series.

    Rows with unparseable fields are skipped with a line-number log.
    Timestamps are snapped to the 10-minute grid when within 60 s,
    otherwise the row is rejected. Stations recording no wind variables
    at all are excluded. dd values of exactly 360 are folded to 0.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            log.warning("%s: empty file", path)
            return {}
        missing = [c for c in META_COLUMNS + ALL_CHANNELS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing mandatory columns {missing}")

        raw = {}
        flags = {"dd_folded": 0, "out_of_range": 0, "gust_below_speed": 0,
                 "skipped_rows": 0, "snapped": 0}
        for lineno, row in enumerate(reader, start=2):
            try:
                sid = row["station_id"].strip()
                if not sid:
                    raise ValueError("empty station_id")
                ts = _parse_timestamp(row["timestamp"])
                lat = float(row["lat"])
                lon = float(row["lon"])
                vals = np.full(len(ALL_CHANNELS), np.nan)
                for k, ch in enumerate(ALL_CHANNELS):
                    cell = row[ch].strip()
                    if cell != "":
                        vals[k] = float(cell)
            except (ValueError, KeyError) as e:
                flags["skipped_rows"] += 1
                log.warning("%s:%d: skipped malformed row (%s)", path, lineno, e)
                continue

            offset = ts % STEP_SECONDS
            if offset != 0:
                delta = offset if offset <= STEP_SECONDS // 2 else offset - STEP_SECONDS
                if abs(delta) <= 60:
                    ts -= delta
                    flags["snapped"] += 1
                else:
                    flags["skipped_rows"] += 1
                    log.warning("%s:%d: timestamp off-grid by %ds, row rejected",
                                path, lineno, delta)
                    continue

            if np.isfinite(vals[DD]):
                if vals[DD] == 360.0:
                    vals[DD] = 0.0
                    flags["dd_folded"] += 1
                elif not (0.0 <= vals[DD] < 360.0):
                    flags["out_of_range"] += 1
                    vals[DD] = np.nan
            for k in (FF, GFF):
                if np.isfinite(vals[k]) and vals[k] < 0.0:
                    flags["out_of_range"] += 1
                    vals[k] = np.nan
            if (np.isfinite(vals[FF]) and np.isfinite(vals[GFF])
                    and vals[GFF] < vals[FF]):
                flags["gust_below_speed"] += 1

            raw.setdefault(sid, []).append((ts, lat, lon, vals))

    out = {}
    for sid, rows in raw.items():
        rows.sort(key=lambda r: r[0])
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        values = np.stack([r[3] for r in rows])
        series = StationSeries(sid, rows[0][1], rows[0][2], ts, values)
        if not series.has_any_wind():
            log.warning("station %s records no wind variables; excluded", sid)
            continue
        out[sid] = series
    for name, count in flags.items():
        if count:
            log.info("%s: %s=%d", path, name, count)
    return out


def write_station_csv(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(META_COLUMNS) + list(ALL_CHANNELS))
        for t, vals in zip(series.timestamps, series.values):
            row = [series.station_id, format_timestamp(t),
                   repr(series.lat), repr(series.lon)]
            row += ["" if not np.isfinite(v) else repr(float(v)) for v in vals]
            w.writerow(row)


# ---------------------------------------------------------------------------
# synthetic generation

@dataclass
class SyntheticConfig:
    lat_min: float = 51.0
    lat_max: float = 53.0
    lon_min: float = 4.0
    lon_max: float = 6.5
    grid_rows: int = 5
    grid_cols: int = 5
    n_stations: int = 16
    n_withheld: int = 4
    duration_steps: int = 8000
    mean_speed: float = 6.0
    base_direction_deg: float = 225.0
    direction_drift_deg: float = 40.0
    direction_variability_deg: float = 25.0
    speed_variability: float = 1.6
    gust_factor: float = 0.5
    correlation_length_km: float = 60.0
    noise_scale: float = 0.4
    field_memory: float = 0.97  # per-step AR coefficient of the latent drivers
    seed: int = 7
    start_epoch: int = 1704067200  # 2024-01-01T00:00:00Z

    def __post_init__(self):
        if self.n_withheld >= self.n_stations:
            raise ConfigError("n_withheld must be smaller than n_stations")
        if self.n_stations > self.grid_rows * self.grid_cols:
            raise ConfigError("more stations than grid cells")
        for name in ("mean_speed", "speed_variability", "correlation_length_km"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.gust_factor < 0 or self.noise_scale < 0:
            raise ConfigError("gust_factor and noise_scale must be non-negative")


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    station_ids: list
    lats: np.ndarray
    lons: np.ndarray
    withheld_ids: list
    timestamps: np.ndarray
    observed: dict = field(default_factory=dict)  # sid -> [T, 29], obs noise applied
    truth: dict = field(default_factory=dict)     # withheld sid -> [T, 29], noiseless


def _kernel(lat, lon, anchors_lat, anchors_lon, length_km):
    from .geo import haversine_km

    d = haversine_km(lat, lon, anchors_lat, anchors_lon)
    return np.exp(-(d ** 2) / (2.0 * length_km ** 2))


def generate_synthetic(cfg):
    """Smooth spatiotemporal wind field sampled at synthetic stations.

    Direction drifts on a slow daily sinusoid plus a spatially
    correlated perturbation (Gaussian kernel over a set of anchor
    points, correlation length from config). Speed is a mean-reverting
    AR(1) field with the same spatial structure plus a predictable
    multi-hour oscillation; gusts multiply speed by 1 + gust_factor *
    |noise|. Training stations get observation noise; the noiseless
    field is retained at withheld stations as evaluation truth.
    """
    rng = np.random.default_rng(cfg.seed)
    t_steps = cfg.duration_steps
    n_cells = cfg.grid_rows * cfg.grid_cols

    cells = rng.choice(n_cells, size=cfg.n_stations, replace=False)
    cell_h = (cfg.lat_max - cfg.lat_min) / cfg.grid_rows
    cell_w = (cfg.lon_max - cfg.lon_min) / cfg.grid_cols
    lats = np.empty(cfg.n_stations)
    lons = np.empty(cfg.n_stations)
    for s, c in enumerate(cells):
        r, q = divmod(int(c), cfg.grid_cols)
        lats[s] = cfg.lat_min + (r + 0.1 + 0.8 * rng.random()) * cell_h
        lons[s] = cfg.lon_min + (q + 0.1 + 0.8 * rng.random()) * cell_w
    station_ids = [f"S{s:02d}" for s in range(cfg.n_stations)]
    withheld = sorted(rng.choice(cfg.n_stations, size=cfg.n_withheld, replace=False))
    withheld_ids = [station_ids[i] for i in withheld]

    n_anchors = 6
    a_lat = cfg.lat_min + rng.random(n_anchors) * (cfg.lat_max - cfg.lat_min)
    a_lon = cfg.lon_min + rng.random(n_anchors) * (cfg.lon_max - cfg.lon_min)
    k_station = np.stack([
        _kernel(lats[s], lons[s], a_lat, a_lon, cfg.correlation_length_km)
        for s in range(cfg.n_stations)
    ])  # [S, M]
    k_norm = np.sqrt((k_station ** 2).sum(axis=1, keepdims=True))
    k_station = k_station / np.maximum(k_norm, 1e-12)

    # anchor-level AR(1) drivers, one set for speed and one for direction
    rho = cfg.field_memory
    innov = math.sqrt(1.0 - rho * rho)
    a_speed = np.zeros((t_steps, n_anchors))
    a_dir = np.zeros((t_steps, n_anchors))
    eps_speed = rng.standard_normal((t_steps, n_anchors))
    eps_dir = rng.standard_normal((t_steps, n_anchors))
    for t in range(1, t_steps):
        a_speed[t] = rho * a_speed[t - 1] + innov * eps_speed[t]
        a_dir[t] = rho * a_dir[t - 1] + innov * eps_dir[t]

    timestamps = cfg.start_epoch + STEP_SECONDS * np.arange(t_steps, dtype=np.int64)
    day_frac = (timestamps - cfg.start_epoch) / 86400.0
    # predictable slow oscillations: daily direction drift, 30 h speed swell
    dir_wave = cfg.direction_drift_deg * np.sin(2.0 * np.pi * day_frac)
    speed_wave = 0.35 * cfg.mean_speed * np.sin(2.0 * np.pi * day_frac * 24.0 / 30.0)

    speed_field = (cfg.mean_speed + speed_wave[:, None]
                   + cfg.speed_variability * a_speed @ k_station.T)  # [T, S]
    speed_field = np.maximum(speed_field, 0.1)
    dir_field = (cfg.base_direction_deg + dir_wave[:, None]
                 + cfg.direction_variability_deg * a_dir @ k_station.T) % 360.0
    gust_noise = np.abs(rng.standard_normal((t_steps, cfg.n_stations)))
    gust_field = speed_field * (1.0 + cfg.gust_factor * gust_noise)

    # met channels: per-channel smooth base + oscillation + a coupling to the
    # latent wind drivers (pressure, temperature and humidity co-vary with
    # the flow, which is what lets virtual-node approximations carry signal)
    met = np.empty((t_steps, cfg.n_stations, len(MET_CHANNELS)))
    periods_h = rng.choice([6.0, 12.0, 24.0, 48.0], size=len(MET_CHANNELS))
    bases = rng.uniform(0.0, 20.0, size=len(MET_CHANNELS))
    amps = rng.uniform(0.5, 3.0, size=len(MET_CHANNELS))
    phases = rng.uniform(0.0, 1.0, size=(len(MET_CHANNELS), cfg.n_stations))
    speed_gain = rng.uniform(0.5, 2.5, size=len(MET_CHANNELS))
    dir_gain = rng.uniform(0.0, 1.0, size=len(MET_CHANNELS))
    for c in range(len(MET_CHANNELS)):
        osc = np.sin(2.0 * np.pi * (day_frac[:, None] * 24.0 / periods_h[c]
                                    + phases[c][None, :]))
        met[:, :, c] = (bases[c] + amps[c] * osc
                        + speed_gain[c] * a_speed @ k_station.T
                        + dir_gain[c] * a_dir @ k_station.T)

    obs_noise = rng.standard_normal((t_steps, cfg.n_stations, 3)) * cfg.noise_scale
    met_noise = rng.standard_normal(met.shape) * cfg.noise_scale * 0.5

    ds = SyntheticDataset(cfg, station_ids, lats, lons, withheld_ids, timestamps)
    for s, sid in enumerate(station_ids):
        truth = np.empty((t_steps, len(ALL_CHANNELS)))
        truth[:, DD] = dir_field[:, s]
        truth[:, FF] = speed_field[:, s]
        truth[:, GFF] = gust_field[:, s]
        truth[:, 3:] = met[:, s, :]
        if sid in withheld_ids:
            ds.truth[sid] = truth
            ds.observed[sid] = truth  # withheld files carry the noiseless truth
        else:
            obs = truth.copy()
            obs[:, DD] = (obs[:, DD] + 10.0 * obs_noise[:, s, 0]) % 360.0
            obs[:, FF] = np.maximum(obs[:, FF] + obs_noise[:, s, 1], 0.0)
            obs[:, GFF] = obs[:, GFF] + obs_noise[:, s, 2]
            obs[:, GFF] = np.maximum(obs[:, GFF], obs[:, FF])
            obs[:, 3:] += met_noise[:, s, :]
            ds.observed[sid] = obs
    return ds


def dataset_hash(ds):
    h = hashlib.sha256()
    h.update(ds.timestamps.tobytes())
    for sid in ds.station_ids:
        h.update(sid.encode())
        h.update(np.ascontiguousarray(ds.observed[sid]).tobytes())
    return h.hexdigest()


def write_dataset(ds, out_dir):
    """Write per-station CSVs plus the dataset manifest; returns the hash."""
    stations_dir = os.path.join(out_dir, "stations")
    os.makedirs(stations_dir, exist_ok=True)
    for s, sid in enumerate(ds.station_ids):
        series = StationSeries(sid, float(ds.lats[s]), float(ds.lons[s]),
                               ds.timestamps, ds.observed[sid])
        write_station_csv(os.path.join(stations_dir, f"{sid}.csv"), series)
    content_hash = dataset_hash(ds)
    manifest = {
        "schema_version": 1,
        "seed": ds.config.seed,
        "bbox": [ds.config.lat_min, ds.config.lat_max,
                 ds.config.lon_min, ds.config.lon_max],
        "grid_rows": ds.config.grid_rows,
        "grid_cols": ds.config.grid_cols,
        "step_seconds": STEP_SECONDS,
        "start": format_timestamp(ds.timestamps[0]),
        "steps": int(len(ds.timestamps)),
        "stations": [
            {"id": sid, "lat": float(ds.lats[s]), "lon": float(ds.lons[s]),
             "withheld": sid in ds.withheld_ids, "file": f"stations/{sid}.csv"}
            for s, sid in enumerate(ds.station_ids)
        ],
        "hash": content_hash,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return content_hash


@dataclass
class Dataset:
    manifest: dict
    stations: list            # station meta dicts in manifest order
    series: dict              # sid -> StationSeries on the common grid
    timestamps: np.ndarray    # common 10-minute grid


def load_dataset(dataset_dir, include_withheld=True):
    """Load a dataset directory onto a common 10-minute time grid."""
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.json in {dataset_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    series = {}
    stations = []
    for meta in manifest["stations"]:
        if meta["withheld"] and not include_withheld:
            continue
        path = os.path.join(dataset_dir, meta["file"])
        if not os.path.exists(path):
            if meta["withheld"]:
                log.warning("withheld station file missing: %s", path)
                continue
            raise DataError(f"station file missing: {path}")
        parsed = parse_station_csv(path)
        if meta["id"] not in parsed:
            log.warning("station %s produced no usable series", meta["id"])
            continue
        stations.append(meta)
        series[meta["id"]] = parsed[meta["id"]]

    if not series:
        raise DataError(f"no usable stations in {dataset_dir}")
    t0 = min(s.timestamps[0] for s in series.values())
    t1 = max(s.timestamps[-1] for s in series.values())
    grid = np.arange(t0, t1 + STEP_SECONDS, STEP_SECONDS, dtype=np.int64)
    pos = {t: i for i, t in enumerate(grid)}
    for sid, s in series.items():
        values = np.full((len(grid), len(ALL_CHANNELS)), np.nan)
        idx = np.array([pos[t] for t in s.timestamps], dtype=np.int64)
        values[idx] = s.values
        series[sid] = StationSeries(sid, s.lat, s.lon, grid, values)
    return Dataset(manifest, stations, series, grid)


def split(station_ids, withheld_ids=None, withheld_count=None, seed=None):
    """Deterministic train/test partition of station ids."""
    ids = list(station_ids)
    if withheld_ids is not None:
        withheld = list(withheld_ids)
        unknown = set(withheld) - set(ids)
        if unknown:
            raise ConfigError(f"unknown withheld ids: {sorted(unknown)}")
        if len(set(withheld)) != len(withheld):
            raise ConfigError("duplicate withheld ids")
    elif withheld_count is not None:
        if withheld_count > len(ids):
            raise ConfigError("withheld_count exceeds station count")
        rng = np.random.default_rng(seed)
        withheld = [ids[i] for i in
                    sorted(rng.choice(len(ids), size=withheld_count, replace=False))]
    else:
        withheld = []
    train = [s for s in ids if s not in set(withheld)]
    return train, withheld
