"""Per-node, per-time feature assembly and window cutting.

Feature vector layout (fixed per run): 26 met channels, 3 wind lag
channels, 4 geo embeddings, 4 time embeddings, then a learnable
node-type embedding appended by the model. Real nodes carry observed
(z-scored) met and lag values; virtual nodes get met channels from an
inverse-distance average of the 3 nearest real nodes, zeroed lag
channels (the model adds per-node learnable lag embeddings there), and
the same geo/time embeddings.
"""

import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import datakit
from .datakit import ALL_CHANNELS, DD, FF, GFF
from .errors import DataError
from .geo import nearest_real_nodes

log = logging.getLogger(__name__)

N_MET = 26
N_LAG = 3
N_GEO = 4
N_TIME = 4
CONST_WIDTH = N_MET + N_LAG + N_GEO + N_TIME  # 37
N_TARGETS = 4   # sin(dd), cos(dd), ff, gff
LAG_COLS = slice(N_MET, N_MET + N_LAG)


@dataclass(frozen=True)
class FeatureLayout:
    type_embed_dim: int = 8

    @property
    def total_width(self):
        return CONST_WIDTH + self.type_embed_dim


class NormStats:
    """Per-channel mean/std over training stations and training period only."""

    def __init__(self, mean, std, channels=ALL_CHANNELS):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.channels = tuple(channels)
        if self.mean.shape != self.std.shape or len(self.mean) != len(self.channels):
            raise DataError("norm stats shape mismatch")
        if np.any(self.std <= 0):
            raise DataError("std entries must be positive")

    @classmethod
    def from_values(cls, values):
        """values: [..., n_channels] with NaN for missing entries."""
        flat = values.reshape(-1, values.shape[-1])
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(flat, axis=0)
            std = np.nanstd(flat, axis=0)
        mean = np.where(np.isfinite(mean), mean, 0.0)
        zero_var = ~np.isfinite(std) | (std == 0.0)
        if np.any(zero_var):
            log.warning("channels with zero variance get std=1: %s",
                        [ALL_CHANNELS[i] for i in np.where(zero_var)[0]])
        std = np.where(zero_var, 1.0, std)
        return cls(mean, std)

    def normalize(self, values):
        return (values - self.mean) / self.std

    def denormalize(self, values):
        return values * self.std + self.mean

    def normalize_channel(self, values, channel):
        i = self.channels.index(channel)
        return (values - self.mean[i]) / self.std[i]

    def denormalize_channel(self, values, channel):
        i = self.channels.index(channel)
        return values * self.std[i] + self.mean[i]


def geo_embed(lat, lon):
    """[sin(lat), cos(lat), sin(lon), cos(lon)] in radians."""
    la, lo = math.radians(lat), math.radians(lon)
    return np.array([math.sin(la), math.cos(la), math.sin(lo), math.cos(lo)])


def time_embed(epoch):
    """Daily and annual sin/cos pairs for a UTC epoch timestamp."""
    dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    tod = (dt.hour * 3600 + dt.minute * 60 + dt.second) / 86400.0
    year_days = 366.0 if _is_leap(dt.year) else 365.0
    doy = (dt.timetuple().tm_yday - 1 + tod) / year_days
    return np.array([
        math.sin(2 * math.pi * tod), math.cos(2 * math.pi * tod),
        math.sin(2 * math.pi * doy), math.cos(2 * math.pi * doy),
    ])


def _is_leap(year):
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def encode_targets(dd, ff, gff, stats=None):
    """Targets as [sin(dd), cos(dd), ff, gff]; ff/gff z-scored when stats given."""
    dd = np.asarray(dd, dtype=np.float64)
    ff = np.asarray(ff, dtype=np.float64)
    gff = np.asarray(gff, dtype=np.float64)
    rad = np.radians(dd)
    if stats is not None:
        ff = stats.normalize_channel(ff, "ff")
        gff = stats.normalize_channel(gff, "gff")
    return np.stack([np.sin(rad), np.cos(rad), ff, gff], axis=-1)


def decode_targets(encoded, stats=None):
    """Inverse of encode_targets.

    Returns (dd, ff, gff, undefined) where undefined marks near-zero
    (sin, cos) pairs whose direction is reported as 0. Speeds are
    clipped at 0 after denormalization.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    s, c = encoded[..., 0], encoded[..., 1]
    undefined = (np.abs(s) < 1e-12) & (np.abs(c) < 1e-12)
    dd = np.degrees(np.arctan2(s, c)) % 360.0
    dd = np.where(undefined, 0.0, dd)
    ff = encoded[..., 2]
    gff = encoded[..., 3]
    if stats is not None:
        ff = stats.denormalize_channel(ff, "ff")
        gff = stats.denormalize_channel(gff, "gff")
    return dd, np.maximum(ff, 0.0), np.maximum(gff, 0.0), undefined


def idw_weights(distances):
    """Inverse-distance weights normalized to sum 1."""
    inv = 1.0 / np.asarray(distances, dtype=np.float64)
    return inv / inv.sum()


def approx_virtual_met(neighbor_values, weights):
    """Weighted average over neighbor met channels with missing handling.

    neighbor_values: [..., k, n_channels] (NaN = missing); weights: [k].
    Per channel, missing neighbors are dropped and the weights
    renormalized; a channel missing at every neighbor comes back NaN
    (imputed by the training mean downstream).
    """
    v = np.asarray(neighbor_values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    finite = np.isfinite(v)
    wexp = np.broadcast_to(w[..., :, None], v.shape) * finite
    den = wexp.sum(axis=-2)
    num = np.where(finite, v, 0.0)
    num = (wexp * num).sum(axis=-2)
    with np.errstate(invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def ffill_limit(values, limit):
    """Forward-fill NaNs along axis 0, at most `limit` consecutive steps."""
    v = np.asarray(values, dtype=np.float64)
    t = v.shape[0]
    flat = v.reshape(t, -1)
    idx = np.arange(t)[:, None]
    seen = np.where(np.isfinite(flat), idx, -1)
    last = np.maximum.accumulate(seen, axis=0)
    gap = idx - last
    take = (last >= 0) & (gap <= limit)
    filled = np.where(take, flat[np.maximum(last, 0), np.arange(flat.shape[1])[None, :]],
                      flat)
    return filled.reshape(v.shape)


@dataclass
class FeatureSet:
    """Assembled constants for one dataset/node-set combination."""

    x_const: np.ndarray       # [T, N, 37] normalized features (type block excluded)
    labels: np.ndarray        # [T, n_real, 4] encoded targets
    valid_input: np.ndarray   # [T] all real-node inputs finite
    valid_label: np.ndarray   # [T] all real-node targets finite
    timestamps: np.ndarray
    node_set: object
    layout: FeatureLayout
    stats: NormStats
    virtual_nearest_real: np.ndarray  # [n_virtual] node index of nearest real node


@dataclass
class WindowSample:
    """One training example: index anchored into a shared FeatureSet."""

    fs: FeatureSet
    anchor: int      # index of time t; inputs cover [t - t_in + 1, t]
    t_in: int
    t_out: int
    offset: int      # future shift available for the multi-step strategy
    has_future: bool

    @property
    def anchor_time(self):
        return int(self.fs.timestamps[self.anchor])

    @property
    def X(self):
        return self.fs.x_const[self.anchor - self.t_in + 1: self.anchor + 1]

    @property
    def Y(self):
        return self.fs.labels[self.anchor + 1: self.anchor + 1 + self.t_out]

    @property
    def future_X(self):
        if not self.has_future:
            return None
        lo = self.anchor - self.t_in + 1 + self.offset
        return self.fs.x_const[lo: lo + self.t_in]


def assemble_features(dataset, node_set, layout, stats=None, max_ffill_steps=3):
    """Build the normalized constant feature tensor and encoded labels.

    Only training stations (those mapped to real nodes) contribute
    inputs and statistics; labels are taken from the original
    (un-filled) observations.
    """
    t_steps = len(dataset.timestamps)
    n = len(node_set)
    raw = np.full((t_steps, n, len(ALL_CHANNELS)), np.nan)
    for node in node_set.nodes:
        if node.kind == "real":
            series = dataset.series.get(node.station_id)
            if series is None:
                raise DataError(f"no series for training station {node.station_id}")
            raw[:, node.id, :] = series.values

    real = node_set.real_indices
    raw_orig_real = raw[:, real, :].copy()

    if stats is None:
        stats = NormStats.from_values(raw_orig_real)

    # inputs may bridge short gaps; labels must not
    raw[:, real, :] = ffill_limit(raw[:, real, :], max_ffill_steps)

    # virtual met channels: inverse-distance average of 3 nearest real nodes
    for v in node_set.virtual_indices:
        node = node_set.nodes[v]
        nbr_idx, nbr_dist = nearest_real_nodes(node_set, node.lat, node.lon, k=3)
        w = idw_weights(nbr_dist)
        raw[:, v, 3:] = approx_virtual_met(raw[:, nbr_idx, 3:], w)

    valid_input = np.isfinite(raw[:, real, :]).all(axis=(1, 2))

    z = stats.normalize(raw)
    virtual = node_set.virtual_indices
    z[:, virtual, :3] = 0.0         # lag slots filled by learnable embeddings
    z = np.nan_to_num(z, nan=0.0)   # all-neighbor-missing met -> training mean

    x_const = np.empty((t_steps, n, CONST_WIDTH))
    x_const[:, :, :N_MET] = z[:, :, 3:]
    x_const[:, :, LAG_COLS] = z[:, :, :3]
    geo = np.stack([geo_embed(nd.lat, nd.lon) for nd in node_set.nodes])
    x_const[:, :, N_MET + N_LAG: N_MET + N_LAG + N_GEO] = geo[None, :, :]
    tembed = np.stack([time_embed(t) for t in dataset.timestamps])
    x_const[:, :, CONST_WIDTH - N_TIME:] = tembed[:, None, :]

    labels = encode_targets(raw_orig_real[:, :, DD], raw_orig_real[:, :, FF],
                            raw_orig_real[:, :, GFF], stats)
    valid_label = np.isfinite(raw_orig_real[:, :, :3]).all(axis=(1, 2))
    labels = np.nan_to_num(labels, nan=0.0)

    nearest = np.zeros(len(virtual), dtype=np.int64)
    for i, v in enumerate(virtual):
        node = node_set.nodes[v]
        nbr_idx, _ = nearest_real_nodes(node_set, node.lat, node.lon, k=1)
        nearest[i] = nbr_idx[0]

    return FeatureSet(x_const, labels, valid_input, valid_label,
                      np.asarray(dataset.timestamps), node_set, layout, stats, nearest)


def make_windows(fs, t_in=36, t_out=6, stride=1, offset=3):
    """Sliding windows over the feature set; windows crossing gaps drop out."""
    t_steps = len(fs.timestamps)
    if t_steps < t_in + t_out:
        log.warning("series length %d shorter than %d; no windows",
                    t_steps, t_in + t_out)
        return []
    ok_in = np.concatenate([[False] * (t_in - 1),
                            _rolling_all(fs.valid_input, t_in)])
    windows = []
    for anchor in range(t_in - 1, t_steps - t_out, stride):
        if not ok_in[anchor]:
            continue
        if not fs.valid_label[anchor + 1: anchor + 1 + t_out].all():
            continue
        has_future = (anchor + offset < t_steps
                      and bool(ok_in[min(anchor + offset, t_steps - 1)]))
        windows.append(WindowSample(fs, anchor, t_in, t_out, offset, has_future))
    return windows


def _rolling_all(mask, width):
    """rolling_all[i] = mask[i-width+1 .. i] all true, for i >= width-1."""
    c = np.concatenate([[0], np.cumsum(mask.astype(np.int64))])
    return (c[width:] - c[:-width]) == width
