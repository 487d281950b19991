"""Comparison methods: inverse-distance weighting, KNN averaging, and
ridge-regularized auto-regressive / linear-regression stencils.

The spatial methods aggregate the three nearest stations' observations
at the anchor time and reuse that value for every lead. The temporal
methods map 36 steps of neighbor history onto the six future values,
fitted on training stations standing in as pseudo-virtual targets.
Wind direction is always combined or regressed on the circle (vector
mean / sin-cos outputs decoded by atan2).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .datakit import DD, FF, GFF
from .errors import DataError
from .geo import haversine_km

log = logging.getLogger(__name__)

WIND = ("dd", "ff", "gff")


def _vector_mean_direction(dd_deg, weights):
    """Weighted circular mean in degrees; the zero resultant decodes to 0."""
    rad = np.radians(dd_deg)
    s = (weights * np.sin(rad)).sum(axis=-1)
    c = (weights * np.cos(rad)).sum(axis=-1)
    return np.degrees(np.arctan2(s, c)) % 360.0


class SpatialInterpolator:
    """IDW or plain-average KNN over the k nearest training stations."""

    def __init__(self, kind, station_lats, station_lons, station_values, k=3,
                 min_distance_km=0.001):
        if kind not in ("idw", "knn"):
            raise DataError(f"unknown spatial baseline {kind}")
        self.kind = kind
        self.k = k
        self.lats = np.asarray(station_lats, dtype=np.float64)
        self.lons = np.asarray(station_lons, dtype=np.float64)
        self.values = np.asarray(station_values, dtype=np.float64)  # [T, S, 3]
        self.min_distance_km = min_distance_km
        if self.values.shape[1] < k:
            raise DataError(f"need at least {k} stations, have {self.values.shape[1]}")

    def predict(self, lat, lon, anchors):
        """(dd, ff, gff) arrays over anchor indices, one value per anchor."""
        d = haversine_km(lat, lon, self.lats, self.lons)
        d = np.maximum(d, self.min_distance_km)
        order = np.argsort(d, kind="stable")
        anchors = np.asarray(anchors, dtype=np.int64)
        out = np.empty((len(anchors), 3))
        vals = self.values[anchors][:, order, :]   # [A, S, 3], nearest first
        dists = d[order]
        for c in range(3):
            col = vals[:, :, c]
            finite = np.isfinite(col)
            if np.any(finite.sum(axis=1) < self.k):
                raise DataError(
                    f"fewer than {self.k} stations with observations for "
                    f"{WIND[c]} at some anchors")
            pick = np.argsort(~finite, axis=1, kind="stable")[:, :self.k]
            picked = np.take_along_axis(col, pick, axis=1)
            pd = dists[pick]
            if self.kind == "idw":
                w = 1.0 / pd
                w = w / w.sum(axis=1, keepdims=True)
            else:
                w = np.full_like(pd, 1.0 / self.k)
            if c == DD:
                out[:, c] = _vector_mean_direction(picked, w)
            else:
                out[:, c] = (w * picked).sum(axis=1)
        return out[:, DD], out[:, FF], out[:, GFF]


def idw_predict(lat, lon, station_lats, station_lons, values_at_t, k=3):
    """One-shot IDW at a single time: values_at_t is [S, 3]."""
    interp = SpatialInterpolator("idw", station_lats, station_lons,
                                 values_at_t[None, :, :], k=k)
    dd, ff, gff = interp.predict(lat, lon, np.array([0]))
    return float(dd[0]), float(ff[0]), float(gff[0])


def knn_predict(lat, lon, station_lats, station_lons, values_at_t, k=3):
    interp = SpatialInterpolator("knn", station_lats, station_lons,
                                 values_at_t[None, :, :], k=k)
    dd, ff, gff = interp.predict(lat, lon, np.array([0]))
    return float(dd[0]), float(ff[0]), float(gff[0])


# ---------------------------------------------------------------------------
# temporal stencil regressors

@dataclass
class StencilFit:
    coef: np.ndarray     # [n_cols, n_out]
    x_mean: np.ndarray
    y_mean: np.ndarray


@dataclass
class LinearBaseline:
    """kind 'ar': univariate stencil (3 neighbors x t_in lags of the
    target channel); kind 'lr': cross-variable stencil (x3 channels)."""

    kind: str
    t_in: int = 36
    t_out: int = 6
    n_neighbors: int = 3
    ridge: float = 1e-3
    channel_mean: np.ndarray = None
    channel_std: np.ndarray = None
    fits: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("ar", "lr"):
            raise DataError(f"unknown linear baseline kind {self.kind}")

    def _stencil_channels(self, target_c):
        return [target_c] if self.kind == "ar" else [DD, FF, GFF]

    def n_inputs(self, target_c=FF):
        return self.n_neighbors * self.t_in * len(self._stencil_channels(target_c))

    def _design(self, neighbor_values, anchors, target_c):
        """X rows for the given anchors: neighbor-major, then channel,
        then lag (oldest to newest), z-scored per channel."""
        chans = self._stencil_channels(target_c)
        t_in = self.t_in
        blocks = []
        for j in range(self.n_neighbors):
            for c in chans:
                z = (neighbor_values[:, j, c] - self.channel_mean[c]) / self.channel_std[c]
                win = np.lib.stride_tricks.sliding_window_view(z, t_in)
                blocks.append(win[anchors - t_in + 1])
        return np.concatenate(blocks, axis=1)

    def _targets(self, target_values, anchors, target_c):
        steps = np.arange(1, self.t_out + 1)
        future = target_values[anchors[:, None] + steps[None, :], target_c]
        if target_c == DD:
            rad = np.radians(future)
            return np.concatenate([np.sin(rad), np.cos(rad)], axis=1)
        return (future - self.channel_mean[target_c]) / self.channel_std[target_c]

    def fit(self, station_values, station_lats, station_lons, fit_stride=1):
        """station_values: [T, S, 3] wind observations of training stations.

        Every station serves as a pseudo-virtual target predicted from
        its own 3 nearest neighbors; the ridge normal equations are
        accumulated over stations.
        """
        t_steps, n_stations, _ = station_values.shape
        if n_stations < self.n_neighbors + 1:
            raise DataError("not enough stations to form neighbor stencils")
        flat = station_values.reshape(-1, 3)
        self.channel_mean = np.nanmean(flat, axis=0)
        std = np.nanstd(flat, axis=0)
        self.channel_std = np.where((std == 0) | ~np.isfinite(std), 1.0, std)
        self.channel_mean = np.where(np.isfinite(self.channel_mean),
                                     self.channel_mean, 0.0)

        dist = haversine_km(station_lats[:, None], station_lons[:, None],
                            station_lats[None, :], station_lons[None, :])
        np.fill_diagonal(dist, np.inf)
        neighbor_idx = np.argsort(dist, axis=1, kind="stable")[:, :self.n_neighbors]

        anchors_all = np.arange(self.t_in - 1, t_steps - self.t_out, fit_stride)
        for target_c in (DD, FF, GFF):
            n_cols = self.n_inputs(target_c)
            n_out = 2 * self.t_out if target_c == DD else self.t_out
            gram = np.zeros((n_cols, n_cols))
            moment = np.zeros((n_cols, n_out))
            x_sum = np.zeros(n_cols)
            y_sum = np.zeros(n_out)
            count = 0
            for s in range(n_stations):
                nv = station_values[:, neighbor_idx[s], :]
                chans = self._stencil_channels(target_c)
                ok_in = np.isfinite(nv[:, :, chans]).all(axis=(1, 2))
                ok_in = np.array([ok_in[a - self.t_in + 1: a + 1].all()
                                  for a in anchors_all])
                steps = np.arange(1, self.t_out + 1)
                fut = station_values[anchors_all[:, None] + steps[None, :], s, target_c]
                ok = ok_in & np.isfinite(fut).all(axis=1)
                anchors = anchors_all[ok]
                if anchors.size == 0:
                    continue
                x = self._design(nv, anchors, target_c)
                y = self._targets(station_values[:, s, :], anchors, target_c)
                gram += x.T @ x
                moment += x.T @ y
                x_sum += x.sum(axis=0)
                y_sum += y.sum(axis=0)
                count += anchors.size
            if count == 0:
                raise DataError("no valid training anchors for baseline fit")
            x_mean = x_sum / count
            y_mean = y_sum / count
            gram_c = gram - count * np.outer(x_mean, x_mean)
            moment_c = moment - count * np.outer(x_mean, y_mean)
            system = gram_c + self.ridge * np.eye(n_cols)
            cond = np.linalg.cond(system)
            if cond > 1e12:
                log.warning("baseline %s/%s: extreme condition number %.3e",
                            self.kind, WIND[target_c], cond)
            coef = np.linalg.solve(system, moment_c)
            self.fits[target_c] = StencilFit(coef, x_mean, y_mean)
        return self

    def predict(self, neighbor_values, anchors):
        """Per-lead (dd, ff, gff) predictions, each [A, t_out].

        neighbor_values: [T, 3, 3] history of the target location's
        three nearest training stations.
        """
        anchors = np.asarray(anchors, dtype=np.int64)
        out = {}
        for target_c in (DD, FF, GFF):
            fit = self.fits[target_c]
            x = self._design(neighbor_values, anchors, target_c)
            y = (x - fit.x_mean) @ fit.coef + fit.y_mean
            if target_c == DD:
                s, c = y[:, :self.t_out], y[:, self.t_out:]
                out[target_c] = np.degrees(np.arctan2(s, c)) % 360.0
            else:
                raw = y * self.channel_std[target_c] + self.channel_mean[target_c]
                out[target_c] = np.maximum(raw, 0.0)
        return out[DD], out[FF], out[GFF]


def nearest_station_indices(lat, lon, station_lats, station_lons, k=3):
    d = haversine_km(lat, lon, station_lats, station_lons)
    return np.argsort(d, kind="stable")[:k]
