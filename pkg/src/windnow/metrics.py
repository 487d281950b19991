"""MAE/RMSE (angular for wind direction) grouped by variable, lead,
station, and meteorological season, plus pooled marginals."""

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import DataError

VARIABLES = ("dd", "ff", "gff")
SEASONS = ("DJF", "MAM", "JJA", "SON")
ALL = "all"

_SEASON_BY_MONTH = {12: "DJF", 1: "DJF", 2: "DJF", 3: "MAM", 4: "MAM", 5: "MAM",
                    6: "JJA", 7: "JJA", 8: "JJA", 9: "SON", 10: "SON", 11: "SON"}


def mae(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise DataError("mae requires equal, non-empty inputs")
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise DataError("rmse requires equal, non-empty inputs")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def angular_error(pred_deg, truth_deg):
    """Shorter-arc separation in degrees, in [0, 180]."""
    diff = np.abs(np.asarray(pred_deg, dtype=np.float64) % 360.0
                  - np.asarray(truth_deg, dtype=np.float64) % 360.0)
    return np.minimum(diff, 360.0 - diff)


def season_of_epoch(epoch):
    month = datetime.fromtimestamp(int(epoch), tz=timezone.utc).month
    return _SEASON_BY_MONTH[month]


@dataclass
class SampleBlock:
    """Prediction/truth pairs for one (method, variable, lead, station)."""

    method: str
    variable: str
    lead: int
    station: str
    timestamps: np.ndarray
    pred: np.ndarray
    truth: np.ndarray


def _errors(variable, pred, truth):
    if variable == "dd":
        return angular_error(pred, truth)
    return np.abs(np.asarray(pred, dtype=np.float64)
                  - np.asarray(truth, dtype=np.float64))


class EvalReport:
    """Metric cells keyed by (method, variable, lead, station, season),
    where lead/station/season may be the pooled marker 'all'."""

    def __init__(self):
        self.entries = {}

    def put(self, key, errors):
        if errors.size == 0:
            return
        self.entries[key] = {
            "mae": float(np.mean(errors)),
            "rmse": float(np.sqrt(np.mean(errors ** 2))),
            "n_samples": int(errors.size),
        }

    def get(self, method, variable, lead=ALL, station=ALL, season=ALL):
        return self.entries.get((method, variable, str(lead), station, season))

    def rows(self):
        for key in sorted(self.entries):
            method, variable, lead, station, season = key
            cell = self.entries[key]
            yield {"method": method, "variable": variable, "lead": lead,
                   "station": station, "season": season, **cell}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "variable", "lead", "station", "season",
                        "mae", "rmse", "n_samples"])
            for r in self.rows():
                w.writerow([r["method"], r["variable"], r["lead"], r["station"],
                            r["season"], repr(r["mae"]), repr(r["rmse"]),
                            r["n_samples"]])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump({"cells": list(self.rows())}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path):
        report = cls()
        with open(path) as fh:
            doc = json.load(fh)
        for r in doc["cells"]:
            key = (r["method"], r["variable"], str(r["lead"]), r["station"],
                   r["season"])
            report.entries[key] = {"mae": r["mae"], "rmse": r["rmse"],
                                   "n_samples": r["n_samples"]}
        return report


def aggregate(blocks):
    """Build an EvalReport from sample blocks.

    Emits the full (lead, station, season) cross plus marginals over
    each dimension and the pooled cell, per method and variable.
    """
    report = EvalReport()
    by_mv = {}
    for b in blocks:
        if b.variable not in VARIABLES:
            raise DataError(f"unknown variable {b.variable}")
        errs = _errors(b.variable, b.pred, b.truth)
        seasons = np.array([season_of_epoch(t) for t in b.timestamps])
        by_mv.setdefault((b.method, b.variable), []).append(
            (b.lead, b.station, seasons, errs))

    for (method, variable), items in by_mv.items():
        leads = sorted({lead for lead, _, _, _ in items})
        stations = sorted({st for _, st, _, _ in items})
        pooled = []
        for lead, station, seasons, errs in items:
            pooled.append(errs)
            for season in set(seasons):
                sel = errs[seasons == season]
                report.put((method, variable, str(lead), station, season), sel)
            report.put((method, variable, str(lead), station, ALL), errs)
        report.put((method, variable, ALL, ALL, ALL), np.concatenate(pooled))
        for lead in leads:
            sel = np.concatenate([e for ld, _, _, e in items if ld == lead])
            report.put((method, variable, str(lead), ALL, ALL), sel)
        for station in stations:
            sel = np.concatenate([e for _, st, _, e in items if st == station])
            report.put((method, variable, ALL, station, ALL), sel)
        for season in SEASONS:
            sel = [e[s == season] for _, _, s, e in items]
            sel = [x for x in sel if x.size]
            if sel:
                report.put((method, variable, ALL, ALL, season),
                           np.concatenate(sel))
    return report
