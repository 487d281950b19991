import numpy as np
import pytest

from windnow.datakit import STEP_SECONDS
from windnow.errors import DataError
from windnow.metrics import (ALL, EvalReport, SampleBlock, aggregate,
                             angular_error, mae, rmse, season_of_epoch)


def test_mae_rmse_trivials():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([1.0, -1.0], [0.0, 0.0]) == 1.0
    assert rmse([1.0, -1.0], [0.0, 0.0]) == 1.0
    assert mae([0.0, 2.0], [0.0, 0.0]) == 1.0
    assert rmse([0.0, 2.0], [0.0, 0.0]) == pytest.approx(np.sqrt(2.0))


def test_mae_empty_rejected():
    with pytest.raises(DataError):
        mae([], [])


def test_angular_error_examples():
    assert angular_error(350.0, 10.0) == 20.0
    assert angular_error(180.0, 0.0) == 180.0
    assert angular_error(45.0, 45.0) == 0.0


def test_angular_error_symmetric_and_mod360():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 360, 500)
    b = rng.uniform(0, 360, 500)
    assert np.array_equal(angular_error(a, b), angular_error(b, a))
    assert np.allclose(angular_error(a + 720.0, b), angular_error(a, b))
    assert np.allclose(angular_error(a, b - 360.0), angular_error(a, b))


def test_rmse_at_least_mae_random():
    rng = np.random.default_rng(1)
    pred = rng.uniform(0, 360, 1000)
    truth = rng.uniform(0, 360, 1000)
    err = angular_error(pred, truth)
    assert np.sqrt(np.mean(err ** 2)) >= np.mean(err)
    pred2 = rng.normal(size=1000)
    truth2 = rng.normal(size=1000)
    assert rmse(pred2, truth2) >= mae(pred2, truth2)


def test_season_boundaries():
    from datetime import datetime, timezone

    def at(month):
        return int(datetime(2024, month, 15, tzinfo=timezone.utc).timestamp())

    assert season_of_epoch(at(12)) == "DJF"
    assert season_of_epoch(at(2)) == "DJF"
    assert season_of_epoch(at(3)) == "MAM"
    assert season_of_epoch(at(7)) == "JJA"
    assert season_of_epoch(at(10)) == "SON"


def _epochs(n, start="2024-01-10"):
    from datetime import datetime, timezone

    base = int(datetime.fromisoformat(start).replace(tzinfo=timezone.utc).timestamp())
    return base + STEP_SECONDS * np.arange(n, dtype=np.int64)


def test_aggregate_single_sample():
    block = SampleBlock("m", "ff", 1, "S1", _epochs(1), np.array([3.0]),
                        np.array([1.5]))
    report = aggregate([block])
    cell = report.get("m", "ff")
    assert cell["mae"] == cell["rmse"] == 1.5
    assert cell["n_samples"] == 1


def test_aggregate_pooled_is_sample_weighted_mean():
    b1 = SampleBlock("m", "ff", 1, "S1", _epochs(4), np.zeros(4),
                     np.array([1.0, 1.0, 1.0, 1.0]))
    b2 = SampleBlock("m", "ff", 1, "S2", _epochs(2), np.zeros(2),
                     np.array([4.0, 4.0]))
    report = aggregate([b1, b2])
    s1 = report.get("m", "ff", station="S1")
    s2 = report.get("m", "ff", station="S2")
    pooled = report.get("m", "ff")
    want = (s1["mae"] * s1["n_samples"] + s2["mae"] * s2["n_samples"]) / 6
    assert pooled["mae"] == pytest.approx(want, abs=1e-12)


def test_aggregate_seasonal_split_over_a_year():
    from datetime import datetime, timezone

    base = int(datetime(2024, 1, 1, tzinfo=timezone.utc).timestamp())
    ts = base + np.arange(366, dtype=np.int64) * 86400
    block = SampleBlock("m", "gff", 2, "S1", ts, np.zeros(366),
                        np.ones(366))
    report = aggregate([block])
    seasons = {k[4] for k in report.entries
               if k[0] == "m" and k[4] != ALL}
    assert seasons == {"DJF", "MAM", "JJA", "SON"}


def test_aggregate_order_invariant():
    rng = np.random.default_rng(2)
    ts = _epochs(50)
    pred = rng.uniform(0, 10, 50)
    truth = rng.uniform(0, 10, 50)
    fwd = aggregate([SampleBlock("m", "ff", 1, "S1", ts, pred, truth)])
    perm = rng.permutation(50)
    rev = aggregate([SampleBlock("m", "ff", 1, "S1", ts[perm], pred[perm],
                                 truth[perm])])
    for key, cell in fwd.entries.items():
        assert abs(rev.entries[key]["mae"] - cell["mae"]) < 1e-12
        assert abs(rev.entries[key]["rmse"] - cell["rmse"]) < 1e-12


def test_aggregate_unknown_variable_rejected():
    block = SampleBlock("m", "temperature", 1, "S1", _epochs(1),
                        np.array([1.0]), np.array([2.0]))
    with pytest.raises(DataError):
        aggregate([block])


def test_aggregate_direction_uses_angular_metric():
    block = SampleBlock("m", "dd", 1, "S1", _epochs(2),
                        np.array([350.0, 10.0]), np.array([10.0, 350.0]))
    cell = aggregate([block]).get("m", "dd")
    assert cell["mae"] == 20.0


def test_rmse_at_least_mae_for_every_cell():
    rng = np.random.default_rng(3)
    blocks = [SampleBlock("m", "dd", lead, "S1", _epochs(40),
                          rng.uniform(0, 360, 40), rng.uniform(0, 360, 40))
              for lead in range(1, 7)]
    report = aggregate(blocks)
    for cell in report.entries.values():
        assert cell["rmse"] >= cell["mae"] - 1e-12


def test_report_json_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    block = SampleBlock("m", "ff", 3, "S2", _epochs(10),
                        rng.uniform(0, 5, 10), rng.uniform(0, 5, 10))
    report = aggregate([block])
    jpath = tmp_path / "r.json"
    cpath = tmp_path / "r.csv"
    report.write_json(jpath)
    report.write_csv(cpath)
    back = EvalReport.read_json(jpath)
    assert back.entries == report.entries
    assert cpath.read_text().splitlines()[0] == \
        "method,variable,lead,station,season,mae,rmse,n_samples"
