import json
import math
import os

import numpy as np
import pytest

from skewgrad.diagnostics import (
    ConvergenceAborted,
    ConvergenceTable,
    RunIOError,
    RunRecord,
    count_local_maxima,
    first_increase,
    is_monotone,
    l2_error,
    observed_orders,
    read_series,
    read_snapshot,
    run_convergence_study,
    write_run,
)
from skewgrad.hilbert import DimensionError, InnerProduct


def test_first_increase_and_tolerance():
    assert first_increase([3.0, 2.0, 2.0, 1.0]) is None
    assert first_increase([3.0, 2.0, 2.5, 1.0]) == 2
    assert is_monotone([1.0, 1.0 + 1e-13])
    assert not is_monotone([1.0, 1.0 + 1e-9])
    assert first_increase([1.0, 0.5, math.nan]) == 2


def test_count_local_maxima():
    t = np.linspace(0, 4 * np.pi, 400)
    assert count_local_maxima(np.exp(-t)) == 0
    assert count_local_maxima(np.sin(t) * np.exp(-0.1 * t)) == 2


def test_l2_error_and_dimension_check():
    ip = InnerProduct((4,), 0.25)
    assert l2_error(ip, np.ones(4), np.zeros(4)) == pytest.approx(1.0)
    assert l2_error(ip, np.ones(4), lambda x: np.zeros(4), coords=None) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        l2_error(ip, np.ones(4), np.ones(3))


def test_observed_orders_exact_power_law():
    taus = 0.1 / 2.0 ** np.arange(5)
    np.testing.assert_allclose(observed_orders(3.0 * taus ** 2), 2.0)


def test_convergence_table_single_level_star():
    tab = run_convergence_study(lambda lv: {"v": lv[1] ** 2}, [(0.1, 0.05)], ["v"])
    rows = tab.rows()
    assert rows[0]["Order_v"] == "★"
    assert "★" in tab.format()


def test_convergence_table_orders_and_csv(tmp_path):
    ladder = [(1 / 128, 0.05), (1 / 256, 0.025), (1 / 512, 0.0125)]
    tab = run_convergence_study(lambda lv: {"v": 2 * lv[1] ** 2, "phi": lv[1]}, ladder,
                                ["v", "phi"], csv_path=str(tmp_path / "t.csv"))
    np.testing.assert_allclose(tab.orders("v"), 2.0)
    np.testing.assert_allclose(tab.orders("phi"), 1.0)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "h,tau,Error_v,Order_v,Error_phi,Order_phi"
    assert lines[1].endswith("★")


def _square(lv):
    return {"e": lv[1] ** 2}


def test_convergence_study_parallel_matches_serial():
    ladder = [(0.1, 0.1 / 2 ** k) for k in range(4)]
    a = run_convergence_study(_square, ladder, ["e"], jobs=1)
    b = run_convergence_study(_square, ladder, ["e"], jobs=2)
    np.testing.assert_array_equal(a.errors("e"), b.errors("e"))


def test_convergence_study_abort_keeps_finished_levels(tmp_path):
    def fn(lv):
        if lv[1] < 0.02:
            raise FloatingPointError("blow-up")
        return {"e": lv[1]}

    path = tmp_path / "t.csv"
    with pytest.raises(ConvergenceAborted) as err:
        run_convergence_study(fn, [(1, 0.1), (1, 0.05), (1, 0.01)], ["e"], csv_path=str(path))
    assert len(err.value.table.levels) == 2
    assert "aborted" in path.read_text()


def test_run_record_rejects_nonincreasing_times():
    rec = RunRecord()
    rec.append(0.0, 1.0)
    with pytest.raises(ValueError):
        rec.append(0.0, 1.0)


def test_write_run_roundtrip(tmp_path):
    rec = RunRecord(meta={"model": "x", "grid": {"n": 4}})
    for k in range(4):
        rec.append(0.1 * k, 1.0 / (k + 1), dissipation=0.5, mass=2.0, extra_series=k)
    field = np.arange(12.0).reshape(3, 4) / 7.0
    rec.add_snapshot(0.2, phi=field)
    out = tmp_path / "run"
    write_run(rec, str(out), {"tau": 0.1, "bad": math.inf})
    data = read_series(str(out / "series.csv"))
    np.testing.assert_array_equal(data["energy"], rec.energy)
    np.testing.assert_array_equal(data["t"], rec.times)
    assert np.all(np.isnan(data["modified_energy"]))
    arr, header = read_snapshot(str(out / "phi_t0.2.f64"))
    np.testing.assert_array_equal(arr, field)
    assert header["grid"] == {"n": 4} and header["t"] == 0.2
    meta = json.loads((out / "run.json").read_text())
    assert meta["config"]["bad"] == "inf" and "numpy" in meta["versions"]
    assert (out / "extra.csv").read_text().startswith("t,extra_series")


def test_read_snapshot_missing(tmp_path):
    with pytest.raises(RunIOError):
        read_snapshot(str(tmp_path / "nothing.f64"))


def test_write_run_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rec = RunRecord()
    rec.append(0.0, 1.0)
    with pytest.raises(RunIOError):
        write_run(rec, os.path.join(str(blocker), "sub"))
