import glob
import os

import numpy as np
import pytest

from skewgrad.cli import ConfigError, load_config, main, parse_config_text
from skewgrad.diagnostics import read_series

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PAPER = os.path.join(ROOT, "configs", "paper")


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_config_grammar():
    raw = parse_config_text("# c\nModel = burgers  # trailing\n\nsnapshot_times = 0.5, 1\n")
    assert raw == {"model": "burgers", "snapshot_times": "0.5, 1"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_resolve_defaults_and_ladder():
    cfg = load_config(None, ["model=chns", "ladder=16:0.1, 32:0.05", "forced=yes"])
    assert cfg["ladder"] == [(16, 0.1), (32, 0.05)]
    assert cfg["forced"] is True and cfg["mobility"] == 0.01 and cfg["a"] == 3.0


@pytest.mark.parametrize("override,key", [
    ("tau=0", "tau"), ("tau=-1", "tau"), ("n=7", "n"), ("nu=-0.1", "nu"),
    ("scheme=NOPE", "scheme"), ("frobnicate=1", "frobnicate"), ("forced=maybe", "forced"),
])
def test_invalid_values_name_the_key(override, key):
    with pytest.raises(ConfigError, match=key):
        load_config(None, ["model=burgers", override])


def test_every_shipped_config_is_valid():
    files = sorted(glob.glob(os.path.join(PAPER, "*.cfg")))
    assert len(files) >= 10
    models = set()
    for f in files:
        models.add(load_config(f)["model"])
    assert models == {"burgers", "ns-periodic", "ns-cavity", "chns"}


def test_cmd_run_burgers_shipped_config(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["run", "--config", os.path.join(PAPER, "burgers_run.cfg"), "--out", str(out)])
    assert rc == 0
    assert "energy=" in capsys.readouterr().out
    e = read_series(str(out / "series.csv"))["energy"]
    assert np.all(np.diff(e) <= 1e-11 * e[0])
    assert os.path.exists(out / "u_t0.5.f64")


def test_cmd_run_exit_codes(tmp_path, capsys):
    bad = write_cfg(tmp_path, "model = burgers\ntau = 0\n")
    assert main(["run", "--config", bad]) == 2
    assert "tau" in capsys.readouterr().err
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    blow = write_cfg(tmp_path, "model = burgers\nscheme = BDF2_EX_CLASSIC\nnu = 0.001\ntau = 0.05\n", "b.cfg")
    assert main(["run", "--config", blow, "--out", str(tmp_path / "b")]) == 3
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    ok = write_cfg(tmp_path, "model = burgers\ntau = 0.1\nn = 16\n", "ok.cfg")
    assert main(["run", "--config", ok, "--out", str(blocker / "x")]) == 4


def test_cmd_run_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, "model = ns-periodic\nn = 16\ntau = 0.01\nt_end = 0.05\nsnapshot_times = 0.05\n")
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("series.csv", "extra.csv", "velocity_t0.05.f64"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cmd_run_chns_bubble_snapshot_times(tmp_path):
    cfg = write_cfg(tmp_path, "model = chns\nn = 16\ntau = 0.001\nt_end = 10\nnu = 0.001\n"
                    "snapshot_times = 0.001, 0.2, 0.4, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0, 3.2, 3.4, 4.6, 4.8, 5.0, 10.0\n")
    out = tmp_path / "bub"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    times = sorted(float(os.path.basename(f)[5:-4]) for f in glob.glob(str(out / "phi_t*.f64")))
    assert times == [0.001, 0.2, 0.4, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0, 3.2, 3.4, 4.6, 4.8, 5.0, 10.0]


def test_cmd_converge_ns_orders(tmp_path):
    for kind, order in (("SGE_BDF1", 1.0), ("SGE_CN", 2.0)):
        cfg = write_cfg(tmp_path, f"model = ns-periodic\nscheme = {kind}\nn = 32\nt_end = 0.4\n"
                        "ladder = 0.02, 0.01, 0.005\n", f"{kind}.cfg")
        out = tmp_path / kind
        assert main(["converge", "--config", cfg, "--out", str(out)]) == 0
        rows = [r.split(",") for r in (out / "table.csv").read_text().splitlines()]
        assert rows[0] == ["h", "tau", "Error_v", "Order_v"]
        assert rows[1][3] == "★"
        assert abs(float(rows[-1][3]) - order) < 0.15


def test_cmd_converge_single_level_and_chns_shape(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "model = chns\nscheme = SGE_SCN\ninitial = manufactured\nforced = true\n"
                    "nu = 1\nmobility = 1\ngamma = 1\nepsilon = 1\na = 3\nt_end = 0.1\nladder = 16:0.05\n")
    out = tmp_path / "c"
    assert main(["converge", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "table.csv").read_text().splitlines()
    assert lines[0] == "h,tau,Error_v,Order_v,Error_phi,Order_phi"
    assert lines[1].endswith("★") and len(lines) == 2


def test_cmd_converge_rejects_cavity(tmp_path):
    cfg = write_cfg(tmp_path, "model = ns-cavity\nladder = 0.1\n")
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_cmd_compare_schemes_divergence_reported(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "model = burgers\nnu = 0.001\ntau = 0.05\n")
    out = tmp_path / "cmp"
    assert main(["compare-schemes", "--config", cfg, "--out", str(out)]) == 0
    summary = (out / "summary.txt").read_text()
    assert "BDF2_EX_CLASSIC" in summary and "diverged at t=" in summary
    assert os.path.exists(out / "solution_SGE_BDF2_EX.csv")
    assert os.path.exists(out / "SGE_BDF2_EX" / "series.csv")


def test_cmd_compare_schemes_agree_for_small_steps(tmp_path):
    errs = []
    for tau in (0.002, 0.001):
        cfg = write_cfg(tmp_path, f"model = burgers\nnu = 0.5\nn = 64\ntau = {tau}\n", f"{tau}.cfg")
        out = tmp_path / str(tau)
        assert main(["compare-schemes", "--config", cfg, "--out", str(out)]) == 0
        a = np.loadtxt(out / "solution_SGE_BDF2_EX.csv", delimiter=",", skiprows=1)[:, 1]
        b = np.loadtxt(out / "solution_BDF2_EX_CLASSIC.csv", delimiter=",", skiprows=1)[:, 1]
        errs.append(np.max(np.abs(a - b)))
    assert errs[1] < 1e-5
    assert 1.7 < np.log2(errs[0] / errs[1]) < 2.3


def test_presets_accept_overrides(tmp_path):
    out = tmp_path / "cav"
    rc = main(["cavity", "--out", str(out), "--override", "n=8", "--override", "t_end=0.04",
               "--override", "tau=0.01", "--override", "snapshot_times=0.04"])
    assert rc == 0 and os.path.exists(out / "streamfunction_t0.04.f64")
    rc = main(["bubbles", "--out", str(tmp_path / "b"), "--override", "n=16", "--override", "t_end=0.002",
               "--override", "snapshot_times=0.001"])
    assert rc == 0
