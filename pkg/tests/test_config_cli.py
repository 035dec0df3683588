import csv
import json
from pathlib import Path

import pytest

from crossed_fields_lab.cli import EXIT_CONFIG, EXIT_OK, EXIT_PRECONDITION, EXIT_TOLERANCE, fmt, main, weyl_verdict
from crossed_fields_lab.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_BUMP = """
[potential]
kind = gaussian
amplitude = 0.5
width = 0.8
support_radius = 2.5

[operator]
B = 1.0
eps = 1.0
h = 1.0

[grid]
L = 4, 5
spacing = 0.5

[query]
lambda_min = -1.0
lambda_max = 1.0
lambda_step = 0.5
sigma = 0.5
guard = off
c0_range = -2.0, 1.0, 1.0
gamma0_range = -1.0, 1.0, 1.0
kernel_h = 0.5

[output]
formats = csv, json, png
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, command, text, out="out"):
    cfg = _write(tmp_path, text)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / out)])


# -- config --------------------------------------------------------------------


def test_default_config_parses():
    cfg = load_config(CONFIGS / "default.ini")
    assert cfg.potential.kind == "gaussian" and cfg.potential.support_radius == 6.0
    assert cfg.h == (1.0, 0.7, 0.5) and cfg.grid.L == (8.0, 12.0, 16.0)
    assert cfg.grid.grid(8).dx == pytest.approx(0.25)
    assert cfg.query.lambdas[0] == -2.0 and cfg.query.lambdas[-1] == 2.0 and len(cfg.query.lambdas) == 17
    for cmd in ("verify-trace", "semiclassical", "scan", "curves"):
        cfg.require(cmd)


@pytest.mark.parametrize("name", ["zero.ini", "steep.ini", "degenerate.ini"])
def test_shipped_configs_parse(name):
    load_config(CONFIGS / name)


def test_sum_of_bumps_sections():
    cfg = parse_config(
        """
[potential]
kind = sum-of-bumps
[potential.2]
kind = compact-polynomial
amplitude = -0.2
support_radius = 1.5
[potential.1]
kind = gaussian
amplitude = 0.5
center = 1, 0
"""
    )
    kinds = [c.kind for c in cfg.potential.components]
    assert kinds == ["gaussian", "compact-polynomial"]


def test_nx_ny_grid():
    cfg = parse_config("[grid]\nL = 3\nNx = 11\nNy = 9\n")
    g = cfg.grid.grid(3)
    assert (g.Nx, g.Ny) == (11, 9)


@pytest.mark.parametrize(
    "text",
    [
        "[potential]\nkind = square\n",
        "[potential]\nkind = gaussian\nwidth = -1\n",
        "[potential]\namplitde = 1\n",
        "[operator]\nh = 0\n",
        "[operator]\nh = 1.5\n",
        "[operator]\neps = -1\n",
        "[operator]\nB = abc\n",
        "[grid]\nL = 4\nspacing = 0.5\nNx = 9\n",
        "[grid]\nspacing = 0.5\n",
        "[grid]\nL = 4\nNx = 2\n",
        "[query]\nlambdas = 1, 0\n",
        "[query]\nwindow = 3, -3\n",
        "[query]\nsolver = magic\n",
        "[query]\nsigma = 0\n",
        "[query]\nguard = perhaps\n",
        "[query]\nc0_range = 1, 0, 0.5\n",
        "[output]\nformats = csv, pdf\n",
        "[extras]\nx = 1\n",
        "not an ini file",
    ],
)
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_require_missing_block():
    cfg = parse_config("[potential]\nkind = zero\n")
    cfg.require("curves")
    with pytest.raises(ConfigError):
        cfg.require("scan")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/exp.ini")


# -- CLI -----------------------------------------------------------------------


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(3) == "3"


def test_weyl_verdict_rules():
    rows = [
        {"h": 1.0, "ratio": 1.3, "scaled_residual": 0.2, "guard_ok": True},
        {"h": 0.5, "ratio": 1.05, "scaled_residual": 0.1, "guard_ok": True},
    ]
    assert weyl_verdict(rows, 0.85, 1.15)[0]
    rows[1]["scaled_residual"] = 0.3
    assert not weyl_verdict(rows, 0.85, 1.15)[0]
    rows[1]["guard_ok"] = rows[0]["guard_ok"] = False
    assert not weyl_verdict(rows, 0.85, 1.15)[0]


def test_cli_config_errors(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert _run(tmp_path, "scan", "[potential]\nkind = zero\n") == EXIT_CONFIG
    assert _run(tmp_path, "curves", "[potential]\nkind = zero\n[query]\nbogus = 1\n") == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", "x.ini"])


def test_verify_trace_zero_potential(tmp_path):
    text = SMALL_BUMP.replace("kind = gaussian", "kind = zero")
    assert _run(tmp_path, "verify-trace", text) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "trace_identity.json").read_text())
    assert doc["passed"] and doc["final_sup_rel_residual"] == 0.0
    rows = list(csv.DictReader(open(tmp_path / "out" / "trace_identity.csv")))
    assert len(rows) == 2 * 5
    assert all(float(r["diff_route"]) == 0.0 and float(r["formula_route"]) == 0.0 for r in rows)
    assert (tmp_path / "out" / "trace_identity.png").stat().st_size > 0


def test_verify_trace_tolerance_failure(tmp_path):
    text = SMALL_BUMP.replace("guard = off", "guard = off\ntolerance = 1e-12")
    assert _run(tmp_path, "verify-trace", text) == EXIT_TOLERANCE
    doc = json.loads((tmp_path / "out" / "trace_identity.json").read_text())
    assert not doc["passed"] and [r["L"] for r in doc["runs"]] == [4.0, 5.0]


def test_verify_trace_guard_failure(tmp_path):
    text = SMALL_BUMP.replace("guard = off", "guard = on").replace("lambda_max = 1.0", "lambda_max = 30.0")
    assert _run(tmp_path, "verify-trace", text) == EXIT_PRECONDITION


def test_semiclassical_degenerate_level(tmp_path):
    assert main(["semiclassical", "--config", str(CONFIGS / "degenerate.ini"), "--out", str(tmp_path)]) == EXIT_PRECONDITION


def test_semiclassical_zero_potential(tmp_path):
    text = SMALL_BUMP.replace("kind = gaussian", "kind = zero").replace("h = 1.0", "h = 1.0, 0.7")
    text = text.replace("guard = off", "guard = off\nlambda1 = -2.0\nlambda2 = 0.0")
    assert _run(tmp_path, "semiclassical", text) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "out" / "weyl_sweep.csv")))
    assert [float(r["h"]) for r in rows] == [1.0, 0.7]
    assert all(float(r["numeric"]) == 0.0 and float(r["predicted"]) == 0.0 for r in rows)


def test_semiclassical_requires_descending_h(tmp_path):
    text = SMALL_BUMP.replace("h = 1.0", "h = 0.5, 1.0")
    assert _run(tmp_path, "semiclassical", text) == EXIT_CONFIG


def test_scan_zero_potential(tmp_path):
    # the L = 4 box is too small to resolve the window; L = 8 is not
    text = SMALL_BUMP.replace("kind = gaussian", "kind = zero").replace("guard = off", "window = -1, 1")
    assert _run(tmp_path, "scan", text) == EXIT_PRECONDITION
    text = text.replace("L = 4, 5", "L = 8")
    assert _run(tmp_path, "scan", text) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "eigenscan.json").read_text())
    assert doc["report"]["surviving"] == []
    assert doc["schema_version"] == "1"


def test_scan_steep_is_inconclusive(tmp_path):
    assert main(["scan", "--config", str(CONFIGS / "steep.ini"), "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "eigenscan.json").read_text())
    assert doc["report"]["inconclusive"] is True


def test_curves_outputs_and_determinism(tmp_path):
    assert _run(tmp_path, "curves", SMALL_BUMP, "a") == EXIT_OK
    assert _run(tmp_path, "curves", SMALL_BUMP, "b") == EXIT_OK
    for name in ("c0_curve.csv", "gamma0_curve.csv", "kernel.csv", "curves.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        assert b"\r\n" not in a
    rows = list(csv.DictReader(open(tmp_path / "a" / "c0_curve.csv")))
    assert [float(r["lambda"]) for r in rows] == [-2.0, -1.0, 0.0, 1.0]
    assert all(r["status"] == "ok" for r in rows)
    k = json.loads((tmp_path / "a" / "curves.json").read_text())["kernel"]
    assert k["certificate"] >= 0 and k["mass"] == pytest.approx(1.0, abs=1e-6)
    for png in ("c0_curve.png", "gamma0_curve.png", "kernel.png"):
        assert (tmp_path / "a" / png).exists()


def test_output_directory_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    text = "[potential]\nkind = zero\n[query]\nc0_range = 0, 1, 1\ngamma0_range = 0, 1, 1\n[output]\ndirectory = here\nformats = json\n"
    cfg = _write(tmp_path, text)
    assert main(["curves", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "here" / "curves.json").exists()
    assert not (tmp_path / "here" / "c0_curve.csv").exists()
