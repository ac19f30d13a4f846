import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from windcov import io as wio
from windcov.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

from oracles import axis_gap, fit_centered_ellipse


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def tree_bytes(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_deform_demo_default_config(tmp_path):
    assert main(["deform-demo", "--config", str(CONFIGS / "deform_demo.yaml"), "--out", str(tmp_path)]) == 0
    info = wio.read_json(tmp_path / "transform.json")
    np.testing.assert_allclose(info["singular_values"], [1 / 3, 3 / 2], rtol=1e-12)
    _, pts = wio.read_csv(tmp_path / "circle_deformed.csv")
    (short, long_), ang_short, _ = fit_centered_ellipse(pts)
    assert short == pytest.approx(1 / 3, abs=1e-9) and long_ == pytest.approx(1.5, abs=1e-9)
    assert axis_gap(ang_short, math.pi / 12) < 1e-9
    header, axes = wio.read_csv(tmp_path / "axes_deformed.csv")
    assert header == ["segment", "x", "y"] and len(axes) == 4


def test_deform_demo_identity(tmp_path):
    cfg = write_cfg(tmp_path, {"deform": {"a": 1.0, "b": 1.0, "theta_radians": 0.7}})
    assert main(["deform-demo", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    _, a = wio.read_csv(tmp_path / "o" / "circle_original.csv")
    _, b = wio.read_csv(tmp_path / "o" / "circle_deformed.csv")
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_deform_demo_bad_stretch(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"deform": {"a": 0.0, "b": 1.0, "theta_radians": 0.0}})
    assert main(["deform-demo", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "NonPositiveStretch" in capsys.readouterr().err


def test_surface_gamma_one_outputs_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"family": "gaussian", "sigma2": 1, "phi": 1, "gamma": 1.0, "theta_radians": 0.4},
                               "grid": {"nx": 11, "ny": 11, "spacing": 0.2, "origin": [-1, -1]}})
    assert main(["surface", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/surface_original.csv").read_bytes() == (tmp_path / "o/surface_deformed.csv").read_bytes()


def test_surface_missing_grid_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"model": {"family": "exponential", "sigma2": 1, "phi": 1}})
    assert main(["surface", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    assert "MissingGridMetadata" in capsys.readouterr().err


def test_config_error_reports_key_and_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: {nx: 3, ny: 3, spacing: 1}\nmodel:\n  family: gaussian\n  sigma2: 1\n  phi: 1\n  colour: red\n")
    assert main(["sample", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "colour" in err and "line 2" in err
    p.write_text("model: [unclosed\n")
    assert main(["sample", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_sample_seed_override_and_manifest_roundtrip(tmp_path):
    cfg = str(CONFIGS / "sample_gaussian.yaml")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["sample", "--config", cfg, "--seed", "9", "--out", str(a)]) == 0
    assert main(["sample", "--config", cfg, "--seed", "9", "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    assert {"field.csv", "field.json", "manifest.yaml"} <= set(tree_bytes(a))
    assert main(["sample", "--config", str(a / "manifest.yaml"), "--out", str(c)]) == 0
    assert tree_bytes(a) == tree_bytes(c)
    assert wio.read_json(a / "field.json")["seed"] == 9


def test_set_override(tmp_path):
    cfg = str(CONFIGS / "sample_gaussian.yaml")
    assert main(["sample", "--config", cfg, "--set", "model.gamma=1.0", "--set", "output.format=csv",
                 "--out", str(tmp_path)]) == 0
    man = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert man["config"]["model"]["gamma"] == 1.0
    assert not (tmp_path / "field.json").exists()


def test_transport_then_variogram_then_fit(tmp_path):
    tcfg = write_cfg(tmp_path, {
        "transport": {"domain_half_width": 20.0, "dt": 1.0, "n_steps": 30, "lambda_src": 0.05,
                      "emission_rate": 1.0, "advect_coeff": 1.0, "diffusion_sigma": 0.3, "lambda_B": 500.0,
                      "ball_radius": 1.0, "wind": {"speed": 1.0, "angle": 0.5}, "seed": 1, "burn_in": 25},
        "grid": {"nx": 5, "ny": 5, "spacing": 1.0, "origin": [-2, -2]},
    }, "t.yaml")
    assert main(["transport", "--config", str(tcfg), "--out", str(tmp_path / "t")]) == 0
    header, rows = wio.read_csv(tmp_path / "t" / "concentration.csv")
    assert header == ["t_index", "x", "y", "value"] and len(rows) == 5 * 25
    summary = wio.read_json(tmp_path / "t" / "summary.json")
    assert len(summary["total_mass"]) == 30

    scfg = write_cfg(tmp_path, {"model": {"family": "exponential", "sigma2": 1, "phi": 2, "gamma": 2, "theta_radians": 0.3,
                                          "nugget": 0.1},
                                "grid": {"nx": 8, "ny": 8, "spacing": 1.0}, "sample": {"seed": 2}}, "s.yaml")
    assert main(["sample", "--config", str(scfg), "--out", str(tmp_path / "s")]) == 0
    field = str(tmp_path / "s" / "field.csv")
    vcfg = write_cfg(tmp_path, {"variogram": {"input": field, "n_direction_bins": 4, "lag_edges": [0.5, 1.5, 2.5]}}, "v.yaml")
    assert main(["variogram", "--config", str(vcfg), "--out", str(tmp_path / "v")]) == 0
    header, _ = wio.read_csv(tmp_path / "v" / "variogram.csv")
    assert header[0] == "direction_bin_center"
    fcfg = write_cfg(tmp_path, {"fit": {"input": field, "family": "exponential", "restarts": 2}}, "f.yaml")
    assert main(["fit", "--config", str(fcfg), "--out", str(tmp_path / "f")]) == 0
    doc = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert doc["model"]["family"] == "exponential"
    assert 0 <= doc["model"]["theta_radians"] < math.pi


def test_pipeline_gp_writes_comparison_and_is_reproducible(tmp_path):
    cfg = str(CONFIGS / "pipeline_gp.yaml")
    args = ["pipeline", "--config", cfg, "--seed", "4", "--set", "grid.nx=10", "--set", "grid.ny=10",
            "--set", "fit.restarts=2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    lines = (tmp_path / "a" / "comparison.csv").read_text().splitlines()
    assert lines[0] == "parameter,true,fitted" and len(lines) == 6


def test_pipeline_stage_error_names_stage(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"pipeline": {"source": "gp"},
                               "model": {"family": "gaussian", "sigma2": 1, "phi": 1},
                               "grid": {"nx": 3, "ny": 3, "spacing": 1.0},
                               "variogram": {"lag_edges": [2.0, 1.0]}})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "[variogram]" in capsys.readouterr().err


def test_replicates(tmp_path):
    cfg = str(CONFIGS / "sample_gaussian.yaml")
    assert main(["sample", "--config", cfg, "--replicates", "3", "--out", str(tmp_path)]) == 0
    summary = wio.read_json(tmp_path / "summary_cli.json")
    assert [r["seed"] for r in summary["replicates"]] == [1, 2, 3]
    assert (tmp_path / "rep_002" / "field.csv").exists()
