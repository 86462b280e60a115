import json
import os

import pytest

from geoflow import cli
from geoflow.cli import Check, main

FAST = ["--tau", "0.01", "--tol", "0.001"]


def files(d):
    return sorted(os.listdir(d))


def test_experiment3_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["experiment3", "--level", "3", "--out", str(out)] + FAST) == 0
    names = files(out)
    assert "monitors_experiment3_L3.csv" in names
    assert "summary_experiment3.csv" in names
    assert "report_experiment3.txt" in names
    assert "FAILED" not in names
    vtks = [n for n in names if n.endswith(".vtk")]
    assert len(vtks) == 2 and "mesh_experiment3_L3_0.000.vtk" in vtks
    header = (out / "monitors_experiment3_L3.csv").read_text().splitlines()[0]
    assert header == "t,max_distance,energy,max_velocity,cg_iters"
    assert (out / "report_experiment3.txt").read_text().startswith("experiment3: PASSED")


def test_outputs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["experiment1", "--level", "3", "--out", str(tmp_path / d)] + FAST) == 0
    for name in ("monitors_experiment1_L3.csv",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    vtk = [n for n in files(tmp_path / "a") if n.endswith(".vtk")]
    for name in vtk:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_snapshot_every(tmp_path):
    out = tmp_path / "o"
    assert main(["experiment1", "--level", "3", "--snapshot-every", "10", "--out", str(out)] + FAST) == 0
    vtks = [n for n in files(out) if n.endswith(".vtk")]
    assert "mesh_experiment1_L3_0.100.vtk" in vtks and len(vtks) >= 3


@pytest.mark.parametrize("argv", [
    ["experiment1", "--level", "2"],
    ["experiment2", "--level", "4", "5"],
    ["experiment1", "--tau", "-1"],
    ["experiment1", "--snapshot-every", "0"],
    ["bogus"],
    ["experiment1", "--scheme", "euler"],
])
def test_usage_errors(tmp_path, argv):
    argv = argv + ["--out", str(tmp_path / "o")]
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse rejects unknown choices itself
        code = exc.code
    assert code == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 0.5, "tol": 1e-3, "level": 3, "out": str(tmp_path / "o")}))
    args = cli.build_parser().parse_args(["experiment3", "--config", str(cfg), "--tau", "0.02"])
    s = cli.resolve_settings(args)
    assert s["tau"] == 0.02 and s["tol"] == 1e-3 and s["levels"] == [3]
    assert s["scheme"] == "sphere_specialized"


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"taus": 1}))
    assert main(["experiment1", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("{not json")
    assert main(["experiment1", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_non_sphere_target_selects_general_scheme(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"target": "ellipsoid"}))
    s = cli.resolve_settings(cli.build_parser().parse_args(["custom", "--config", str(cfg)]))
    assert s["scheme"] == "general_metric"


def test_numerical_failure_exit_code(tmp_path):
    out = tmp_path / "o"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mesh": {"type": "sphere", "level": 2}, "initial": {"scale": 1.3}}))
    code = main(["custom", "--config", str(cfg), "--max-steps", "2", "--out", str(out)])
    assert code == 3
    assert "FAILED" in files(out)
    # the partial history of the two steps plus the initial state
    rows = (out / "monitors_custom.csv").read_text().splitlines()
    assert len(rows) == 1 + 3


def test_failed_check_exit_code(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.HANDLERS, "check-geometry",
                        lambda s, out: ("check-geometry", [], [Check("always fails", False)]))
    out = tmp_path / "o"
    assert main(["check-geometry", "--out", str(out)]) == 1
    assert (out / "FAILED").exists()
    assert "FAIL  always fails" in (out / "report_check-geometry.txt").read_text()


def test_marker_cleared_on_success(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    (out / "FAILED").write_text("old\n")
    assert main(["check-geometry", "--out", str(out)]) == 0
    assert not (out / "FAILED").exists()


def test_custom_circle(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mesh": {"type": "circle", "segments": 16}, "initial": {"scale": 1.1}}))
    out = tmp_path / "o"
    assert main(["custom", "--config", str(cfg), "--tau", "0.01", "--tol", "1e-3", "--out", str(out)]) == 0
    assert "monitors_custom.csv" in files(out)


def test_custom_unknown_mesh(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mesh": {"type": "torus"}}))
    assert main(["custom", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_scaling_test_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"t_end": 0.1, "r0": [0.9]}))
    out = tmp_path / "o"
    assert main(["scaling-test", "--config", str(cfg), "--level", "3", "--tau", "0.01",
                 "--out", str(out)]) == 0
    assert "trajectory_scaling_r0.9.csv" in files(out)


def test_converge_circle_command(tmp_path):
    out = tmp_path / "o"
    assert main(["converge-circle", "--level", "0", "1", "2", "--tau", "0.01", "--tol", "1e-4",
                 "--out", str(out)]) == 0
    summary = (out / "summary_converge-circle.csv").read_text().splitlines()
    assert summary[0].startswith("k,n_segments,h,h1_error,eoc")
    assert len(summary) == 4


def test_check_variations_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["check-variations", "--level", "1", "--out", str(out)]) == 0
    assert "check-variations: PASSED" in capsys.readouterr().out
