"""End-to-end checks of the stage driver and its artifact contracts.

One full run-all at miniature scale feeds the whole module; individual
tests reread its artifacts or rerun single stages into copies, so the
expensive synthesis happens exactly once per session.
"""

import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path
from textwrap import dedent

import pytest

from rigsplat.cli import main

# Small enough to run in well under a minute, large enough that sync,
# matching, and reconstruction all operate above their minimum-data
# thresholds. Offsets (3, -2) are recovered exactly at this scale.
INJECTED_OFFSETS = {"L": 3, "R": -2}


def _config_text(work: Path) -> str:
    return dedent(
        f"""
        [paths]
        frames_dir = "{work / 'frames'}"
        calibration_path = "{work / 'out' / 'camera.json'}"
        output_dir = "{work / 'out'}"

        [synth]
        width = 192
        height = 108
        speed = 2.0
        travel = 3.0
        n_frames = 85
        offset_left = 3
        offset_right = -2
        blur_sigma = 1.0
        board_views = 10
        board_noise = 0.1
        n_points = 700
        cloud_points = 500

        [sync]
        fps = 60.0
        sync_bound = 8

        [select]
        k = 5
        window = 2

        [splat]
        splat_iters = 12
        eval_every = 6

        [run]
        seed = 0
        threads = 1
        """
    )


def _tree_hash(root: Path, skip=()) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    work = tmp_path_factory.mktemp("cli_pipeline")
    cfg = work / "run.toml"
    cfg.write_text(_config_text(work))
    serve = work / "serve"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "rigsplat.cli",
            "run-all",
            "--config",
            str(cfg),
            "--serve",
            str(serve),
            "--quiet",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return {
        "work": work,
        "config": cfg,
        "out": work / "out",
        "serve": serve,
        "stdout": proc.stdout,
    }


def _clone_out(pipeline, tmp_path) -> Path:
    dst = tmp_path / "out_copy"
    shutil.copytree(pipeline["out"], dst)
    return dst


def _stage(args, capsys):
    code = main(args)
    return code, capsys.readouterr().out


# -- full-run artifacts ---------------------------------------------------


def test_run_all_writes_every_stage_artifact(pipeline):
    out = pipeline["out"]
    for rel in (
        "board.json",
        "camera.json",
        "calibration.json",
        "sync.json",
        "triplets.json",
        "tracks.json",
        "model/points.json",
        "model/points.ply",
        "cloud.ply",
        "splat.json",
        "renders/index.json",
        "metrics.json",
        "report.json",
        "report.txt",
    ):
        assert (out / rel).is_file(), f"missing {rel}"


def test_report_carries_headline_stats(pipeline):
    report = json.loads((pipeline["out"] / "report.json").read_text())
    stages = report["stages"]
    expected = {
        "synth",
        "calibrate",
        "sync",
        "select",
        "match-verify",
        "sfm",
        "splat",
        "render",
        "metrics",
    }
    assert set(stages) == expected
    sfm = stages["sfm"]["stats"]
    for key in (
        "registered_images",
        "num_points",
        "mean_track_length",
        "mean_reprojection_error_px",
    ):
        assert key in sfm
    metrics = stages["metrics"]
    assert metrics["mean_psnr_db"] > 5.0
    assert 0.0 < metrics["mean_ssim"] <= 1.0
    assert set(report["timings"]) == expected
    assert all(t >= 0.0 for t in report["timings"].values())

    text = (pipeline["out"] / "report.txt").read_text()
    for name in expected:
        assert name in text


def test_sync_recovers_injected_offsets(pipeline):
    doc = json.loads((pipeline["out"] / "sync.json").read_text())
    assert doc["offsets"] == INJECTED_OFFSETS
    report = json.loads((pipeline["out"] / "report.json").read_text())
    assert report["stages"]["sync"]["truth"]["exact"] is True


def test_calibration_recovers_camera(pipeline):
    doc = json.loads((pipeline["out"] / "calibration.json").read_text())
    assert doc["disabled"] is False
    truth = doc["truth"]
    assert truth["fx_err_pct"] < 0.5
    assert truth["fy_err_pct"] < 0.5
    assert truth["cx_err_px"] < 1.0
    assert truth["cy_err_px"] < 1.0


def test_sfm_reconstruction_quality(pipeline):
    doc = json.loads((pipeline["out"] / "sfm.json").read_text())
    assert doc["prior_enabled"] is True
    assert doc["stats"]["registered_images"] >= 10
    assert doc["ba"]["converged"] is True
    assert doc["stats"]["mean_reprojection_error_px"] < 1.0
    # Metric scale comes from the rig prior, so centers land near truth.
    assert doc["truth"]["center_rmse_pct_of_travel"] < 2.0


def test_serve_copies_point_cloud(pipeline):
    assert (pipeline["serve"] / "cloud.ply").is_file()


def test_run_all_prints_text_report(pipeline):
    assert "sfm" in pipeline["stdout"]
    assert "metrics" in pipeline["stdout"]


# -- single-stage behavior ------------------------------------------------


def test_stage_rerun_is_idempotent(pipeline, capsys):
    out = pipeline["out"]
    before = _tree_hash(out / "model")
    metrics_before = (out / "metrics.json").read_bytes()
    code, _ = _stage(["sfm", "--config", str(pipeline["config"]), "--quiet"], capsys)
    assert code == 0
    code, _ = _stage(["metrics", "--config", str(pipeline["config"]), "--quiet"], capsys)
    assert code == 0
    assert _tree_hash(out / "model") == before
    assert (out / "metrics.json").read_bytes() == metrics_before


def test_flag_overrides_config_value(pipeline, tmp_path, capsys):
    out = _clone_out(pipeline, tmp_path)
    code, _ = _stage(
        ["select", "--config", str(pipeline["config"]), "--out", str(out), "--k", "3", "--quiet"],
        capsys,
    )
    assert code == 0
    doc = json.loads((out / "triplets.json").read_text())
    assert len(doc["triplets"]) == 3


def test_disable_sync_forces_identity_alignment(pipeline, tmp_path, capsys):
    out = _clone_out(pipeline, tmp_path)
    code, stdout = _stage(
        ["sync", "--config", str(pipeline["config"]), "--out", str(out), "--disable-sync", "--quiet"],
        capsys,
    )
    assert code == 0
    block = json.loads(stdout)
    assert block["disabled"] is True
    assert block["offsets"] == {"L": 0, "R": 0}


def test_disable_pose_priors_degrades_rig(pipeline, tmp_path, capsys):
    out = _clone_out(pipeline, tmp_path)
    code, stdout = _stage(
        [
            "sfm",
            "--config",
            str(pipeline["config"]),
            "--out",
            str(out),
            "--disable-pose-priors",
            "--quiet",
        ],
        capsys,
    )
    assert code == 0
    base = json.loads((pipeline["out"] / "sfm.json").read_text())
    ablated = json.loads(stdout)
    assert ablated["prior_enabled"] is False
    assert ablated["rig"]["baseline_drift"] > base["rig"]["baseline_drift"]
    assert ablated["truth"]["center_rmse_m"] > base["truth"]["center_rmse_m"]


def test_disable_custom_matching_schedules_all_pairs(pipeline, tmp_path, capsys):
    out = _clone_out(pipeline, tmp_path)
    code, stdout = _stage(
        [
            "match-verify",
            "--config",
            str(pipeline["config"]),
            "--out",
            str(out),
            "--disable-custom-matching",
            "--quiet",
        ],
        capsys,
    )
    assert code == 0
    block = json.loads(stdout)
    assert block["scheduled"]["cross_LR"] > 0
    # The default schedule never pairs the side cameras directly.
    base = json.loads((pipeline["out"] / "tracks.json").read_text())
    assert all(row["kind"] != "cross_LR" for row in base["verified"])


# -- failure modes --------------------------------------------------------


def test_invalid_config_value_exits_2(pipeline, capsys):
    code = main(["run-all", "--config", str(pipeline["config"]), "--k", "1"])
    capsys.readouterr()
    assert code == 2


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[synth]\nwidht = 64\n")
    code = main(["run-all", "--config", str(bad)])
    capsys.readouterr()
    assert code == 2


def test_missing_input_exits_3(tmp_path, capsys):
    code = main(["sfm", "--out", str(tmp_path / "empty"), "--quiet"])
    capsys.readouterr()
    assert code == 3


def test_failed_stage_exits_4(pipeline, tmp_path, capsys):
    out = _clone_out(pipeline, tmp_path)
    # A verification gate nothing can pass turns into a stage failure.
    code = main(
        [
            "match-verify",
            "--config",
            str(pipeline["config"]),
            "--out",
            str(out),
            "--tau-px",
            "0.0001",
            "--quiet",
        ]
    )
    capsys.readouterr()
    assert code == 4
