"""Pipeline driver: nine stages sharing one artifact directory.

Each stage reads only files earlier stages wrote, so any of them can be
rerun in isolation or replaced by an external tool that produces the
same documents. `run-all` chains the full pipeline over a synthetic
capture and writes a consolidated report next to the artifacts.

Exit codes: 0 success, 2 invalid configuration, 3 missing input
artifact, 4 stage failure.
"""

import argparse
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import imaging, matching, splat, synth
from . import sync as sync_mod
from .config import RunConfig, load_config
from .errors import (
    ConfigInvalid,
    DegenerateConfiguration,
    MissingInput,
    PipelineError,
    StageFailed,
)
from .matching import CAMERA_ORDER, TrackSet, image_name, parse_image_name
from .report import RunReport
from .sfm import calibration, evaluate
from .sfm.ba import RigPrior
from .sfm.model import SparseModel
from .sfm.reconstruct import reconstruct_incremental

log = logging.getLogger(__name__)

# Lens nameplate field of view; only an initial guess, never a result.
NOMINAL_FOV_DEG = 160.0


# -- small helpers ---------------------------------------------------------


def _write_json(path, doc, compact=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if compact:
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    else:
        text = json.dumps(doc, indent=2, sort_keys=True)
    path.write_text(text + "\n")


def _read_json(path, stage: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{stage}: missing {path}")
    return json.loads(path.read_text())


def _pose_doc(pose: geo.Pose) -> dict:
    return {"q": [float(v) for v in pose.q], "t": [float(v) for v in pose.t]}


def _pose_from(doc: dict) -> geo.Pose:
    return geo.Pose(np.asarray(doc["q"], float), np.asarray(doc["t"], float))


def _view_sort_key(key):
    return (key[1], CAMERA_ORDER.index(key[0]))


def _reset_dir(path):
    """Clear a stage-owned output directory so reruns leave no stale files."""
    shutil.rmtree(path, ignore_errors=True)
    Path(path).mkdir(parents=True, exist_ok=True)


def _scenario(cfg: RunConfig) -> synth.RigScenario:
    return synth.RigScenario(
        camera=synth.default_camera(cfg.width, cfg.height),
        baseline_lc=[-cfg.baseline_lc, 0.0, 0.0],
        baseline_cr=[cfg.baseline_cr, 0.0, 0.0],
        speed=cfg.speed,
        fps=cfg.fps,
        height_range=(cfg.height_min, cfg.height_max),
        travel=cfg.travel,
        offsets=(cfg.offset_left, cfg.offset_right),
        noise_sigma=cfg.noise_sigma,
        outlier_rate=cfg.outlier_rate,
    )


def _nominal_camera(width: int, height: int) -> geo.CameraModel:
    """Starting intrinsics from the lens nameplate: no measured numbers."""
    f = (width / 2.0) / np.tan(np.radians(NOMINAL_FOV_DEG / 2.0))
    return geo.CameraModel(
        width=width, height=height, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0
    )


def _rectify_keypoints(kps: np.ndarray, camera: geo.CameraModel) -> np.ndarray:
    """Map distorted pixel keypoints onto the matching pinhole camera.

    Rows where undistortion does not converge keep their raw position;
    geometric verification then treats them as the outliers they are.
    """
    out = np.asarray(kps, dtype=float).copy()
    if not len(out):
        return out
    xy = camera.normalized_from_pixels(out[:, :2])
    und, ok = geo.undistort_masked(xy, camera.dist)
    rect = camera.pixels_from_normalized(und)
    out[ok, :2] = rect[ok]
    return out


# -- stages ----------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> dict:
    """Generate one synthetic capture: frames, board, matches, targets."""
    out = Path(cfg.output_dir)
    frames_dir = Path(cfg.frames_dir)
    scenario = _scenario(cfg)

    rng = np.random.default_rng([cfg.seed, 11])
    n_blur = int(round(cfg.blur_fraction * cfg.n_frames))
    blur = {
        cam: sorted(rng.choice(cfg.n_frames, size=n_blur, replace=False).tolist())
        for cam in CAMERA_ORDER
    }
    for cam in CAMERA_ORDER:
        shutil.rmtree(frames_dir / cam, ignore_errors=True)
    synth.generate_frames(
        scenario,
        cfg.n_frames,
        cfg.seed,
        frames_dir,
        blur_frames=blur,
        blur_sigma=cfg.blur_sigma,
    )

    board = synth.BoardGeometry()
    views, _ = synth.generate_board_views(
        board, scenario.camera, cfg.board_views, cfg.board_noise, cfg.seed
    )
    _write_json(
        out / "board.json",
        {
            "width": scenario.camera.width,
            "height": scenario.camera.height,
            "board": {
                "squares_x": board.squares_x,
                "squares_y": board.squares_y,
                "square_size": board.square_size,
            },
            "noise_sigma": cfg.board_noise,
            "camera_truth": scenario.camera.to_dict(),
            "views": [
                {
                    "frame_id": int(v.frame_id),
                    "corner_ids": v.corner_ids.tolist(),
                    "board_points": v.board_points.tolist(),
                    "pixels": v.pixels.tolist(),
                }
                for v in views
            ],
        },
        compact=True,
    )

    scene = synth.generate_tracks(scenario, cfg.k, cfg.seed, n_points=cfg.n_points)

    # Match documents carry raw sensor pixels; rectification is the
    # consumer's job and depends on its calibration.
    provider = synth.SyntheticMatchProvider(scene)
    raw_kps = {}
    for key in scene.observations:
        kp = provider.keypoints(key).copy()
        if len(kp):
            kp[:, :2] = geo.distort_pixels(kp[:, :2], scenario.camera)
        raw_kps[key] = kp

    pairs = list(
        dict.fromkeys(
            [
                *matching.schedule_pairs(list(range(cfg.k)), cfg.window),
                *matching.schedule_pairs_exhaustive(cfg.k),
            ]
        )
    )
    matches_dir = out / "matches"
    _reset_dir(matches_dir)
    filenames = []
    empty = 0
    for pair in pairs:
        idx, conf = provider.matches(pair)
        if len(idx) == 0:
            empty += 1
            continue
        name = f"{pair.key}.json"
        matching.write_match_document(
            matches_dir / name, pair, raw_kps[pair.a], raw_kps[pair.b], idx, conf
        )
        filenames.append(name)
    _write_json(matches_dir / "manifest.json", filenames)

    _write_json(
        out / "scene.json",
        {
            "seed": cfg.seed,
            "k": cfg.k,
            "camera": scene.camera.to_dict(),
            "camera_raw": scenario.camera.to_dict(),
            "times": [float(t) for t in scene.times],
            "poses": {image_name(k): _pose_doc(p) for k, p in scene.poses.items()},
            "baseline_lc": scenario.baseline_lc.tolist(),
            "baseline_cr": scenario.baseline_cr.tolist(),
            "speed": cfg.speed,
            "travel": cfg.travel,
            "n_tracked_points": len(scene.points),
        },
    )

    cloud = synth.surface_cloud(scenario, cfg.cloud_points, cfg.seed)
    splat.export_ply(cloud, out / "truth_cloud.ply")
    targets_dir = out / "targets"
    _reset_dir(targets_dir)
    names = []
    for key, img in synth.render_targets(cloud, scene.poses, scene.camera).items():
        name = image_name(key)
        imaging.save_image(targets_dir / f"{name}.ppm", img)
        names.append(name)
    _write_json(
        targets_dir / "targets.json",
        {"camera": scene.camera.to_dict(), "views": names},
    )

    return {
        "frames_per_camera": cfg.n_frames,
        "blurred_per_camera": n_blur,
        "injected_offsets": {"L": cfg.offset_left, "R": cfg.offset_right},
        "triplets": cfg.k,
        "tracked_points": len(scene.points),
        "match_documents": len(filenames),
        "pairs_without_overlap": empty,
        "target_views": len(names),
        "cloud_gaussians": int(len(cloud.mu)),
    }


def stage_calibrate(cfg: RunConfig) -> dict:
    """Fit the lens model from board detections, or pass the nominal one."""
    out = Path(cfg.output_dir)
    doc = _read_json(out / "board.json", "calibrate")
    nominal = _nominal_camera(int(doc["width"]), int(doc["height"]))
    cam_path = Path(cfg.calibration_path)
    cam_path.parent.mkdir(parents=True, exist_ok=True)

    if cfg.disable_calibration:
        nominal.save(cam_path)
        _write_json(
            out / "calibration.json",
            {"disabled": True, "camera": nominal.to_dict()},
        )
        return {
            "disabled": True,
            "warnings": [
                "calibration disabled: downstream stages use the nominal "
                "lens model with zero distortion"
            ],
        }

    views = [
        calibration.BoardView(
            frame_id=int(v["frame_id"]),
            corner_ids=np.asarray(v["corner_ids"], dtype=int),
            board_points=np.asarray(v["board_points"], dtype=float),
            pixels=np.asarray(v["pixels"], dtype=float),
        )
        for v in doc["views"]
    ]
    result = calibration.calibrate(views, nominal)
    result.camera.save(cam_path)

    block = {
        "disabled": False,
        "rms_px": float(result.rms),
        "iterations": int(result.iterations),
        "n_views": len(views),
    }
    if "camera_truth" in doc:
        truth = geo.CameraModel.from_dict(doc["camera_truth"])
        block["truth"] = {
            "fx_err_pct": abs(result.camera.fx - truth.fx) / truth.fx * 100.0,
            "fy_err_pct": abs(result.camera.fy - truth.fy) / truth.fy * 100.0,
            "cx_err_px": abs(result.camera.cx - truth.cx),
            "cy_err_px": abs(result.camera.cy - truth.cy),
        }
    info = dict(block)
    info["camera"] = result.camera.to_dict()
    info["poses"] = {
        str(v.frame_id): _pose_doc(p) for v, p in zip(views, result.poses)
    }
    _write_json(out / "calibration.json", info)
    return block


def stage_sync(cfg: RunConfig) -> dict:
    """Recover stream offsets from per-frame vertical shift signals."""
    out = Path(cfg.output_dir)
    frames_dir = Path(cfg.frames_dir)
    names = {}
    for cam in CAMERA_ORDER:
        d = frames_dir / cam
        if not d.is_dir():
            raise MissingInput(f"sync: missing frame directory {d}")
        names[cam] = sorted(p.name for p in d.glob("*.pgm"))
        if len(names[cam]) < 2:
            raise MissingInput(f"sync: need at least 2 frames in {d}")

    (out / "signals").mkdir(parents=True, exist_ok=True)
    signals = {}
    for cam in CAMERA_ORDER:
        signals[cam] = sync_mod.build_shift_signal(
            [imaging.load_image(frames_dir / cam / n) for n in names[cam]],
            camera_id=cam,
            fps=cfg.fps,
        )
        signals[cam].save(out / "signals" / f"{cam}.json")

    n_l, n_c, n_r = (len(names[cam]) for cam in CAMERA_ORDER)
    if cfg.disable_sync:
        result = sync_mod.SyncResult(
            offset_left=0,
            offset_right=0,
            trimmed_length=min(n_l, n_c, n_r),
            residual_l1_left=sync_mod.l1_alignment_loss(signals["C"], signals["L"], 0),
            residual_l1_right=sync_mod.l1_alignment_loss(signals["C"], signals["R"], 0),
        )
    else:
        result = sync_mod.synchronize_three(
            signals["L"], signals["C"], signals["R"], bound=cfg.sync_bound
        )
    rows = sync_mod.aligned_indices(result, n_l, n_c, n_r)

    _write_json(
        out / "sync.json",
        {
            "disabled": bool(cfg.disable_sync),
            "offsets": {"L": int(result.offset_left), "R": int(result.offset_right)},
            "residual_l1": {
                "L": float(result.residual_l1_left),
                "R": float(result.residual_l1_right),
            },
            "trimmed_length": int(result.trimmed_length),
            "frames": names,
            "rows": rows.tolist(),
        },
    )

    block = {
        "disabled": bool(cfg.disable_sync),
        "offsets": {"L": int(result.offset_left), "R": int(result.offset_right)},
        "residual_l1": {
            "L": float(result.residual_l1_left),
            "R": float(result.residual_l1_right),
        },
        "trimmed_length": int(result.trimmed_length),
    }
    if cfg.disable_sync:
        block["warnings"] = [
            "synchronization disabled: streams aligned at offset zero"
        ]
    truth_path = frames_dir / "truth.json"
    if truth_path.exists():
        injected = json.loads(truth_path.read_text()).get("offsets", {})
        block["truth"] = {
            "offsets": {"L": injected.get("L"), "R": injected.get("R")},
            "exact": injected.get("L") == result.offset_left
            and injected.get("R") == result.offset_right,
        }
    return block


def stage_select(cfg: RunConfig) -> dict:
    """Keep the sharpest synced triplet from each of k time bins."""
    out = Path(cfg.output_dir)
    sync_doc = _read_json(out / "sync.json", "select")
    frames_dir = Path(cfg.frames_dir)

    rows = []
    for i, (i_l, i_c, i_r) in enumerate(sync_doc["rows"]):
        stream = {"L": int(i_l), "C": int(i_c), "R": int(i_r)}
        row = {
            cam: frames_dir / cam / sync_doc["frames"][cam][stream[cam]]
            for cam in CAMERA_ORDER
        }
        row["index"] = i
        row["stream"] = stream
        rows.append(row)

    triplets = matching.select_triplets(rows, cfg.k)
    _write_json(
        out / "triplets.json",
        {
            "triplets": [
                {
                    "index": t.index,
                    "manifest_index": t.manifest_index,
                    "score": float(t.score),
                    "frames": {
                        cam: str(Path(t.frames[cam]).relative_to(frames_dir))
                        for cam in CAMERA_ORDER
                    },
                    "stream": rows[t.manifest_index]["stream"],
                }
                for t in triplets
            ]
        },
    )

    scores = np.array([t.score for t in triplets])
    block = {
        "triplets": len(triplets),
        "score_mean": float(scores.mean()),
        "score_min": float(scores.min()),
        "score_max": float(scores.max()),
    }
    truth_path = frames_dir / "truth.json"
    if truth_path.exists():
        blurred = {
            cam: set(ids)
            for cam, ids in json.loads(truth_path.read_text())
            .get("blurred", {})
            .items()
        }
        hit = sum(
            1
            for t in triplets
            if any(
                rows[t.manifest_index]["stream"][cam] in blurred.get(cam, ())
                for cam in CAMERA_ORDER
            )
        )
        block["truth"] = {
            "blurred_selected": hit,
            "blurred_fraction": hit / len(triplets),
        }
    return block


def stage_match_verify(cfg: RunConfig) -> dict:
    """Rectify matcher output and keep pairs that survive RANSAC."""
    out = Path(cfg.output_dir)
    trip_doc = _read_json(out / "triplets.json", "match-verify")
    n = len(trip_doc["triplets"])
    manifest_path = out / "matches" / "manifest.json"
    if not manifest_path.exists():
        raise MissingInput(f"match-verify: missing {manifest_path}")
    cam_path = Path(cfg.calibration_path)
    if not cam_path.exists():
        raise MissingInput(f"match-verify: missing camera model {cam_path}")
    camera = geo.CameraModel.load(cam_path)
    rect = camera.pinhole()

    if cfg.disable_custom_matching:
        pairs = matching.schedule_pairs_exhaustive(n)
    else:
        pairs = matching.schedule_pairs(list(range(n)), cfg.window)
    provider = matching.FileMatchProvider(manifest_path)
    keypoints, match_sets = matching.ingest_matches(pairs, provider)
    rect_kps = {key: _rectify_keypoints(kp, camera) for key, kp in keypoints.items()}

    def _verify(ms):
        try:
            vs = matching.verify_pair(
                ms,
                rect_kps[ms.pair.a],
                rect_kps[ms.pair.b],
                rect,
                tau=cfg.tau_px,
                confidence=cfg.ransac_confidence,
                max_iters=cfg.ransac_max_iters,
                seed=matching.pair_seed(ms.pair, cfg.seed),
            )
            return ms.pair, vs, None
        except DegenerateConfiguration as exc:
            return ms.pair, None, str(exc).split(":", 1)[0]

    threads = cfg.threads or os.cpu_count() or 1
    if threads == 1:
        results = [_verify(ms) for ms in match_sets]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_verify, match_sets))

    verified, dropped = [], []
    for pair, vs, reason in results:
        if vs is None:
            dropped.append({"pair": pair.key, "kind": pair.kind, "reason": reason})
        else:
            verified.append(vs)
    if not verified:
        raise DegenerateConfiguration("no pair survived geometric verification")
    tracks = matching.build_tracks(verified, rect_kps)
    tracks.check()

    _write_json(
        out / "tracks.json",
        {
            "camera": rect.to_dict(),
            "keypoints": {
                image_name(k): np.asarray(v, float).tolist()
                for k, v in tracks.keypoints.items()
            },
            "tracks": [
                [[image_name(obs[0]), int(obs[1])] for obs in tr]
                for tr in tracks.tracks
            ],
            "pair_inliers": tracks.pair_inliers,
            "verified": [
                {
                    "pair": vs.pair.key,
                    "kind": vs.pair.kind,
                    "inliers": len(vs),
                    "inlier_ratio": float(vs.inlier_ratio),
                }
                for vs in verified
            ],
            "dropped": dropped,
        },
        compact=True,
    )

    scheduled = {}
    for p in pairs:
        scheduled[p.kind] = scheduled.get(p.kind, 0) + 1
    reasons = {}
    for d in dropped:
        reasons[d["reason"]] = reasons.get(d["reason"], 0) + 1
    block = {
        "scheduled": scheduled,
        "pairs_with_matches": len(match_sets),
        "verified_pairs": len(verified),
        "dropped": reasons,
        "mean_inlier_ratio": float(np.mean([vs.inlier_ratio for vs in verified])),
        "tracks": len(tracks.tracks),
        "mean_track_length": float(tracks.mean_track_length()),
    }
    if cfg.disable_custom_matching:
        block["warnings"] = [
            "constrained matching disabled: exhaustive schedule with "
            "left-right pairs over the full sequence"
        ]
    return block


def stage_sfm(cfg: RunConfig) -> dict:
    """Incremental reconstruction with optional rig-baseline priors."""
    out = Path(cfg.output_dir)
    doc = _read_json(out / "tracks.json", "sfm")
    rect = geo.CameraModel.from_dict(doc["camera"])
    tracks = TrackSet(
        keypoints={
            parse_image_name(name): np.asarray(v, dtype=float)
            for name, v in doc["keypoints"].items()
        },
        tracks=[
            [(parse_image_name(name), int(i)) for name, i in tr]
            for tr in doc["tracks"]
        ],
        pair_inliers=doc.get("pair_inliers", {}),
    )

    prior = None
    if not cfg.disable_pose_priors:
        prior = RigPrior(
            t_lc=[-cfg.baseline_lc, 0.0, 0.0],
            t_cr=[cfg.baseline_cr, 0.0, 0.0],
            weight_t=cfg.prior_weight_t,
            weight_r=cfg.prior_weight_r,
        )
    model, ba_result, failures = reconstruct_incremental(
        tracks, rect, prior=prior, seed=cfg.seed
    )
    model_dir = out / "model"
    model.save(model_dir)
    model.export_ply(model_dir / "points.ply")

    info = {
        "prior_enabled": prior is not None,
        "stats": model.stats().to_dict(),
        "ba": {
            "converged": bool(ba_result.converged),
            "iterations": int(ba_result.iterations),
            "initial_cost": float(ba_result.initial_cost),
            "final_cost": float(ba_result.final_cost),
            "mean_reprojection_px": float(ba_result.mean_reprojection_px),
        },
        "failures": {image_name(k): v for k, v in failures.items()},
    }
    dists = evaluate.baseline_distances(model)
    if len(dists["lc"]):
        info["rig"] = {
            "complete_triplets": int(len(dists["lc"])),
            "baseline_lc_mean_m": float(dists["lc"].mean()),
            "baseline_cr_mean_m": float(dists["cr"].mean()),
            "baseline_lr_mean_m": float(dists["lr"].mean()),
        }
        if len(dists["lc"]) >= 2:
            info["rig"]["baseline_drift"] = evaluate.baseline_drift(dists)

    scene_path = out / "scene.json"
    if scene_path.exists():
        scene_doc = json.loads(scene_path.read_text())
        truth_poses = {
            parse_image_name(name): _pose_from(p)
            for name, p in scene_doc["poses"].items()
        }
        truth = {}
        if len(model.registered_keys()) >= 3:
            rmse, _, _ = evaluate.center_rmse(model, truth_poses)
            truth["center_rmse_m"] = rmse
            travel = float(scene_doc.get("travel", 0.0))
            if travel > 0:
                truth["center_rmse_pct_of_travel"] = rmse / travel * 100.0
        b_lc = np.asarray(scene_doc["baseline_lc"], float)
        b_cr = np.asarray(scene_doc["baseline_cr"], float)
        if len(dists["lc"]):
            truth["baseline_lc_err_mm"] = (
                abs(dists["lc"].mean() - np.linalg.norm(b_lc)) * 1000.0
            )
            truth["baseline_cr_err_mm"] = (
                abs(dists["cr"].mean() - np.linalg.norm(b_cr)) * 1000.0
            )
            lr_truth = float(np.linalg.norm(b_cr - b_lc))
            truth["baseline_lr_err_pct"] = (
                abs(dists["lr"].mean() - lr_truth) / lr_truth * 100.0
            )
        info["truth"] = truth
    _write_json(out / "sfm.json", info)

    block = {k: info[k] for k in ("prior_enabled", "stats", "ba")}
    block["failed_registrations"] = len(failures)
    for key in ("rig", "truth"):
        if key in info:
            block[key] = info[key]
    if failures:
        block["warnings"] = [
            f"{len(failures)} image(s) failed to register: "
            + ", ".join(sorted(image_name(k) for k in failures))
        ]
    return block


def stage_splat(cfg: RunConfig) -> dict:
    """Fit a Gaussian cloud to the captured views of the sparse model."""
    out = Path(cfg.output_dir)
    model_dir = out / "model"
    if not (model_dir / "images.json").exists():
        raise MissingInput(f"splat: missing sparse model in {model_dir}")
    model = SparseModel.load(model_dir)
    tgt_doc = _read_json(out / "targets" / "targets.json", "splat")
    camera = geo.CameraModel.from_dict(tgt_doc["camera"])

    images = {}
    for name in tgt_doc["views"]:
        path = out / "targets" / f"{name}.ppm"
        if path.exists():
            images[parse_image_name(name)] = imaging.load_image(path)
    order = [
        k
        for k in sorted(model.registered_keys(), key=_view_sort_key)
        if k in images
    ]
    if len(order) < 2:
        raise DegenerateConfiguration(
            "splat needs at least 2 registered views with target images"
        )

    splat.colorize_points(model, images)
    cloud = splat.seed_gaussians(model)
    views = [splat.View(model.images[k].pose, camera, images[k]) for k in order]
    result = splat.optimize(
        cloud,
        views,
        iters=cfg.splat_iters,
        lam=cfg.splat_lambda,
        eval_every=cfg.eval_every,
    )
    splat.export_ply(result.cloud, out / "cloud.ply")

    info = {
        "gaussians": int(len(result.cloud.mu)),
        "views": [image_name(k) for k in order],
        "holdout": image_name(order[-1]),
        "iterations": int(result.iterations),
        "stopped_early": bool(result.stopped_early),
        "final_train_loss": float(result.train_trace[-1]),
        "best_holdout_loss": float(min(h for _, h in result.holdout_trace)),
    }
    _write_json(out / "splat.json", info)
    block = dict(info)
    block["views"] = len(order)
    return block


def stage_render(cfg: RunConfig) -> dict:
    """Re-render every registered view from the exported cloud."""
    out = Path(cfg.output_dir)
    ply_path = out / "cloud.ply"
    if not ply_path.exists():
        raise MissingInput(f"render: missing {ply_path}")
    if not (out / "model" / "images.json").exists():
        raise MissingInput(f"render: missing sparse model in {out / 'model'}")
    cloud = splat.load_ply(ply_path)
    model = SparseModel.load(out / "model")
    tgt_doc = _read_json(out / "targets" / "targets.json", "render")
    camera = geo.CameraModel.from_dict(tgt_doc["camera"])

    renders_dir = out / "renders"
    _reset_dir(renders_dir)
    names = []
    for key in sorted(model.registered_keys(), key=_view_sort_key):
        name = image_name(key)
        target = splat.render(cloud, model.images[key].pose, camera)
        imaging.save_image(renders_dir / f"{name}.ppm", target.color)
        names.append(name)
    _write_json(
        renders_dir / "index.json", {"camera": tgt_doc["camera"], "views": names}
    )
    return {"views_rendered": len(names), "gaussians": int(len(cloud.mu))}


def stage_metrics(cfg: RunConfig) -> dict:
    """Compare re-rendered views against their held captures."""
    out = Path(cfg.output_dir)
    idx = _read_json(out / "renders" / "index.json", "metrics")
    tgt_doc = _read_json(out / "targets" / "targets.json", "metrics")
    holdout = None
    splat_path = out / "splat.json"
    if splat_path.exists():
        holdout = json.loads(splat_path.read_text()).get("holdout")

    available = set(tgt_doc["views"])
    rows = []
    for name in idx["views"]:
        if name not in available:
            continue
        rendered = imaging.load_image(out / "renders" / f"{name}.ppm")
        target = imaging.load_image(out / "targets" / f"{name}.ppm")
        rows.append(
            {
                "view": name,
                "psnr_db": float(splat.psnr(rendered, target)),
                "ssim": float(splat.ssim(rendered, target)),
                "held_out": name == holdout,
            }
        )
    if not rows:
        raise MissingInput("metrics: no rendered view has a matching target")

    doc = {
        "views": rows,
        "mean_psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
    }
    held = [r for r in rows if r["held_out"]]
    if held:
        doc["holdout"] = held[0]
    _write_json(out / "metrics.json", doc)

    block = {
        "views": len(rows),
        "mean_psnr_db": doc["mean_psnr_db"],
        "mean_ssim": doc["mean_ssim"],
    }
    if held:
        block["holdout_psnr_db"] = held[0]["psnr_db"]
        block["holdout_ssim"] = held[0]["ssim"]
    return block


# -- driver ----------------------------------------------------------------

STAGES = [
    ("synth", stage_synth),
    ("calibrate", stage_calibrate),
    ("sync", stage_sync),
    ("select", stage_select),
    ("match-verify", stage_match_verify),
    ("sfm", stage_sfm),
    ("splat", stage_splat),
    ("render", stage_render),
    ("metrics", stage_metrics),
]
STAGE_FUNCS = dict(STAGES)


def run_stage(name: str, cfg: RunConfig):
    """Run one stage, timing it and mapping deep errors to StageFailed."""
    fn = STAGE_FUNCS[name]
    log.info("stage %s starting", name)
    start = time.perf_counter()
    try:
        block = fn(cfg)
    except (MissingInput, StageFailed):
        raise
    except PipelineError as exc:
        raise StageFailed(f"{name}: {exc}", stage=name) from exc
    elapsed = time.perf_counter() - start
    log.info("stage %s finished in %.2fs", name, elapsed)
    return block, elapsed


def run_all(cfg: RunConfig, serve=None) -> RunReport:
    """Chain every stage and write the consolidated report."""
    report = RunReport(config=cfg.to_dict())
    for name, _ in STAGES:
        block, elapsed = run_stage(name, cfg)
        for message in block.pop("warnings", []):
            report.warn(message)
        report.add(name, block, elapsed)
    if serve is not None:
        for message in _serve(cfg, serve):
            report.warn(message)
    report.save(cfg.output_dir)
    return report


def _serve(cfg: RunConfig, dest) -> list:
    """Copy the splat export (and viewer bundle, if built) for hosting."""
    out = Path(cfg.output_dir)
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    warnings = []
    ply_path = out / "cloud.ply"
    if ply_path.exists():
        shutil.copy2(ply_path, dest / "cloud.ply")
    else:
        warnings.append("serve: no cloud.ply to publish")
    # Repo checkout first (editable installs), working directory second.
    frontend = Path(__file__).resolve().parents[2] / "frontend"
    if not (frontend / "dist").is_dir():
        frontend = Path("frontend")
    page = frontend / "index.html"
    bundle = frontend / "dist"
    if bundle.is_dir() and page.is_file():
        # Keep the page's ./dist/main.js reference working as-is.
        shutil.copy2(page, dest / "index.html")
        for path in sorted(bundle.rglob("*")):
            if path.is_file():
                rel = path.relative_to(bundle)
                (dest / "dist" / rel).parent.mkdir(parents=True, exist_ok=True)
                shutil.copy2(path, dest / "dist" / rel)
    else:
        warnings.append(
            "serve: viewer bundle frontend/dist not found; copied the "
            "point cloud only"
        )
    return warnings


# Config fields that may be overridden from the command line.
_OVERRIDABLE = (
    "output_dir",
    "frames_dir",
    "calibration_path",
    "seed",
    "threads",
    "k",
    "window",
    "sync_bound",
    "tau_px",
    "splat_iters",
    "disable_calibration",
    "disable_sync",
    "disable_custom_matching",
    "disable_pose_priors",
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", dest="output_dir", help="artifact directory")
    common.add_argument("--frames", dest="frames_dir", help="frame stream root")
    common.add_argument(
        "--calibration", dest="calibration_path", help="camera model path"
    )
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument(
        "--threads", type=int, help="worker threads; 0 = auto, 1 = reproducible"
    )
    common.add_argument("--k", type=int, help="triplets to select")
    common.add_argument("--window", type=int, help="temporal pairing window")
    common.add_argument(
        "--sync-bound", dest="sync_bound", type=int, help="offset search bound"
    )
    common.add_argument(
        "--tau-px", dest="tau_px", type=float, help="verification threshold"
    )
    common.add_argument(
        "--splat-iters", dest="splat_iters", type=int, help="optimizer iterations"
    )
    for flag in (
        "disable-calibration",
        "disable-sync",
        "disable-custom-matching",
        "disable-pose-priors",
    ):
        common.add_argument(
            f"--{flag}",
            dest=flag.replace("-", "_"),
            action="store_const",
            const=True,
            default=None,
            help=f"ablation: {flag.replace('-', ' ')}",
        )
    common.add_argument("--quiet", action="store_true", help="suppress progress logs")

    parser = argparse.ArgumentParser(
        prog="rigsplat",
        description="three-camera rig reconstruction and splatting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in STAGES:
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0])
    run_parser = sub.add_parser(
        "run-all", parents=[common], help="run every stage and write the report"
    )
    run_parser.add_argument(
        "--serve", metavar="DIR", help="copy the splat export and viewer here"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {name: getattr(args, name) for name in _OVERRIDABLE}
        cfg = load_config(args.config, overrides)
        if args.command == "run-all":
            report = run_all(cfg, serve=args.serve)
            print(report.render_text())
        else:
            block, _ = run_stage(args.command, cfg)
            print(json.dumps(block, indent=2, sort_keys=True))
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
