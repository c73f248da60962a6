"""Command-line pipeline: every stage is a subcommand, stages exchange
documented files, and ``pipeline`` chains them end to end.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
Wall-clock timings go to ``timings.json``; ``metrics.json`` holds only
deterministic values so a rerun with the same config and seed reproduces
it byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import graphext as gx
from . import mrf, recon, simulator
from . import pattern as pat
from .unwrap import CorrespondenceMap, refine_phase
from .unwrap import unwrap as unwrap_phase_map
from .gridio import (
    config_hash,
    load_image,
    read_grid,
    read_json,
    save_image,
    write_grid,
    write_json,
)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# configuration


def default_config() -> dict:
    return {
        "seed": 0,
        "pattern": {"rows": 24, "cols": 32, "period_u": 16, "period_v": 16, "code_seed": 7},
        "rig": {
            "width": 640,
            "height": 480,
            "fx": 600.0,
            "baseline": 0.25,
            "depth": 1.0,
            "projector_fov_scale": 0.9,
        },
        "scene": {
            "kind": "plane",
            "normal": [0.0, 0.0, -1.0],
            "offset": -1.0,
            "albedo": {"kind": "constant", "value": 1.0},
        },
        "augment": {
            "noise_mean": 0.0,
            "noise_std": 0.0,
            "roll_degrees": 0.0,
            "brightness_scale": 1.0,
            "rng_seed": 0,
        },
        "detector": {"top_k": 5, "normalize": False, "corrupt_q": 0.0, "corrupt_exact": True},
        "phase_source": "estimate",
        "labels_source": "refine",
        "phase_bias": {"amplitude_u": 0.0, "amplitude_v": 0.0, "wavelength_px": 320.0},
        "solver": {"kind": "vote", "lambda": None, "max_sweeps": 50},
        "correction": {"enabled": True, "sigma_g": None, "w_min": 1e-3},
        "triangulation": {"method": "column-plane", "min_angle_deg": 0.1},
        "eval": {"inlier_mm": 3.0, "profile_row": None},
    }


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    base = default_config()
    for key in cfg:
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = merge_config(base, cfg)
    p = cfg["pattern"]
    if p["rows"] < 1 or p["cols"] < 1:
        raise ConfigError("pattern.rows/cols must be >= 1")
    if p["period_u"] < 4 or p["period_v"] < 4:
        raise ConfigError("pattern periods must be >= 4 px")
    if cfg["scene"]["kind"] not in ("plane", "heightfield", "mesh"):
        raise ConfigError(f"unknown scene kind {cfg['scene']['kind']!r}")
    if cfg["phase_source"] not in ("estimate", "truth"):
        raise ConfigError("phase_source must be 'estimate' or 'truth'")
    if cfg["labels_source"] not in ("refine", "truth"):
        raise ConfigError("labels_source must be 'refine' or 'truth'")
    if cfg["solver"]["kind"] not in ("vote", "icm", "exact", "none"):
        raise ConfigError("solver.kind must be vote, icm, exact or none")
    if cfg["triangulation"]["method"] not in ("column-plane", "midpoint"):
        raise ConfigError("triangulation.method must be column-plane or midpoint")
    if not (0.0 <= cfg["detector"]["corrupt_q"] <= 1.0):
        raise ConfigError("detector.corrupt_q must be in [0, 1]")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return validate_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    obj = read_json(path)
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return validate_config(obj)


def build_pattern(cfg) -> pat.GridPattern:
    p = cfg["pattern"]
    return pat.generate_pattern(
        p["rows"], p["cols"], p["period_u"], p["period_v"], p["code_seed"],
        resolution=p.get("resolution"),
    )


def build_rig(cfg, pattern):
    r = cfg["rig"]
    return simulator.default_rig(
        pattern,
        width=r["width"],
        height=r["height"],
        baseline=r["baseline"],
        scene_depth=r["depth"],
        fx=r["fx"],
        projector_fov_scale=r["projector_fov_scale"],
    )


def build_scene(cfg):
    s = cfg["scene"]
    albedo = s.get("albedo", {"kind": "constant", "value": 1.0})
    if s["kind"] == "plane":
        return simulator.PlaneScene(normal=tuple(s["normal"]), offset=float(s["offset"]),
                                    albedo=albedo)
    if s["kind"] == "heightfield":
        return simulator.make_heightfield(
            seed=int(s.get("seed", 0)),
            base_depth=float(s.get("base_depth", 1.0)),
            amplitude=float(s.get("amplitude", 0.01)),
            grid=int(s.get("grid", 9)),
            upsample=int(s.get("upsample", 8)),
            x_half=float(s.get("x_half", 0.45)),
            y_half=float(s.get("y_half", 0.35)),
            albedo=albedo,
        )
    return simulator.MeshScene(triangles=np.asarray(s["triangles"], dtype=np.float64),
                               albedo=albedo)


def detector_params(cfg) -> gx.DetectorParams:
    params = gx.DetectorParams()
    for key, value in cfg["detector"].items():
        if key in ("corrupt_q", "corrupt_exact"):
            continue
        if not hasattr(params, key):
            raise ConfigError(f"unknown detector parameter {key!r}")
        setattr(params, key, value)
    return params


# ---------------------------------------------------------------------------
# stages (file-to-file)


def stage_gen_pattern(cfg, out_dir: Path):
    pattern = build_pattern(cfg)
    image = pat.rasterize_pattern(pattern)
    pdir = out_dir / "pattern"
    pdir.mkdir(parents=True, exist_ok=True)
    meta = pat.pattern_to_json(pattern)
    meta["config_hash"] = config_hash(cfg)
    write_json(pdir / "pattern.json", meta)
    save_image(pdir / "pattern.png", image)
    return pattern, image


def load_pattern_dir(out_dir: Path) -> pat.GridPattern:
    return pat.pattern_from_json(read_json(out_dir / "pattern" / "pattern.json"))


def stage_simulate(cfg, out_dir: Path):
    pattern = load_pattern_dir(out_dir)
    pattern_image = load_image(out_dir / "pattern" / "pattern.png")
    camera, projector = build_rig(cfg, pattern)
    scene = build_scene(cfg)
    capture = simulator.render_capture(scene, camera, projector, pattern, pattern_image)
    aug = simulator.AugmentConfig(**cfg["augment"])
    capture.image = simulator.augment(capture.image, aug)
    capture.validate()
    cdir = out_dir / "capture"
    cdir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(cfg), "seed": cfg["seed"]}
    save_image(cdir / "image.png", capture.image)
    write_grid(cdir / "gt_depth.grid", capture.gt_depth, meta)
    write_grid(cdir / "gt_phase_u.grid", capture.gt_phase_u, meta)
    write_grid(cdir / "gt_phase_v.grid", capture.gt_phase_v, meta)
    write_grid(cdir / "gt_node_id.grid", capture.gt_node_id, meta)
    write_grid(cdir / "gt_code.grid", capture.gt_code.astype(np.int8), meta)
    write_grid(cdir / "gt_proj_u.grid", capture.gt_proj_u, meta)
    write_grid(cdir / "gt_proj_v.grid", capture.gt_proj_v, meta)
    write_json(
        cdir / "calib.json",
        {
            "camera": simulator.pinhole_to_json(camera),
            "projector": simulator.pinhole_to_json(projector),
            "nominal_depth": cfg["rig"]["depth"],
            "config_hash": config_hash(cfg),
        },
    )
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "scene": cfg["scene"],
        "augment": cfg["augment"],
        "empty": capture.is_empty,
        "lit_fraction": float(capture.lit.mean()),
    }
    write_json(cdir / "manifest.json", manifest)
    if capture.is_empty:
        print("warning: capture is empty (scene outside both frusta)", file=sys.stderr)
    return capture


def load_capture_dir(out_dir: Path):
    cdir = out_dir / "capture"
    image = load_image(cdir / "image.png")
    fields = {}
    for name in ("gt_depth", "gt_phase_u", "gt_phase_v", "gt_node_id", "gt_code",
                 "gt_proj_u", "gt_proj_v"):
        fields[name], _ = read_grid(cdir / f"{name}.grid")
    return simulator.SceneCapture(
        image=image,
        gt_depth=fields["gt_depth"],
        gt_phase_u=fields["gt_phase_u"],
        gt_phase_v=fields["gt_phase_v"],
        gt_node_id=fields["gt_node_id"],
        gt_code=fields["gt_code"],
        gt_proj_u=fields["gt_proj_u"],
        gt_proj_v=fields["gt_proj_v"],
    )


def load_calib(path) -> gx.EpipolarPrior:
    obj = read_json(path)
    return gx.EpipolarPrior(
        camera=simulator.pinhole_from_json(obj["camera"]),
        projector=simulator.pinhole_from_json(obj["projector"]),
        nominal_depth=float(obj["nominal_depth"]),
    )


def _inject_bias(cfg, maps: gx.WrappedPhaseMaps) -> gx.WrappedPhaseMaps:
    b = cfg["phase_bias"]
    if b["amplitude_u"] == 0.0 and b["amplitude_v"] == 0.0:
        return maps
    h, w = maps.mask.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    lam = float(b["wavelength_px"])
    bias_u = b["amplitude_u"] * np.sin(2 * np.pi * xx / lam + 0.7) * np.cos(
        2 * np.pi * yy / (0.8 * lam)
    )
    bias_v = b["amplitude_v"] * np.cos(2 * np.pi * xx / (0.9 * lam)) * np.sin(
        2 * np.pi * yy / (0.75 * lam) + 1.1
    )
    return gx.WrappedPhaseMaps(
        phase_u=pat.wrap01(maps.phase_u + bias_u),
        phase_v=pat.wrap01(maps.phase_v + bias_v),
        mask=maps.mask.copy(),
    ).validate()


def stage_detect(cfg, out_dir: Path):
    pattern = load_pattern_dir(out_dir)
    capture = load_capture_dir(out_dir)
    calib = load_calib(out_dir / "capture" / "calib.json")
    params = detector_params(cfg)
    graph = gx.detect_graph(capture.image, pattern, calib=calib, params=params)

    if cfg["phase_source"] == "truth":
        maps = gx.truth_phase_maps(capture)
    else:
        maps = gx.estimate_wrapped_phase(capture.image, params=params, calib=calib,
                                         pattern=pattern)
    maps = _inject_bias(cfg, maps)

    q = cfg["detector"]["corrupt_q"]
    if q > 0:
        true_ids = _true_ids_for_graph(graph, capture)
        rng = np.random.default_rng(cfg["seed"] + 7919)
        graph = gx.corrupt_candidates(graph, true_ids, q, rng, pattern.num_nodes,
                                      exact=cfg["detector"]["corrupt_exact"])

    ddir = out_dir / "detect"
    ddir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(cfg)}
    gx.write_phase_maps(maps, ddir / "phase_u.grid", ddir / "phase_v.grid",
                        ddir / "mask.grid", meta)
    payload = gx.graph_to_json(graph)
    payload["config_hash"] = config_hash(cfg)
    write_json(ddir / "graph.json", payload)
    return graph, maps


def _true_ids_for_graph(graph, capture):
    h, w = capture.gt_node_id.shape
    out = np.full(graph.num_nodes, -1, dtype=np.int64)
    for i, node in enumerate(graph.nodes):
        px = min(max(int(round(node.x)), 0), w - 1)
        py = min(max(int(round(node.y)), 0), h - 1)
        out[i] = capture.gt_node_id[py, px]
    return out


def load_detect_dir(out_dir: Path):
    ddir = out_dir / "detect"
    pu, _ = read_grid(ddir / "phase_u.grid")
    pv, _ = read_grid(ddir / "phase_v.grid")
    mask, _ = read_grid(ddir / "mask.grid")
    maps = gx.WrappedPhaseMaps(
        phase_u=pu.astype(np.float64), phase_v=pv.astype(np.float64),
        mask=mask.astype(np.float64)
    ).validate()
    obj = read_json(ddir / "graph.json")
    graph = gx.graph_from_json(obj)
    return graph, maps


def stage_refine(cfg, out_dir: Path):
    pattern = load_pattern_dir(out_dir)
    graph, _ = load_detect_dir(out_dir)
    capture = load_capture_dir(out_dir)

    if cfg["labels_source"] == "truth":
        labels = _true_ids_for_graph(graph, capture)
        result = {"labels": labels.tolist(), "converged": True, "sweeps": 0, "solver": "truth"}
        labeling = mrf.Labeling(labels)
    else:
        kind = cfg["solver"]["kind"]
        lam = cfg["solver"]["lambda"]
        sweeps = cfg["solver"]["max_sweeps"]
        if kind == "none":
            labeling = mrf.Labeling(np.array([int(n.candidate_ids[0]) for n in graph.nodes]))
            result = {"labels": labeling.labels.tolist(), "converged": True, "sweeps": 0,
                      "solver": "none"}
        elif kind == "vote":
            res = mrf.vote_refine(graph, pattern, max_sweeps=sweeps)
            labeling = res.labeling
            result = {"labels": labeling.labels.tolist(), "converged": res.converged,
                      "sweeps": res.sweeps, "scores": res.scores.tolist(), "solver": "vote"}
        elif kind == "icm":
            res = mrf.icm_refine(graph, pattern, lam=lam, max_sweeps=sweeps)
            labeling = res.labeling
            result = {"labels": labeling.labels.tolist(), "converged": res.converged,
                      "sweeps": res.sweeps, "energies": res.energies, "solver": "icm"}
        else:
            lam_val = lam if lam is not None else mrf.default_lambda(graph)
            labeling = mrf.brute_force_map(graph, pattern, lam_val)
            result = {"labels": labeling.labels.tolist(), "converged": True, "sweeps": 0,
                      "solver": "exact", "lambda": lam_val}

    true_ids = _true_ids_for_graph(graph, capture)
    known = true_ids >= 0
    if known.any():
        result["label_accuracy"] = float(np.mean(labeling.labels[known] == true_ids[known]))
    result["config_hash"] = config_hash(cfg)
    rdir = out_dir / "refine"
    rdir.mkdir(parents=True, exist_ok=True)
    write_json(rdir / "labels.json", result)
    return labeling, result


def stage_unwrap(cfg, out_dir: Path):
    pattern = load_pattern_dir(out_dir)
    graph, maps = load_detect_dir(out_dir)
    capture = load_capture_dir(out_dir)
    labels_obj = read_json(out_dir / "refine" / "labels.json")
    labeling = mrf.Labeling(np.asarray(labels_obj["labels"], dtype=np.int64))

    corr_field = None
    if cfg["correction"]["enabled"] and len(graph.edges):
        maps, corr_field = refine_phase(
            graph, capture.image, maps,
            sigma_g=cfg["correction"]["sigma_g"], w_min=cfg["correction"]["w_min"],
        )
    corr = unwrap_phase_map(maps, labeling, graph, pattern)

    udir = out_dir / "unwrap"
    udir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(cfg)}
    write_grid(udir / "corr_u.grid", corr.u.astype(np.float32), meta)
    write_grid(udir / "corr_v.grid", corr.v.astype(np.float32), meta)
    write_grid(udir / "corr_valid.grid", corr.valid.astype(np.uint8), meta)
    if corr_field is not None:
        write_grid(udir / "correction_u.grid", corr_field.c_u.astype(np.float32), meta)
        write_grid(udir / "correction_v.grid", corr_field.c_v.astype(np.float32), meta)
    return corr


def load_unwrap_dir(out_dir: Path) -> CorrespondenceMap:
    udir = out_dir / "unwrap"
    u, _ = read_grid(udir / "corr_u.grid")
    v, _ = read_grid(udir / "corr_v.grid")
    valid, _ = read_grid(udir / "corr_valid.grid")
    return CorrespondenceMap(u=u.astype(np.float64), v=v.astype(np.float64),
                                valid=valid.astype(bool))


def stage_reconstruct(cfg, out_dir: Path):
    corr = load_unwrap_dir(out_dir)
    calib = load_calib(out_dir / "capture" / "calib.json")
    capture = load_capture_dir(out_dir)
    cloud, depth, stats = recon.triangulate(
        corr, calib.camera, calib.projector,
        method=cfg["triangulation"]["method"],
        min_angle_deg=cfg["triangulation"]["min_angle_deg"],
        image=capture.image,
    )
    rdir = out_dir / "recon"
    rdir.mkdir(parents=True, exist_ok=True)
    recon.export_ply(cloud, rdir / "cloud.ply")
    write_grid(rdir / "depth.grid", depth, {"config_hash": config_hash(cfg)})
    write_json(rdir / "stats.json", {**stats, "config_hash": config_hash(cfg)})
    return cloud, depth, stats


def stage_eval(cfg, out_dir: Path):
    depth, _ = read_grid(out_dir / "recon" / "depth.grid")
    capture = load_capture_dir(out_dir)
    labels_obj = read_json(out_dir / "refine" / "labels.json")
    lit = np.isfinite(capture.gt_proj_u)
    report = recon.evaluate(
        depth, capture.gt_depth,
        inlier_mm=cfg["eval"]["inlier_mm"],
        coverage_denominator=int(lit.sum()),
    )
    extra = {"n_points": int(np.isfinite(depth).sum())}
    if "label_accuracy" in labels_obj:
        extra["label_accuracy"] = labels_obj["label_accuracy"]
    if cfg["scene"]["kind"] == "plane":
        ys, xs = np.nonzero(np.isfinite(depth))
        calib = load_calib(out_dir / "capture" / "calib.json")
        dirs = calib.camera.ray_through(xs.astype(np.float64), ys.astype(np.float64))
        pts = calib.camera.center[None, :] + depth[ys, xs][:, None] * dirs
        if len(pts) >= 3:
            _, _, rms = recon.fit_plane(pts)
            extra["plane_fit_rmse_mm"] = rms * 1000.0
    report.extra.update(extra)
    row = cfg["eval"]["profile_row"]
    if row is not None:
        recon.export_profile_csv(out_dir / "recon" / "profile.csv", int(row), depth,
                                 capture.gt_depth)
    payload = report.to_json()
    payload["config_hash"] = config_hash(cfg)
    write_json(out_dir / "metrics.json", payload)
    return report


_STAGES = (
    ("gen-pattern", stage_gen_pattern),
    ("simulate", stage_simulate),
    ("detect", stage_detect),
    ("refine", stage_refine),
    ("unwrap", stage_unwrap),
    ("reconstruct", stage_reconstruct),
    ("eval", stage_eval),
)


def run_pipeline(cfg, out_dir) -> recon.MetricsReport:
    """Run all stages; persist artifacts and per-stage timings."""
    cfg = validate_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", cfg)
    timings = {}
    report = None
    total0 = time.perf_counter()
    for name, fn in _STAGES:
        t0 = time.perf_counter()
        try:
            result = fn(cfg, out_dir)
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[name] = (time.perf_counter() - t0) * 1000.0
        if name == "eval":
            report = result
    timings["total"] = (time.perf_counter() - total0) * 1000.0
    write_json(out_dir / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    report.timings_ms = timings
    return report


def run_ablation(cfg, variants, out_dir, threads=1):
    """Run named config variants and tabulate their metrics side by side."""
    cfg = validate_config(cfg)
    if not isinstance(variants, list) or len(variants) < 2:
        raise ConfigError("ablation needs a list of at least two variants")
    for var in variants:
        if "name" not in var:
            raise ConfigError("every ablation variant needs a 'name'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(var):
        vcfg = merge_config(cfg, var.get("overrides", {}))
        report = run_pipeline(vcfg, out_dir / var["name"])
        return var["name"], report

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, variants))
    else:
        results = [run_one(v) for v in variants]

    rows = []
    base = results[0][1]
    for name, rep in results:
        row = {"name": name, **rep.to_json()}
        row["rmse_delta_mm"] = rep.rmse_mm - base.rmse_mm
        rows.append(row)
    write_json(out_dir / "ablation.json", rows)
    cols = sorted({k for row in rows for k in row if k != "name"})
    lines = [",".join(["name"] + cols)]
    for row in rows:
        lines.append(",".join([row["name"]] + [repr(row.get(c, "")) for c in cols]))
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------
# argparse front end


def _common(parser):
    parser.add_argument("--config", default=None, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out-dir", default="out", help="artifact directory")
    parser.add_argument("--threads", type=int, default=1)
    return parser


def build_parser():
    root = argparse.ArgumentParser(prog="gridscan", description=__doc__)
    sub = root.add_subparsers(dest="command", required=True)

    sp = _common(sub.add_parser("gen-pattern", help="generate and rasterize a coded pattern"))
    sp.add_argument("--rows", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--period", type=int, help="sets both periods")
    sp.add_argument("--pattern-seed", type=int, dest="pattern_seed")

    sp = _common(sub.add_parser("simulate", help="render a synthetic capture"))
    sp.add_argument("--scene", help="scene spec JSON file (overrides config)")
    sp.add_argument("--pattern", help="pattern JSON file (else gen-pattern output)")

    sp = _common(sub.add_parser("detect", help="extract graph and wrapped phase"))
    sp.add_argument("--image", help="standalone mode: input image")
    sp.add_argument("--pattern", help="standalone mode: pattern JSON")
    sp.add_argument("--calib", help="standalone mode: calibration JSON")
    sp.add_argument("--period", help="camera-side period in px, 'P' or 'PU,PV' "
                                     "(skips autocorrelation estimation)")
    sp.add_argument("--out", help="standalone mode: output graph JSON")

    sp = _common(sub.add_parser("refine", help="refine node correspondences"))
    sp.add_argument("--graph", help="standalone mode: graph JSON")
    sp.add_argument("--pattern", help="standalone mode: pattern JSON")
    sp.add_argument("--solver", choices=("vote", "icm", "exact", "none"))
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--out", help="standalone mode: output labels JSON")

    sp = _common(sub.add_parser("unwrap", help="correct phase and unwrap"))
    sp.add_argument("--sigma", type=float, help="correction kernel sigma (camera px)")
    sp.add_argument("--phase", help="standalone mode: directory with phase_u/phase_v/mask grids")
    sp.add_argument("--graph", help="standalone mode: graph JSON")
    sp.add_argument("--labels", help="standalone mode: labels JSON")
    sp.add_argument("--pattern", help="standalone mode: pattern JSON")
    sp.add_argument("--image", help="standalone mode: captured image enabling line correction")

    sp = _common(sub.add_parser("reconstruct", help="triangulate the correspondence map"))
    sp.add_argument("--corr", help="standalone mode: directory with corr_u/corr_v/corr_valid grids")
    sp.add_argument("--calib", help="standalone mode: calibration JSON")

    sp = _common(sub.add_parser("eval", help="compare depth maps"))
    sp.add_argument("--pred", help="standalone mode: predicted depth grid")
    sp.add_argument("--gt", help="standalone mode: ground-truth depth grid")
    sp.add_argument("--report", help="standalone mode: output metrics JSON")
    sp.add_argument("--profile-row", type=int, dest="profile_row")

    _common(sub.add_parser("pipeline", help="run every stage end to end"))

    sp = _common(sub.add_parser("ablate", help="run config variants and compare"))
    sp.add_argument("--variants", required=True, help="JSON list of {name, overrides}")

    return root


def _config_from_args(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "sigma", None) is not None:
        cfg["correction"]["sigma_g"] = args.sigma
    if getattr(args, "period", None):
        parts = [float(v) for v in str(args.period).split(",")]
        cfg["detector"]["period_hint"] = [parts[0], parts[-1]]
    if getattr(args, "solver", None):
        cfg["solver"]["kind"] = args.solver
    if getattr(args, "lam", None) is not None:
        cfg["solver"]["lambda"] = args.lam
    if getattr(args, "profile_row", None) is not None:
        cfg["eval"]["profile_row"] = args.profile_row
    if getattr(args, "command", "") == "gen-pattern":
        p = cfg["pattern"]
        if args.rows is not None:
            p["rows"] = args.rows
        if args.cols is not None:
            p["cols"] = args.cols
        if args.period is not None:
            p["period_u"] = p["period_v"] = args.period
        if args.pattern_seed is not None:
            p["code_seed"] = args.pattern_seed
        elif args.seed is not None:
            p["code_seed"] = args.seed
    if getattr(args, "command", "") == "simulate" and getattr(args, "scene", None):
        cfg["scene"] = read_json(args.scene)
    return validate_config(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out_dir)
    try:
        cfg = _config_from_args(args)
        cmd = args.command
        if cmd == "gen-pattern":
            stage_gen_pattern(cfg, out_dir)
        elif cmd == "simulate":
            if getattr(args, "pattern", None):
                pattern = pat.pattern_from_json(read_json(args.pattern))
                pdir = out_dir / "pattern"
                pdir.mkdir(parents=True, exist_ok=True)
                meta = pat.pattern_to_json(pattern)
                meta["config_hash"] = config_hash(cfg)
                write_json(pdir / "pattern.json", meta)
                save_image(pdir / "pattern.png", pat.rasterize_pattern(pattern))
            elif not (out_dir / "pattern" / "pattern.json").exists():
                stage_gen_pattern(cfg, out_dir)
            stage_simulate(cfg, out_dir)
        elif cmd == "detect":
            if args.image and args.pattern:
                pattern = pat.pattern_from_json(read_json(args.pattern))
                calib = load_calib(args.calib) if args.calib else None
                graph = gx.detect_graph(load_image(args.image), pattern, calib=calib,
                                        params=detector_params(cfg))
                gx.write_graph_json(graph, args.out or out_dir / "graph.json")
            else:
                stage_detect(cfg, out_dir)
        elif cmd == "refine":
            if args.graph and args.pattern:
                pattern = pat.pattern_from_json(read_json(args.pattern))
                graph = gx.read_graph_json(args.graph).validate(pattern.num_nodes)
                kind = args.solver or cfg["solver"]["kind"]
                if kind == "vote":
                    res = mrf.vote_refine(graph, pattern)
                    labels = res.labeling.labels
                elif kind == "icm":
                    labels = mrf.icm_refine(graph, pattern, lam=args.lam).labeling.labels
                else:
                    lam = args.lam if args.lam is not None else mrf.default_lambda(graph)
                    labels = mrf.brute_force_map(graph, pattern, lam).labels
                write_json(args.out or out_dir / "labels.json", {"labels": labels.tolist()})
            else:
                stage_refine(cfg, out_dir)
        elif cmd == "unwrap":
            if args.phase and args.graph and args.labels and args.pattern:
                pattern = pat.pattern_from_json(read_json(args.pattern))
                phase_dir = Path(args.phase)
                pu, _ = read_grid(phase_dir / "phase_u.grid")
                pv, _ = read_grid(phase_dir / "phase_v.grid")
                mask, _ = read_grid(phase_dir / "mask.grid")
                maps = gx.WrappedPhaseMaps(
                    phase_u=pu.astype(np.float64), phase_v=pv.astype(np.float64),
                    mask=mask.astype(np.float64)).validate()
                graph = gx.read_graph_json(args.graph).validate(pattern.num_nodes)
                labels = mrf.Labeling(
                    np.asarray(read_json(args.labels)["labels"], dtype=np.int64))
                if args.image and len(graph.edges):
                    maps, _ = refine_phase(graph, load_image(args.image), maps,
                                           sigma_g=cfg["correction"]["sigma_g"])
                corr = unwrap_phase_map(maps, labels, graph, pattern)
                out_dir.mkdir(parents=True, exist_ok=True)
                write_grid(out_dir / "corr_u.grid", corr.u.astype(np.float32))
                write_grid(out_dir / "corr_v.grid", corr.v.astype(np.float32))
                write_grid(out_dir / "corr_valid.grid", corr.valid.astype(np.uint8))
            else:
                stage_unwrap(cfg, out_dir)
        elif cmd == "reconstruct":
            if args.corr and args.calib:
                corr_dir = Path(args.corr)
                u, _ = read_grid(corr_dir / "corr_u.grid")
                v, _ = read_grid(corr_dir / "corr_v.grid")
                valid, _ = read_grid(corr_dir / "corr_valid.grid")
                corr = CorrespondenceMap(u=u.astype(np.float64), v=v.astype(np.float64),
                                         valid=valid.astype(bool))
                calib = load_calib(args.calib)
                cloud, depth, _ = recon.triangulate(
                    corr, calib.camera, calib.projector,
                    method=cfg["triangulation"]["method"],
                    min_angle_deg=cfg["triangulation"]["min_angle_deg"])
                out_dir.mkdir(parents=True, exist_ok=True)
                recon.export_ply(cloud, out_dir / "cloud.ply")
                write_grid(out_dir / "depth.grid", depth)
            else:
                stage_reconstruct(cfg, out_dir)
        elif cmd == "eval":
            if args.pred and args.gt:
                pred, _ = read_grid(args.pred)
                gt, _ = read_grid(args.gt)
                report = recon.evaluate(pred, gt, inlier_mm=cfg["eval"]["inlier_mm"])
                write_json(args.report or out_dir / "metrics.json", report.to_json())
            else:
                stage_eval(cfg, out_dir)
        elif cmd == "pipeline":
            report = run_pipeline(cfg, out_dir)
            print(f"rmse_mm={report.rmse_mm:.4f} coverage={report.coverage:.3f}")
        elif cmd == "ablate":
            variants = read_json(args.variants)
            rows = run_ablation(cfg, variants, out_dir, threads=args.threads)
            for row in rows:
                print(f"{row['name']}: rmse_mm={row['rmse_mm']:.4f}")
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {cmd}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # standalone-mode file errors etc.
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
