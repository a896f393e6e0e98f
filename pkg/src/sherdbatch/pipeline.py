"""Batch pipeline: contours -> matching -> alignment -> registration -> metrics.

Every stage is also exposed as a standalone helper so the service layer and
CLI can run them individually. The batch runner isolates per-pair failures:
a scan pair that fails registration is reported and skipped, while matching
itself is a batch-level barrier (it needs every contour).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import boundary as boundary_mod
from . import contour as contour_mod
from .errors import SherdbatchError, SizeMismatch
from .geometry import (NeighborIndex, Plane, PointCloud, RigidTransform,
                       fit_plane_pca)
from .matching import initial_alignment, match_batches
from .metrics import EvalReport, align_to_gt, evaluate, mean_report
from .ply_io import read_ply, write_ply
from .registration import BBICPConfig, RegistrationResult, bbicp, pose_error
from .synth import SynthPreset, generate_batch


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the batch pipeline, with the working defaults.

    ``alpha_mm=None`` scales alpha with the sampling density of each scan;
    ``correspondence_reject_distance=None`` derives it from the median
    initial pair distance.
    """

    n_samples: int = contour_mod.DEFAULT_SAMPLES
    alpha_mm: float | None = None
    boundary_k: int = boundary_mod.DEFAULT_NEIGHBORS
    boundary_gap_threshold: float = boundary_mod.DEFAULT_GAP_THRESHOLD
    pixel_threshold: float = boundary_mod.DEFAULT_PIXEL_THRESHOLD
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    correspondence_reject_distance: float | None = None
    min_correspondences: int = 10
    completeness_threshold: float = 0.5
    jobs: int = 1
    seed: int = 0

    def bbicp_config(self) -> BBICPConfig:
        return BBICPConfig(
            max_iterations=self.max_iterations,
            convergence_tol=self.convergence_tol,
            correspondence_reject_distance=self.correspondence_reject_distance,
            min_correspondences=self.min_correspondences,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {f for f in PipelineConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**d)

    def override(self, **kwargs) -> "PipelineConfig":
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates)


@dataclass(frozen=True)
class ScanContour:
    """Projection artifacts of one scan: fitting plane, contour, descriptor."""

    plane: Plane
    contour: contour_mod.Contour
    descriptor: contour_mod.ShapeDescriptor
    alpha_mm: float


def scan_contour(cloud: PointCloud, config: PipelineConfig = PipelineConfig()) -> ScanContour:
    """Project a scan onto its PCA plane and extract its shape descriptor."""
    plane = fit_plane_pca(cloud)
    projected = plane.project(cloud.points)
    alpha = config.alpha_mm if config.alpha_mm is not None \
        else contour_mod.default_alpha(projected)
    polygon = contour_mod.alpha_shape_contour(projected, alpha)
    resampled = contour_mod.resample_uniform(polygon, config.n_samples)
    return ScanContour(plane, resampled, contour_mod.descriptor(resampled), alpha)


def lift_contour(cloud: PointCloud, scan: ScanContour) -> np.ndarray:
    """3D pre-image of each 2D contour vertex: the scan point nearest to the
    vertex lifted back onto the fitting plane."""
    lifted = scan.plane.lift(scan.contour.vertices)
    idx, _ = NeighborIndex(cloud).nearest_many(lifted)
    return cloud.points[idx]


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_ply_dir(directory: str | Path) -> list[tuple[str, PointCloud]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.ply"))
    return [(f.name, read_ply(f)) for f in files]


# ---------------------------------------------------------------------------
# Single-stage helpers backing the service endpoints
# ---------------------------------------------------------------------------

def do_extract_contour(ply_path: str | Path, config: PipelineConfig,
                       out_path: str | Path | None = None) -> dict:
    cloud = read_ply(ply_path)
    scan = scan_contour(cloud, config)
    doc = contour_mod.contour_to_dict(scan.contour, scan.descriptor)
    doc["alpha_mm"] = scan.alpha_mm
    doc["source"] = str(ply_path)
    if out_path is not None:
        Path(out_path).write_text(json.dumps(doc, indent=2))
        doc["written_to"] = str(out_path)
    return doc


def do_match(front_dir: str | Path, back_dir: str | Path,
             config: PipelineConfig) -> dict:
    front = load_ply_dir(front_dir)
    back = load_ply_dir(back_dir)
    if len(front) != len(back) or not front:
        raise SizeMismatch(
            f"need equal non-empty batches, got {len(front)} front / {len(back)} back")
    front_scans = _map(lambda nc: scan_contour(nc[1], config), front, config.jobs)
    back_scans = _map(lambda nc: scan_contour(nc[1], config), back, config.jobs)
    assignment = match_batches([s.descriptor for s in front_scans],
                               [s.descriptor for s in back_scans])
    report = assignment.to_dict()
    for pair in report["pairs"]:
        pair["front_scan"] = front[pair["front"]][0]
        pair["back_scan"] = back[pair["back"]][0]
    from .matching import AMBIGUITY_MARGIN
    report["warnings"] = [
        f"ambiguous match: {front[f][0]} <-> {back[b][0]} "
        f"(runner-up within {100 * AMBIGUITY_MARGIN:.0f}% of best)"
        for (f, b, _), flag in zip(assignment.pairs, assignment.ambiguity_flags) if flag
    ]
    return report


def load_camera_views(camera_json: str | Path) -> tuple[list[boundary_mod.CameraView],
                                                        list[list[int]] | None]:
    """Batch camera metadata: intrinsics, world-to-camera pose, mask PNG path,
    and optionally the point indices visible in each view."""
    from PIL import Image

    doc = json.loads(Path(camera_json).read_text())
    base = Path(camera_json).parent
    views = []
    visible: list[list[int] | None] = []
    for entry in doc["views"]:
        mask = np.asarray(Image.open(base / entry["mask_png"])) > 0
        views.append(boundary_mod.CameraView(
            intrinsics=np.asarray(entry["intrinsics"], dtype=np.float64).reshape(3, 3),
            pose=RigidTransform.from_dict(entry["pose"]),
            mask=mask,
        ))
        visible.append(entry.get("visible_points"))
    if all(v is None for v in visible):
        return views, None
    return views, [v if v is not None else [] for v in visible]


def _attach_visibility(cloud: PointCloud, views: list,
                       per_view_visible: list[list[int]] | None) -> PointCloud:
    n = len(cloud)
    vis: list[list[int]] = [[] for _ in range(n)]
    if per_view_visible is None:
        # No explicit lists: every point is assumed visible in every view.
        vis = [list(range(len(views))) for _ in range(n)]
    else:
        for view_idx, members in enumerate(per_view_visible):
            for p in members:
                vis[p].append(view_idx)
    return PointCloud(cloud.points, visibility=tuple(tuple(v) for v in vis))


def do_extract_boundary(ply_path: str | Path, config: PipelineConfig,
                        camera_json: str | Path | None = None,
                        out_ply: str | Path | None = None,
                        out_json: str | Path | None = None) -> dict:
    cloud = read_ply(ply_path)
    candidates = None
    if camera_json is not None:
        views, per_view_visible = load_camera_views(camera_json)
        cloud = _attach_visibility(cloud, views, per_view_visible)
        candidates = boundary_mod.mask_candidate_filter(cloud, views,
                                                        config.pixel_threshold)
    result = boundary_mod.extract_boundary(cloud, candidates,
                                           k=config.boundary_k,
                                           gap_threshold=config.boundary_gap_threshold)
    doc = result.to_dict()
    doc["source"] = str(ply_path)
    doc["count"] = len(result)
    doc["n_candidates"] = len(candidates) if candidates is not None else len(cloud)
    if out_ply is not None:
        write_ply(out_ply, PointCloud(cloud.points[result.indices]))
        doc["boundary_ply"] = str(out_ply)
    if out_json is not None:
        Path(out_json).write_text(json.dumps({"indices": doc["indices"]}, indent=2))
        doc["boundary_json"] = str(out_json)
    return doc


def do_register(front_ply: str | Path, back_ply: str | Path,
                config: PipelineConfig,
                init: RigidTransform | None = None,
                front_boundary_json: str | Path | None = None,
                back_boundary_json: str | Path | None = None,
                out_prefix: str | Path | None = None) -> dict:
    front = read_ply(front_ply)
    back = read_ply(back_ply)

    def load_boundary(path, cloud):
        if path is not None:
            return boundary_mod.BoundarySet.from_dict(json.loads(Path(path).read_text()))
        return boundary_mod.extract_boundary(cloud, None, k=config.boundary_k,
                                             gap_threshold=config.boundary_gap_threshold)

    fb = load_boundary(front_boundary_json, front)
    bb = load_boundary(back_boundary_json, back)
    result = bbicp(front, back, fb, bb, init or RigidTransform.identity(),
                   config.bbicp_config())
    doc = result.to_dict()
    doc["front"] = str(front_ply)
    doc["back"] = str(back_ply)
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
        merged = PointCloud(np.vstack([front.points, result.transform.apply(back.points)]))
        write_ply(out_prefix.with_suffix(".merged.ply"), merged)
        transform_path = out_prefix.with_suffix(".transform.json")
        transform_path.write_text(json.dumps(result.transform.to_dict(), indent=2))
        trace_path = out_prefix.with_suffix(".trace.csv")
        _write_trace_csv(trace_path, result)
        doc["merged_ply"] = str(out_prefix.with_suffix(".merged.ply"))
        doc["transform_json"] = str(transform_path)
        doc["trace_csv"] = str(trace_path)
    return doc


def _write_trace_csv(path: Path, result: RegistrationResult) -> None:
    lines = ["iteration,objective_mm2"]
    lines += [f"{i + 1},{v:.9g}" for i, v in enumerate(result.objective_trace)]
    path.write_text("\n".join(lines) + "\n")


def do_evaluate(recon_ply: str | Path, gt_ply: str | Path,
                config: PipelineConfig, align: bool = False,
                align_init_json: str | Path | None = None,
                out_csv: str | Path | None = None) -> dict:
    recon = read_ply(recon_ply)
    gt = read_ply(gt_ply)
    if align:
        init = None
        if align_init_json is not None:
            init = RigidTransform.from_dict(
                json.loads(Path(align_init_json).read_text()))
        recon, _ = align_to_gt(recon, gt, init=init)
    report = evaluate(recon, gt, config.completeness_threshold)
    doc = report.to_dict()
    doc["recon"] = str(recon_ply)
    doc["gt"] = str(gt_ply)
    if out_csv is not None:
        header = "id,accuracy_mm,completeness_pct,mae_mm,sd_mm"
        rows = [report.csv_row(Path(recon_ply).stem), report.csv_row("mean")]
        Path(out_csv).write_text(header + "\n" + "\n".join(rows) + "\n")
        doc["csv_path"] = str(out_csv)
    return doc


def do_gen_synth(out_dir: str | Path, n: int, seed: int,
                 preset: SynthPreset = SynthPreset(),
                 adversarial: bool = False) -> dict:
    """Write a synthetic batch: front/back PLYs, ground-truth models, truth JSON."""
    out_dir = Path(out_dir)
    front_clouds, back_clouds, truth = generate_batch(n, seed, preset, adversarial)
    (out_dir / "front").mkdir(parents=True, exist_ok=True)
    (out_dir / "back").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt_models").mkdir(parents=True, exist_ok=True)

    front_paths, back_paths, gt_paths = [], [], []
    for i, cloud in enumerate(front_clouds):
        rel = f"front/front_{i:03d}.ply"
        write_ply(out_dir / rel, cloud)
        front_paths.append(rel)
    for p, cloud in enumerate(back_clouds):
        rel = f"back/back_{p:03d}.ply"
        write_ply(out_dir / rel, cloud)
        back_paths.append(rel)
    for i, frag in enumerate(truth.fragments):
        rel = f"gt_models/gt_{i:03d}.ply"
        write_ply(out_dir / rel, frag.gt_model())
        gt_paths.append(rel)

    doc = {
        "n": n,
        "seed": seed,
        "adversarial": adversarial,
        "pairing": [int(p) for p in truth.pairing],
        "front_plys": front_paths,
        "back_plys": back_paths,
        "gt_model_plys": gt_paths,
        "fragments": [
            {
                "front_pose": f.front.pose.to_dict(),
                "back_pose": f.back.pose.to_dict(),
                "registration_to_front": f.registration_transform().to_dict(),
                "front_boundary_labels": [int(i) for i in f.front.boundary_labels],
                "back_boundary_labels": [int(i) for i in f.back.boundary_labels],
                "front_strip_indices": [int(i) for i in f.front.strip_indices],
                "back_strip_indices": [int(i) for i in f.back.strip_indices],
                "front_overlap_fraction": f.front.overlap_fraction,
                "back_overlap_fraction": f.back.overlap_fraction,
            }
            for f in truth.fragments
        ],
    }
    truth_path = out_dir / "truth.json"
    truth_path.write_text(json.dumps(doc, indent=2))
    return {
        "out_dir": str(out_dir),
        "front_dir": str(out_dir / "front"),
        "back_dir": str(out_dir / "back"),
        "gt_dir": str(out_dir / "gt_models"),
        "truth_json": str(truth_path),
        "n": n,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# Full batch run
# ---------------------------------------------------------------------------

def run_pipeline(front_dir: str | Path, back_dir: str | Path,
                 out_dir: str | Path,
                 config: PipelineConfig = PipelineConfig(),
                 truth_json: str | Path | None = None) -> dict:
    """Match, register and merge a batch; returns (and writes) the manifest.

    A registration failure marks its pair as failed without aborting the
    batch. Contour extraction and matching are batch-level: they need every
    scan, so their errors propagate.
    """
    front = load_ply_dir(front_dir)
    back = load_ply_dir(back_dir)
    if len(front) != len(back) or not front:
        raise SizeMismatch(
            f"need equal non-empty batches, got {len(front)} front / {len(back)} back")

    truth = _load_truth(truth_json) if truth_json is not None else None

    front_scans = _map(lambda nc: scan_contour(nc[1], config), front, config.jobs)
    back_scans = _map(lambda nc: scan_contour(nc[1], config), back, config.jobs)
    assignment = match_batches([s.descriptor for s in front_scans],
                               [s.descriptor for s in back_scans])

    out_dir = Path(out_dir)
    (out_dir / "merged").mkdir(parents=True, exist_ok=True)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)

    def process(pair_and_flag) -> dict:
        (i, j, dist), ambiguous = pair_and_flag
        front_name, front_cloud = front[i]
        back_name, back_cloud = back[j]
        record: dict = {
            "front": front_name,
            "back": back_name,
            "front_index": i,
            "back_index": j,
            "descriptor_distance": dist.distance,
            "best_shift": dist.best_shift,
            "mirrored": dist.mirrored,
            "ambiguous": ambiguous,
            "error": None,
        }
        try:
            front_3d = lift_contour(front_cloud, front_scans[i])
            back_3d = lift_contour(back_cloud, back_scans[j])
            init = initial_alignment(front_3d, back_3d, dist.best_shift, dist.mirrored)
            record["initial_transform"] = init.to_dict()

            fb = boundary_mod.extract_boundary(
                front_cloud, None, k=config.boundary_k,
                gap_threshold=config.boundary_gap_threshold)
            bb = boundary_mod.extract_boundary(
                back_cloud, None, k=config.boundary_k,
                gap_threshold=config.boundary_gap_threshold)
            result = bbicp(front_cloud, back_cloud, fb, bb, init, config.bbicp_config())

            record["transform"] = result.transform.to_dict()
            record["iterations"] = result.iterations_run
            record["converged"] = result.converged
            record["final_rms_mm"] = result.final_rms
            record["nn_query_count"] = result.nn_query_count
            record["boundary_sizes"] = [len(fb), len(bb)]

            merged = PointCloud(np.vstack([front_cloud.points,
                                           result.transform.apply(back_cloud.points)]))
            stem = f"pair_{i:03d}"
            write_ply(out_dir / "merged" / f"{stem}.ply", merged)
            _write_trace_csv(out_dir / "traces" / f"{stem}.csv", result)
            record["merged_ply"] = f"merged/{stem}.ply"
            record["trace_csv"] = f"traces/{stem}.csv"

            if truth is not None:
                record.update(_truth_checks(truth, i, j, result, back_cloud,
                                            merged, config, Path(truth_json).parent))
        except (SherdbatchError, ValueError) as exc:
            record["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return record

    pair_records = _map(process, list(zip(assignment.pairs, assignment.ambiguity_flags)),
                        config.jobs)

    warnings = [
        f"ambiguous match: {front[i][0]} <-> {back[j][0]}"
        for (i, j, _), flag in zip(assignment.pairs, assignment.ambiguity_flags) if flag
    ]
    failed = [r["front"] for r in pair_records if r["error"] is not None]
    metrics_reports = [EvalReport(**r["metrics"]) for r in pair_records
                       if r.get("metrics") is not None]

    manifest = {
        "config": config.to_dict(),
        "front_dir": str(front_dir),
        "back_dir": str(back_dir),
        "front_scans": [n for n, _ in front],
        "back_scans": [n for n, _ in back],
        "pairs": pair_records,
        "warnings": warnings,
        "n_pairs": len(pair_records),
        "n_failed": len(failed),
        "failed": failed,
        "batch_metrics": mean_report(metrics_reports).to_dict() if metrics_reports else None,
        "matching_matches_truth": (
            None if truth is None else
            [int(p) for p in assignment.permutation()] == truth["pairing"]),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    _write_metrics_csv(out_dir / "metrics.csv", pair_records, metrics_reports)
    (out_dir / "summary.txt").write_text(_summary_text(manifest))
    return manifest


def _write_metrics_csv(path: Path, pair_records: list[dict],
                       reports: list[EvalReport]) -> None:
    """Per-fragment metric rows plus the batch-mean row."""
    lines = ["id,accuracy_mm,completeness_pct,mae_mm,sd_mm"]
    for record in pair_records:
        if record.get("metrics") is not None:
            lines.append(EvalReport(**record["metrics"]).csv_row(record["front"]))
    if reports:
        lines.append(mean_report(reports).csv_row("mean"))
    path.write_text("\n".join(lines) + "\n")


def _summary_text(manifest: dict) -> str:
    lines = [
        f"batch: {manifest['n_pairs']} pairs, {manifest['n_failed']} failed",
        "",
    ]
    for pair in manifest["pairs"]:
        status = "FAILED " + pair["error"]["type"] if pair["error"] else \
            f"rms {pair['final_rms_mm']:.4f} mm in {pair['iterations']} iterations"
        mirror = " (mirrored)" if pair["mirrored"] else ""
        flag = " AMBIGUOUS" if pair["ambiguous"] else ""
        lines.append(f"  {pair['front']} <-> {pair['back']}{mirror}{flag}: "
                     f"distance {pair['descriptor_distance']:.3f}, {status}")
    if manifest["warnings"]:
        lines.append("")
        lines.extend(f"  warning: {w}" for w in manifest["warnings"])
    if manifest["batch_metrics"]:
        m = manifest["batch_metrics"]
        lines.append("")
        lines.append(
            f"  batch mean: accuracy {m['accuracy_mm']:.3f} mm, "
            f"completeness {m['completeness_pct']:.2f} %, "
            f"MAE {m['mae_mm']:.3f} mm, SD {m['sd_mm']:.3f} mm")
    return "\n".join(lines) + "\n"


def _load_truth(truth_json: str | Path) -> dict:
    return json.loads(Path(truth_json).read_text())


def _truth_checks(truth: dict, front_idx: int, back_idx: int,
                  result, back_cloud: PointCloud, merged: PointCloud,
                  config: PipelineConfig, truth_base: Path) -> dict:
    out: dict = {}
    expected_back = truth["pairing"][front_idx]
    out["pairing_correct"] = bool(expected_back == back_idx)
    if not out["pairing_correct"]:
        return out
    frag = truth["fragments"][front_idx]
    gt_transform = RigidTransform.from_dict(frag["registration_to_front"])
    centroid = back_cloud.points.mean(axis=0)
    rot_deg, trans_mm = pose_error(result.transform, gt_transform, reference=centroid)
    out["pose_error"] = {"rotation_deg": rot_deg, "translation_mm": trans_mm}
    gt_path = truth_base / truth["gt_model_plys"][front_idx]
    if gt_path.exists():
        report = evaluate(merged, read_ply(gt_path), config.completeness_threshold)
        out["metrics"] = report.to_dict()
    return out
