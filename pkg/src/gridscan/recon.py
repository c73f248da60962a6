"""Triangulation of dense correspondences and reconstruction metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import PinholeModel
from .unwrap import CorrespondenceMap


class ReconError(ValueError):
    pass


class EvalError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) meters, camera-frame positive depth
    pixels: np.ndarray  # (N, 2) source pixel x, y
    intensity: np.ndarray | None = None

    def __len__(self):
        return len(self.points)


@dataclass
class MetricsReport:
    rmse_mm: float
    inlier_fraction: float
    coverage: float
    timings_ms: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rmse_mm < 0:
            raise EvalError("rmse must be non-negative")
        for name, frac in (("inlier_fraction", self.inlier_fraction), ("coverage", self.coverage)):
            if not (0.0 <= frac <= 1.0):
                raise EvalError(f"{name} must lie in [0, 1]")

    def to_json(self, include_timings=False) -> dict:
        out = {
            "rmse_mm": self.rmse_mm,
            "inlier_fraction": self.inlier_fraction,
            "coverage": self.coverage,
        }
        out.update(self.extra)
        if include_timings:
            out["timings_ms"] = self.timings_ms
        return out


def triangulate(corr: CorrespondenceMap, camera: PinholeModel, projector: PinholeModel,
                method="column-plane", min_angle_deg=0.1, image=None):
    """Metric surface from per-pixel projector coordinates.

    ``column-plane`` (default) intersects each camera ray with the plane
    of the projector column through u_p, matching the dense axis of the
    pattern. ``midpoint`` uses the full (u_p, v_p) projector ray and takes
    the closest-approach midpoint. Near-parallel geometry and points
    behind either device are dropped and counted.

    Returns ``(cloud, depth_map, stats)``.
    """
    if corr.valid.sum() == 0:
        h, w = corr.valid.shape
        empty = PointCloud(points=np.zeros((0, 3)), pixels=np.zeros((0, 2)))
        return empty, np.full((h, w), np.nan, dtype=np.float32), {"dropped": 0}
    h, w = corr.valid.shape
    ys, xs = np.nonzero(corr.valid)
    dirs = camera.ray_through(xs.astype(np.float64), ys.astype(np.float64))
    origin = camera.center
    u_p = corr.u[ys, xs]
    v_p = corr.v[ys, xs]

    if method == "column-plane":
        n_dev = np.stack(
            [np.full(len(u_p), projector.fx), np.zeros(len(u_p)), projector.cx - u_p], axis=1
        )
        n_w = n_dev @ projector.rotation  # row-vector transform by R^T
        d_const = -(n_dev @ projector.translation)
        denom = np.einsum("ij,ij->i", n_w, dirs)
        n_norm = np.linalg.norm(n_w, axis=1)
        d_norm = np.linalg.norm(dirs, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sin_angle = np.abs(denom) / np.maximum(n_norm * d_norm, 1e-300)
        ok = sin_angle >= np.sin(np.deg2rad(min_angle_deg))
        t = np.where(ok, (d_const - n_w @ origin) / np.where(ok, denom, 1.0), -1.0)
        points = origin[None, :] + t[:, None] * dirs
    elif method == "midpoint":
        pdirs = projector.ray_through(u_p, v_p)
        o2 = projector.center
        wvec = o2 - origin
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = np.einsum("ij,ij->i", dirs, pdirs)
        c = np.einsum("ij,ij->i", pdirs, pdirs)
        dd = dirs @ wvec
        e = pdirs @ wvec
        denom = a * c - b * b
        scale = np.maximum(a * c, 1e-300)
        ok = denom / scale >= np.sin(np.deg2rad(min_angle_deg)) ** 2
        denom = np.where(ok, denom, 1.0)
        t = (c * dd - b * e) / denom
        r = (b * dd - a * e) / denom
        ok &= r > 0
        points = 0.5 * ((origin + t[:, None] * dirs) + (o2 + r[:, None] * pdirs))
    else:
        raise ReconError(f"unknown triangulation method {method!r}")

    ok &= t > 0  # in front of the camera (ray dirs have unit device z)
    _, _, z_proj = projector.project(points)
    ok &= z_proj > 0

    depth = np.full((h, w), np.nan, dtype=np.float32)
    depth[ys[ok], xs[ok]] = t[ok]
    intensity = None
    if image is not None:
        intensity = np.asarray(image, dtype=np.float32)[ys[ok], xs[ok]]
    cloud = PointCloud(
        points=points[ok],
        pixels=np.stack([xs[ok], ys[ok]], axis=1).astype(np.float32),
        intensity=intensity,
    )
    stats = {"dropped": int((~ok).sum()), "kept": int(ok.sum())}
    return cloud, depth, stats


def fit_plane(points):
    """Least-squares plane through a cloud: returns (normal, offset, rmse_m)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise ReconError("need at least 3 points to fit a plane")
    mean = pts.mean(axis=0)
    _, svals, vt = np.linalg.svd(pts - mean, full_matrices=False)
    normal = vt[-1]
    offset = float(normal @ mean)
    rms = float(np.sqrt(np.mean(((pts - mean) @ normal) ** 2)))
    return normal, offset, rms


def plane_distance_rmse(points, normal, offset):
    """Point-to-plane RMSE (meters) against a known plane."""
    normal = np.asarray(normal, dtype=np.float64)
    scale = np.linalg.norm(normal)
    d = (np.asarray(points) @ normal - offset) / scale
    return float(np.sqrt(np.mean(d**2)))


def evaluate(depth_pred, depth_gt, inlier_mm=3.0, coverage_denominator=None,
             timings_ms=None, extra=None) -> MetricsReport:
    """Depth RMSE in mm over the shared valid region.

    ``coverage`` is the shared-region fraction of the ground-truth
    support unless another denominator is supplied.
    """
    pred = np.asarray(depth_pred, dtype=np.float64)
    gt = np.asarray(depth_gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvalError("depth map shapes differ")
    shared = np.isfinite(pred) & np.isfinite(gt)
    if not shared.any():
        raise EvalError("prediction and ground truth share no valid pixels")
    err_mm = (pred[shared] - gt[shared]) * 1000.0
    denom = coverage_denominator if coverage_denominator else int(np.isfinite(gt).sum())
    report = MetricsReport(
        rmse_mm=float(np.sqrt(np.mean(err_mm**2))),
        inlier_fraction=float(np.mean(np.abs(err_mm) <= inlier_mm)),
        coverage=float(min(shared.sum() / max(denom, 1), 1.0)),
        timings_ms=dict(timings_ms or {}),
        extra=dict(extra or {}),
    )
    return report


def export_profile_csv(path, row, depth_pred, depth_gt=None):
    """Depth profile along one scanline, for plot-style comparisons."""
    pred = np.asarray(depth_pred)
    if not (0 <= row < pred.shape[0]):
        raise EvalError(f"profile row {row} outside the image")
    lines = ["x,depth_pred_m,depth_gt_m"]
    gt = np.asarray(depth_gt) if depth_gt is not None else None
    for x in range(pred.shape[1]):
        p = pred[row, x]
        g = gt[row, x] if gt is not None else np.nan
        lines.append(
            f"{x},{'' if not np.isfinite(p) else repr(float(p))},"
            f"{'' if g is None or not np.isfinite(g) else repr(float(g))}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PLY exchange


def export_ply(cloud: PointCloud, path, binary=True):
    """Write x, y, z (+ intensity when present) as float32 properties."""
    n = len(cloud)
    has_i = cloud.intensity is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {n}")
    header += ["property float x", "property float y", "property float z"]
    if has_i:
        header.append("property float intensity")
    header.append("end_header")
    pts = np.asarray(cloud.points, dtype=np.float32)
    if binary:
        cols = [pts]
        if has_i:
            cols.append(np.asarray(cloud.intensity, dtype=np.float32).reshape(-1, 1))
        payload = np.hstack(cols).astype("<f4").tobytes() if n else b""
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(payload)
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(header) + "\n")
            for idx in range(n):
                row = [repr(float(v)) for v in pts[idx]]
                if has_i:
                    row.append(repr(float(cloud.intensity[idx])))
                fh.write(" ".join(row) + "\n")


def read_ply(path) -> PointCloud:
    """Minimal reader for the files this package writes."""
    with open(path, "rb") as fh:
        data = fh.read()
    head_end = data.find(b"end_header\n")
    if head_end < 0:
        raise ReconError(f"{path}: not a PLY file")
    header = data[:head_end].decode("ascii").splitlines()
    body = data[head_end + len(b"end_header\n") :]
    fmt = next((ln.split()[1] for ln in header if ln.startswith("format")), None)
    n = int(next(ln.split()[2] for ln in header if ln.startswith("element vertex")))
    props = [ln.split()[2] for ln in header if ln.startswith("property")]
    k = len(props)
    if fmt == "binary_little_endian":
        arr = np.frombuffer(body[: 4 * k * n], dtype="<f4").reshape(n, k).astype(np.float64)
    elif fmt == "ascii":
        rows = body.decode("ascii").split()
        arr = np.asarray(rows, dtype=np.float64).reshape(n, k) if n else np.zeros((0, k))
    else:
        raise ReconError(f"{path}: unsupported PLY format {fmt!r}")
    intensity = arr[:, 3].copy() if "intensity" in props and k > 3 else None
    return PointCloud(points=arr[:, :3], pixels=np.zeros((n, 2), dtype=np.float32),
                      intensity=intensity)
