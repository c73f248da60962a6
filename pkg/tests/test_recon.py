import time

import numpy as np
import pytest

from gridscan import recon
from gridscan import simulator as sim
from gridscan.unwrap import CorrespondenceMap


def rectified_pair(fx=600.0, baseline=0.1, width=64, height=48):
    camera = sim.PinholeModel(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height)
    projector = sim.PinholeModel(
        fx, fx, (width - 1) / 2, (height - 1) / 2, width, height,
        rotation=np.eye(3), translation=np.array([-baseline, 0.0, 0.0]),
    )
    return camera, projector


def test_disparity_identity():
    # rectified pair: Z = f B / d, so disparity 60 px at f=600, B=0.1 -> 1 m
    camera, projector = rectified_pair()
    h, w = camera.height, camera.width
    xs = np.arange(w, dtype=np.float64)
    u = np.tile(xs, (h, 1)) - 60.0
    corr = CorrespondenceMap(u=u, v=np.zeros((h, w)), valid=np.ones((h, w), dtype=bool))
    _, depth, _ = recon.triangulate(corr, camera, projector)
    assert np.allclose(depth[np.isfinite(depth)], 1.0, atol=1e-12)


def test_empty_mask_gives_empty_cloud():
    camera, projector = rectified_pair()
    corr = CorrespondenceMap(
        u=np.zeros((48, 64)), v=np.zeros((48, 64)), valid=np.zeros((48, 64), dtype=bool)
    )
    cloud, depth, _ = recon.triangulate(corr, camera, projector)
    assert len(cloud) == 0
    assert not np.isfinite(depth).any()


def random_consistent_correspondences(rng, method, n=50):
    """Random rig + scene points; the correspondence map is built from exact
    projections, so triangulation must invert them."""
    camera = sim.PinholeModel(
        float(rng.uniform(300, 900)), float(rng.uniform(300, 900)),
        31.5, 23.5, 64, 48,
    )
    projector = sim.look_at(
        [float(rng.uniform(0.1, 0.4)), float(rng.uniform(-0.1, 0.1)), 0.0],
        [0.0, 0.0, float(rng.uniform(0.8, 1.5))],
        float(rng.uniform(300, 900)), float(rng.uniform(300, 900)),
        63.5, 47.5, 128, 96,
    )
    xs = rng.integers(0, 64, n)
    ys = rng.integers(0, 48, n)
    depth = rng.uniform(0.5, 2.0, n)
    dirs = camera.ray_through(xs.astype(np.float64), ys.astype(np.float64))
    pts = camera.center[None, :] + depth[:, None] * dirs
    u_p, v_p, z_p = projector.project(pts)
    keep = z_p > 0
    u = np.zeros((48, 64))
    v = np.zeros((48, 64))
    valid = np.zeros((48, 64), dtype=bool)
    u[ys[keep], xs[keep]] = u_p[keep]
    v[ys[keep], xs[keep]] = v_p[keep]
    valid[ys[keep], xs[keep]] = True
    return camera, projector, CorrespondenceMap(u=u, v=v, valid=valid)


@pytest.mark.parametrize("method", ["column-plane", "midpoint"])
def test_reprojection_consistency(method):
    rng = np.random.default_rng(1)
    camera, projector, corr = random_consistent_correspondences(rng, method, n=200)
    cloud, _, _ = recon.triangulate(corr, camera, projector, method=method)
    assert len(cloud) > 150
    x_c, y_c, _ = camera.project(cloud.points)
    assert np.abs(x_c - cloud.pixels[:, 0]).max() < 0.01
    assert np.abs(y_c - cloud.pixels[:, 1]).max() < 0.01
    u_p, _, _ = projector.project(cloud.points)
    px = cloud.pixels.astype(np.int64)
    assert np.abs(u_p - corr.u[px[:, 1], px[:, 0]]).max() < 0.05


@pytest.mark.parametrize("scale,tol", [(2.0, 0.0), (2.5, 1e-12)])
def test_depth_scale_equivariance(scale, tol):
    # scaling baseline and scene by s scales depths by s (bit-exact for
    # power-of-two factors, 1-ulp otherwise)
    rng = np.random.default_rng(3)
    camera, projector, corr = random_consistent_correspondences(rng, "column-plane")
    cloud1, _, _ = recon.triangulate(corr, camera, projector)
    projector_s = sim.PinholeModel(
        projector.fx, projector.fy, projector.cx, projector.cy,
        projector.width, projector.height,
        rotation=projector.rotation, translation=projector.translation * scale,
    )
    cloud_s, _, _ = recon.triangulate(corr, camera, projector_s)
    assert np.array_equal(cloud1.pixels, cloud_s.pixels)
    assert np.allclose(cloud_s.points[:, 2], scale * cloud1.points[:, 2], rtol=tol, atol=0)


def test_near_parallel_rays_dropped():
    camera, projector = rectified_pair()
    u = np.full((48, 64), np.arange(64), dtype=np.float64)  # zero disparity
    corr = CorrespondenceMap(u=u, v=np.zeros((48, 64)), valid=np.ones((48, 64), dtype=bool))
    cloud, _, stats = recon.triangulate(corr, camera, projector)
    assert len(cloud) == 0
    assert stats["dropped"] == 48 * 64


def test_evaluate_identical_and_offset():
    depth = np.full((32, 32), 1.0, dtype=np.float64)
    report = recon.evaluate(depth, depth)
    assert report.rmse_mm == 0.0
    offset = recon.evaluate(depth + 0.001, depth)
    assert offset.rmse_mm == pytest.approx(1.0)
    assert offset.inlier_fraction == 1.0


def test_evaluate_disjoint_masks_is_error():
    a = np.full((8, 8), np.nan)
    a[:4] = 1.0
    b = np.full((8, 8), np.nan)
    b[4:] = 1.0
    with pytest.raises(recon.EvalError):
        recon.evaluate(a, b)


def test_plane_fit_and_distance():
    rng = np.random.default_rng(0)
    n = np.array([0.1, -0.2, 1.0])
    n = n / np.linalg.norm(n)
    d = 1.3
    basis = np.linalg.svd(n[None, :])[2][1:]
    pts = d * n + rng.normal(0, 0.5, (500, 2)) @ basis
    normal, offset, rms = recon.fit_plane(pts)
    assert rms < 1e-12
    assert recon.plane_distance_rmse(pts, n, d) < 1e-12
    pts_noisy = pts + 0.001 * n * rng.normal(0, 1, (500, 1))
    assert recon.plane_distance_rmse(pts_noisy, n, d) == pytest.approx(0.001, rel=0.15)


def test_metrics_report_validation():
    with pytest.raises(recon.EvalError):
        recon.MetricsReport(rmse_mm=-1.0, inlier_fraction=0.5, coverage=0.5)
    with pytest.raises(recon.EvalError):
        recon.MetricsReport(rmse_mm=1.0, inlier_fraction=1.5, coverage=0.5)


def test_ply_empty_cloud_round_trip(tmp_path):
    cloud = recon.PointCloud(points=np.zeros((0, 3)), pixels=np.zeros((0, 2)))
    path = tmp_path / "empty.ply"
    recon.export_ply(cloud, path)
    back = recon.read_ply(path)
    assert len(back) == 0


@pytest.mark.parametrize("binary", [True, False])
def test_ply_single_point_round_trip(tmp_path, binary):
    pts = np.array([[0.125, -2.5, 1.0]])  # exactly float32-representable
    cloud = recon.PointCloud(points=pts, pixels=np.zeros((1, 2)),
                             intensity=np.array([42.0]))
    path = tmp_path / "one.ply"
    recon.export_ply(cloud, path, binary=binary)
    back = recon.read_ply(path)
    assert np.array_equal(back.points, pts)
    assert back.intensity[0] == 42.0


def test_ply_million_points_is_fast(tmp_path):
    rng = np.random.default_rng(0)
    cloud = recon.PointCloud(points=rng.normal(size=(1_000_000, 3)),
                             pixels=np.zeros((1_000_000, 2)))
    path = tmp_path / "big.ply"
    t0 = time.perf_counter()
    recon.export_ply(cloud, path, binary=True)
    elapsed = time.perf_counter() - t0
    assert path.stat().st_size > 12_000_000
    assert elapsed < 2.0


def test_profile_csv(tmp_path):
    depth = np.full((8, 8), 1.25)
    gt = np.full((8, 8), 1.5)
    out = tmp_path / "profile.csv"
    recon.export_profile_csv(out, 3, depth, gt)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "x,depth_pred_m,depth_gt_m"
    assert len(lines) == 9
    assert lines[1].startswith("0,1.25,1.5")
