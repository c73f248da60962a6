import numpy as np
import pytest
from conftest import circ_rmse

from gridscan import graphext as gx
from gridscan import pattern as pat
from gridscan.pattern import circ_signed


def test_estimate_period_on_clean_grid(plane_capture):
    pu, pv = gx.estimate_period(plane_capture.image.astype(np.float64) / 255.0)
    # true camera-side period for this rig is close to 21.5 px
    assert 19.0 < pu < 24.0
    assert 19.0 < pv < 24.0


def test_estimate_period_rejects_flat_image():
    with pytest.raises(gx.PeriodEstimationError):
        gx.estimate_period(np.full((128, 128), 37.0))


def test_phase_rmse_on_noiseless_plane(plane_capture, plane_phase):
    m = (plane_phase.mask > 0.5) & plane_capture.lit
    assert circ_rmse(plane_phase.phase_u, plane_capture.gt_phase_u, m) < 0.05
    assert circ_rmse(plane_phase.phase_v, plane_capture.gt_phase_v, m) < 0.05


def test_dc_image_has_zero_mask():
    maps = gx.estimate_wrapped_phase(np.full((96, 96), 120, dtype=np.uint8),
                                     period=(16.0, 16.0))
    assert maps.mask.max() == 0.0


def test_phase_near_zero_at_detected_nodes(plane_graph, plane_phase):
    checked = 0
    for node in plane_graph.nodes:
        px, py = int(round(node.x)), int(round(node.y))
        if plane_phase.mask[py, px] > 0.5:
            assert abs(circ_signed(plane_phase.phase_u[py, px])) < 0.1
            assert abs(circ_signed(plane_phase.phase_v[py, px])) < 0.1
            checked += 1
    assert checked > 100


def test_detection_rate_and_candidates(plane_graph, plane_node_truth, vga_pattern):
    xy, visible = plane_node_truth
    gt = xy[visible]
    gt_ids = np.nonzero(visible)[0]
    det = np.array([[n.x, n.y] for n in plane_graph.nodes])
    d2 = ((gt[:, None, :] - det[None, :, :]) ** 2).sum(-1)
    nearest = d2.min(axis=1)
    found = nearest <= 1.0
    assert found.mean() >= 0.99
    match = d2.argmin(axis=1)
    top5 = 0
    for gid, di in zip(gt_ids[found], match[found]):
        if gid in plane_graph.nodes[di].candidate_ids[:5]:
            top5 += 1
    assert top5 / found.sum() >= 0.95


def test_all_black_image_gives_empty_graph(vga_pattern):
    graph = gx.detect_graph(np.zeros((240, 320), dtype=np.uint8), vga_pattern)
    assert graph.num_nodes == 0
    assert len(graph.edges) == 0


def test_edge_direction_consistency(plane_graph):
    plane_graph.validate()
    dirs = {}
    for src, dst, d in plane_graph.edges:
        dirs[(int(src), int(dst))] = int(d)
    for (src, dst), d in dirs.items():
        assert dirs[(dst, src)] == pat.OPPOSITE[d]


def test_detection_translation_covariance(plane_capture, vga_pattern, vga_prior):
    shift = (3, 2)  # (dy, dx)
    rolled = np.roll(plane_capture.image, shift, axis=(0, 1))
    base = gx.detect_graph(plane_capture.image, vga_pattern, calib=vga_prior)
    moved = gx.detect_graph(rolled, vga_pattern, calib=vga_prior)
    bxy = np.array([[n.x, n.y] for n in base.nodes])
    mxy = np.array([[n.x, n.y] for n in moved.nodes])
    h, w = plane_capture.image.shape
    interior = (
        (bxy[:, 0] > 40) & (bxy[:, 0] < w - 44) & (bxy[:, 1] > 40) & (bxy[:, 1] < h - 44)
    )
    expected = bxy[interior] + np.array([shift[1], shift[0]])
    d2 = ((expected[:, None, :] - mxy[None, :, :]) ** 2).sum(-1)
    assert np.sqrt(d2.min(axis=1)).max() <= 0.25


def test_corrupt_candidates_demotes_truth(label_pattern):
    rng = np.random.default_rng(0)
    graph, truth = gx.synthetic_grid_instance(label_pattern, 6, 6, rng, corrupt_q=0.0)
    corrupted = gx.corrupt_candidates(graph, truth, 0.25, rng,
                                      label_pattern.num_nodes, exact=True)
    n_corrupt = sum(
        int(node.candidate_ids[0] != t) for node, t in zip(corrupted.nodes, truth)
    )
    assert n_corrupt == round(0.25 * 36)
    for node, t in zip(corrupted.nodes, truth):
        assert t in node.candidate_ids  # demoted, never removed
    corrupted.validate(label_pattern.num_nodes)


def test_truth_graph_consistency(plane_scene, vga_rig, vga_pattern):
    camera, projector = vga_rig
    graph = gx.truth_graph(plane_scene, camera, projector, vga_pattern)
    assert graph.num_nodes > 400
    for node in graph.nodes:
        assert len(node.candidate_ids) == 1
        assert node.candidate_probs[0] == 1.0
    graph.validate(vga_pattern.num_nodes)


def test_ingest_round_trip(tmp_path, plane_capture, vga_pattern, plane_scene, vga_rig):
    camera, projector = vga_rig
    maps = gx.truth_phase_maps(plane_capture)
    graph = gx.truth_graph(plane_scene, camera, projector, vga_pattern)
    pu, pv, pm = tmp_path / "u.grid", tmp_path / "v.grid", tmp_path / "m.grid"
    gj = tmp_path / "graph.json"
    gx.write_phase_maps(maps, pu, pv, pm)
    gx.write_graph_json(graph, gj)
    maps2, graph2 = gx.ingest_external(pu, pv, pm, gj, vga_pattern)
    assert np.array_equal(maps2.phase_u, maps.phase_u.astype(np.float32).astype(np.float64))
    assert np.array_equal(maps2.mask, maps.mask.astype(np.float32).astype(np.float64))
    assert graph2.num_nodes == graph.num_nodes
    assert np.array_equal(graph2.edges, graph.edges)
    for a, b in zip(graph2.nodes, graph.nodes):
        assert np.array_equal(a.candidate_ids, b.candidate_ids)


def test_ingest_rejects_out_of_range_phase(tmp_path, vga_pattern):
    from gridscan.gridio import write_grid

    good = np.zeros((8, 8), dtype=np.float32)
    bad = good.copy()
    bad[3, 4] = 1.0  # half-open range excludes 1.0
    write_grid(tmp_path / "u.grid", bad)
    write_grid(tmp_path / "v.grid", good)
    write_grid(tmp_path / "m.grid", good)
    gx.write_graph_json(gx.DetectedGraph(nodes=[], edges=np.empty((0, 3), np.int32)),
                        tmp_path / "g.json")
    with pytest.raises(gx.ExternalDataError, match=r"\(4, 3\)"):
        gx.ingest_external(tmp_path / "u.grid", tmp_path / "v.grid", tmp_path / "m.grid",
                           tmp_path / "g.json", vga_pattern)


def test_ingest_rejects_candidate_id_outside_pattern(tmp_path, vga_pattern):
    from gridscan.gridio import write_grid, write_json

    zeros = np.zeros((8, 8), dtype=np.float32)
    for name in ("u", "v", "m"):
        write_grid(tmp_path / f"{name}.grid", zeros)
    write_json(
        tmp_path / "g.json",
        {
            "nodes": [
                {"x": 1.0, "y": 1.0, "code": 0,
                 "candidates": [{"id": vga_pattern.num_nodes, "prob": 1.0}]}
            ],
            "edges": [],
        },
    )
    with pytest.raises(gx.ExternalDataError, match="outside pattern"):
        gx.ingest_external(tmp_path / "u.grid", tmp_path / "v.grid", tmp_path / "m.grid",
                           tmp_path / "g.json", vga_pattern)


def test_candidate_probs_are_sorted_and_bounded(plane_graph):
    for node in plane_graph.nodes:
        probs = node.candidate_probs
        assert (np.diff(probs) <= 1e-12).all()
        assert probs.sum() <= 1.0 + 1e-9
        assert probs.min() > 0


def test_local_normalization_flag(plane_capture, vga_pattern):
    # optional pre-filter (plumbing): output must stay a valid phase map
    params = gx.DetectorParams(normalize=True, period_hint=(21.4, 21.4))
    maps = gx.estimate_wrapped_phase(plane_capture.image, params=params)
    maps.validate()
    assert maps.mask.max() > 0


def test_rig_period_prediction_close_to_truth(plane_capture, vga_rig, vga_pattern):
    camera, projector = vga_rig
    pu, pv = gx.expected_periods_from_rig(camera, projector, vga_pattern, 1.0)
    u = plane_capture.gt_proj_u.astype(np.float64)
    lit = plane_capture.lit[:, 1:] & plane_capture.lit[:, :-1]
    du = np.diff(u, axis=1)[lit]
    measured = vga_pattern.period_u / np.mean(du)
    assert abs(pu - measured) / measured < 0.05
