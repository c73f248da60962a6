"""Acceptance suite: every shipped guarantee, one printed line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS/FAIL
lines; each criterion is also a hard assertion.
"""

import time

import numpy as np
import pytest
from conftest import circ_rmse

from gridscan import graphext as gx
from gridscan import mrf, recon
from gridscan import pattern as pat
from gridscan import simulator as sim
from gridscan import unwrap as uw
from gridscan.graphext import DetectedGraph, GraphNode, WrappedPhaseMaps


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# 1. solver quality against the exhaustive oracle


def test_criterion_1_exact_map_agreement(label_pattern):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    eq_vote = eq_icm = 0
    total = 200
    for _ in range(total):
        rows = int(rng.integers(1, 4))
        cols = int(rng.integers(1, 4))
        graph, _ = gx.synthetic_grid_instance(label_pattern, rows, cols, rng,
                                              n_candidates=5, corrupt_q=0.25,
                                              corrupt_exact=False)
        lam = mrf.default_lambda(graph)
        e_exact = mrf.energy(graph, label_pattern,
                             mrf.brute_force_map(graph, label_pattern, lam), lam)
        e_vote = mrf.energy(graph, label_pattern,
                            mrf.vote_refine(graph, label_pattern).labeling, lam)
        e_icm = mrf.energy(graph, label_pattern,
                           mrf.icm_refine(graph, label_pattern, lam).labeling, lam)
        assert e_vote >= e_exact - 1e-9
        assert e_icm >= e_exact - 1e-9
        eq_vote += int(abs(e_vote - e_exact) < 1e-9)
        eq_icm += int(abs(e_icm - e_exact) < 1e-9)
    elapsed = time.perf_counter() - t0
    ok = eq_vote / total >= 0.70 and eq_icm / total >= 0.80 and elapsed < 10.0
    report(1, ok,
           f"voting matches the exhaustive optimum on {eq_vote / total:.0%} "
           f"(need >= 70%), coordinate descent on {eq_icm / total:.0%} "
           f"(need >= 80%) of 200 instances; never below it; {elapsed:.1f}s < 10s")


# ---------------------------------------------------------------------------
# 2. the worked neighbor-voting example (candidates 183/261/244)


def test_criterion_2_vote_example():
    pattern = pat.generate_pattern(20, 16, 16, 16, code_seed=0)
    cols = pattern.cols

    def node(ids, probs, x=0.0, y=0.0):
        return GraphNode(x=x, y=y, code=-1,
                         candidate_ids=np.asarray(ids, dtype=np.int64),
                         candidate_probs=np.asarray(probs, dtype=np.float64))

    nodes = [
        node([183, 261, 244], [0.5, 0.3, 0.2]),
        node([261 - cols], [1.0], y=-1),
        node([261 + cols], [1.0], y=1),
        node([260], [1.0], x=-1),
        node([184], [1.0], x=1),
    ]
    edges = []
    for k, d in enumerate((pat.UP, pat.DOWN, pat.LEFT, pat.RIGHT)):
        edges += [(0, k + 1, d), (k + 1, 0, pat.OPPOSITE[d])]
    graph = DetectedGraph(nodes=nodes, edges=np.asarray(edges, dtype=np.int32))

    table = pat.adjacency(pattern).table
    labels = [int(n.candidate_ids[0]) for n in graph.nodes]
    dirs = (pat.UP, pat.DOWN, pat.LEFT, pat.RIGHT)
    score_183 = sum(int(table[183, d] == labels[k + 1]) for k, d in enumerate(dirs))
    selected = int(mrf.vote_refine(graph, pattern).labeling.labels[0])
    ok = score_183 == 1 and selected == 261
    report(2, ok, f"first candidate 183 scores {score_183} (exactly 1, via its right "
                  f"neighbor) and the refinement selects {selected} (exactly 261)")


# ---------------------------------------------------------------------------
# 3. recovery from corrupted candidate lists


def test_criterion_3_corruption_recovery(label_pattern):
    t0 = time.perf_counter()
    base_acc = []
    vote_acc = []
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        graph, truth = gx.synthetic_grid_instance(label_pattern, 10, 10, rng,
                                                  n_candidates=5, corrupt_q=0.2,
                                                  corrupt_exact=True)
        top = np.array([n.candidate_ids[0] for n in graph.nodes])
        base_acc.append(float(np.mean(top == truth)))
        res = mrf.vote_refine(graph, label_pattern)
        vote_acc.append(mrf.labeling_accuracy(res.labeling, truth))
    elapsed = time.perf_counter() - t0
    base = float(np.mean(base_acc))
    vote = float(np.mean(vote_acc))
    ok = vote >= 0.95 and base <= 0.80 and elapsed < 30.0
    report(3, ok, f"with 20% corrupted candidate lists over 100 seeds the voting "
                  f"refinement recovers {vote:.1%} of true labels (need >= 95%) vs "
                  f"{base:.1%} unrefined (need <= 80%); {elapsed:.1f}s < 30s")


# ---------------------------------------------------------------------------
# 4+5. shared end-to-end artifacts


@pytest.fixture(scope="module")
def vga_setup():
    pattern = pat.generate_pattern(24, 32, 16, 16, code_seed=7)
    camera, projector = sim.default_rig(pattern)
    prior = gx.EpipolarPrior(camera=camera, projector=projector, nominal_depth=1.0)
    return pattern, camera, projector, prior


def test_criterion_4_phase_refinement_ratio(vga_setup):
    # high-frequency surface, smooth phase bias injected on the true phase;
    # the real-rig before/after row is out of scope (needs physical hardware
    # and trained networks) and is not reproduced here
    pattern, camera, projector, prior = vga_setup
    scene = sim.make_heightfield(seed=11, base_depth=1.0, amplitude=0.008, grid=33,
                                 upsample=10)
    capture = sim.render_capture(scene, camera, projector, pattern)
    graph = gx.detect_graph(capture.image, pattern, calib=prior)
    truth = gx.truth_phase_maps(capture)
    h, w = capture.image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    biased = WrappedPhaseMaps(
        phase_u=pat.wrap01(truth.phase_u
                           + 0.15 * np.sin(2 * np.pi * xx / 340 + 0.7)
                           * np.cos(2 * np.pi * yy / 260)),
        phase_v=pat.wrap01(truth.phase_v
                           + 0.12 * np.cos(2 * np.pi * xx / 300)
                           * np.sin(2 * np.pi * yy / 240 + 1.1)),
        mask=truth.mask.copy(),
    ).validate()
    labeling = mrf.vote_refine(graph, pattern).labeling

    def depth_rmse(maps):
        corr = uw.unwrap(maps, labeling, graph, pattern)
        _, depth, _ = recon.triangulate(corr, camera, projector)
        return recon.evaluate(depth, capture.gt_depth).rmse_mm

    rmse_before = depth_rmse(biased)
    corrected, _ = uw.refine_phase(graph, capture.image, biased)
    rmse_after = depth_rmse(corrected)
    ratio = rmse_after / rmse_before
    ok = ratio <= 0.75
    report(4, ok, f"line-anchored correction shrinks depth RMSE "
                  f"{rmse_before:.2f} -> {rmse_after:.2f} mm, ratio {ratio:.2f} "
                  f"(need <= 0.75)")


def test_criterion_5_geometric_exactness(vga_setup):
    pattern, camera, projector, prior = vga_setup
    scene = sim.PlaneScene(normal=(0.0, 0.0, -1.0), offset=-1.0)  # plane at 1 m
    capture = sim.render_capture(scene, camera, projector, pattern)

    # ground-truth labeling path: simulator phase and labels stand in for
    # externally supplied network outputs
    tgraph = gx.truth_graph(scene, camera, projector, pattern)
    tmaps = gx.truth_phase_maps(capture)
    tlabels = mrf.Labeling(np.array([int(n.candidate_ids[0]) for n in tgraph.nodes]))
    corr = uw.unwrap(tmaps, tlabels, tgraph, pattern)
    cloud, _, _ = recon.triangulate(corr, camera, projector)
    _, _, rms_truth = recon.fit_plane(cloud.points)

    # full detection path, timed
    t0 = time.perf_counter()
    graph = gx.detect_graph(capture.image, pattern, calib=prior)
    maps = gx.estimate_wrapped_phase(capture.image, calib=prior, pattern=pattern)
    labeling = mrf.vote_refine(graph, pattern).labeling
    maps, _ = uw.refine_phase(graph, capture.image, maps)
    corr_full = uw.unwrap(maps, labeling, graph, pattern)
    cloud_full, depth_full, _ = recon.triangulate(corr_full, camera, projector)
    elapsed = time.perf_counter() - t0
    _, _, rms_full = recon.fit_plane(cloud_full.points)
    coverage = recon.evaluate(depth_full, capture.gt_depth,
                              coverage_denominator=int(capture.lit.sum())).coverage

    ok = (rms_truth * 1000 < 0.1 and rms_full * 1000 < 1.0 and elapsed <= 30.0
          and coverage > 0.8)
    report(5, ok, f"noiseless plane at 1 m: plane-fit RMSE "
                  f"{rms_truth * 1000:.4f} mm with true labels+phase (need < 0.1), "
                  f"{rms_full * 1000:.3f} mm full detection path (need < 1.0, "
                  f"coverage {coverage:.2f} > 0.8); VGA reconstruction took "
                  f"{elapsed:.1f}s (budget 30s)")


# ---------------------------------------------------------------------------
# 6. augmentation statistics


def test_criterion_6_augmentation_statistics():
    img = np.full((512, 512), 128, dtype=np.uint8)
    cfg = sim.AugmentConfig(noise_mean=60.0, noise_std=180.0, roll_degrees=0.0,
                            brightness_scale=1.0, rng_seed=42)
    noise = sim.augment(img, cfg, return_float=True) - 128.0
    mean_err = abs(noise.mean() - 60.0) / 60.0
    std_err = abs(noise.std() - 180.0) / 180.0

    small = pat.generate_pattern(6, 8, 16, 16, code_seed=2)
    _, manifest = sim.generate_dataset(100, small, seed=77, width=96, height=72)
    rolls = {e["augment"]["roll_degrees"] for e in manifest["captures"]}
    in_set = rolls <= set(sim.ROLL_SET_DEGREES)

    ok = mean_err <= 0.02 and std_err <= 0.02 and in_set
    report(6, ok, f"noise sample mean off by {mean_err:.2%}, std by {std_err:.2%} "
                  f"(need <= 2% each); 100 drawn rolls stay in "
                  f"{{0, +-2, +-4, +-6, +-8}} deg: {sorted(rolls)}")


# ---------------------------------------------------------------------------
# 7. fuzzed invariants, 1000 cases per property


def test_criterion_7_fuzzed_invariants(label_pattern):
    rng = np.random.default_rng(31337)
    cases = 1000
    violations = 0

    # (a) coordinate-descent energy never increases across sweeps
    for _ in range(cases):
        rows = int(rng.integers(1, 3))
        cols = int(rng.integers(1, 3))
        graph, _ = gx.synthetic_grid_instance(label_pattern, rows, cols, rng,
                                              n_candidates=4, corrupt_q=0.5,
                                              corrupt_exact=False)
        res = mrf.icm_refine(graph, label_pattern, max_sweeps=6)
        if not (np.diff(res.energies) <= 1e-9).all():
            violations += 1

    # (b) densified corrections are invariant to a common weight scale
    for _ in range(cases):
        n = int(rng.integers(1, 12))
        samples = uw.LineSampleSet(
            x=rng.uniform(0, 23, n), y=rng.uniform(0, 23, n),
            c=rng.uniform(-0.5, 0.5, n),
            direction=np.zeros(n, dtype=np.int8),
        )
        sigma = float(rng.uniform(1.5, 5.0))
        scale = float(rng.uniform(0.2, 20.0))
        a = uw.densify_correction(samples, (24, 24), sigma)
        b = uw.densify_correction(samples, (24, 24), sigma,
                                  sample_weights=np.full(n, scale))
        both = a.mask_u & b.mask_u
        if not np.allclose(a.c_u[both], b.c_u[both], rtol=1e-9, atol=1e-12):
            violations += 1

    # (c) triangulated points reproject onto their pixels and columns
    done = 0
    while done < cases:
        n = min(50, cases - done)
        camera = sim.PinholeModel(float(rng.uniform(300, 900)), float(rng.uniform(300, 900)),
                                  31.5, 23.5, 64, 48)
        projector = sim.look_at(
            [float(rng.uniform(0.1, 0.4)), float(rng.uniform(-0.1, 0.1)), 0.0],
            [0.0, 0.0, 1.0], 500.0, 500.0, 63.5, 47.5, 128, 96)
        xs = rng.integers(0, 64, n)
        ys = rng.integers(0, 48, n)
        depth = rng.uniform(0.5, 2.0, n)
        dirs = camera.ray_through(xs.astype(np.float64), ys.astype(np.float64))
        pts = camera.center[None, :] + depth[:, None] * dirs
        u_p, v_p, _ = projector.project(pts)
        u = np.zeros((48, 64))
        v = np.zeros((48, 64))
        valid = np.zeros((48, 64), dtype=bool)
        u[ys, xs] = u_p
        v[ys, xs] = v_p
        valid[ys, xs] = True
        cloud, _, _ = recon.triangulate(
            uw.CorrespondenceMap(u=u, v=v, valid=valid), camera, projector)
        x_c, y_c, _ = camera.project(cloud.points)
        u_back, _, _ = projector.project(cloud.points)
        px = cloud.pixels.astype(np.int64)
        bad = (
            (np.abs(x_c - cloud.pixels[:, 0]) > 0.01)
            | (np.abs(y_c - cloud.pixels[:, 1]) > 0.01)
            | (np.abs(u_back - u[px[:, 1], px[:, 0]]) > 0.05)
        )
        violations += int(bad.sum())
        done += n

    # (d) shifting every label by one column shifts u by exactly one period
    for _ in range(cases):
        p = pat.generate_pattern(4, int(rng.integers(3, 6)), 8, 8, code_seed=0)
        h = w = 24
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        maps = WrappedPhaseMaps(
            phase_u=pat.wrap01(xx / 8.0 + rng.uniform(0, 1)),
            phase_v=pat.wrap01(yy / 8.0 + rng.uniform(0, 1)),
            mask=np.ones((h, w)),
        )
        node = GraphNode(x=float(rng.integers(6, 18)), y=float(rng.integers(6, 18)),
                         code=0, candidate_ids=np.array([5]),
                         candidate_probs=np.array([1.0]))
        graph = DetectedGraph(nodes=[node], edges=np.empty((0, 3), np.int32))
        base = uw.unwrap(maps, mrf.Labeling(np.array([1 * p.cols + 1])), graph, p)
        shifted = uw.unwrap(maps, mrf.Labeling(np.array([1 * p.cols + 2])), graph, p)
        both = base.valid & shifted.valid
        if both.any():
            if not np.allclose(shifted.u[both] - base.u[both], p.period_u, atol=1e-9):
                violations += 1
            if not np.array_equal(shifted.v[both], base.v[both]):
                violations += 1

    ok = violations == 0
    report(7, ok, f"4 x 1000 fuzz cases (energy descent, weight-scale invariance, "
                  f"reprojection consistency, relabeling equivariance): "
                  f"{violations} violations")


# ---------------------------------------------------------------------------
# 8. classical wrapped-phase estimator accuracy (learned-network stand-in)


def test_criterion_8_phase_estimator_accuracy(vga_setup):
    # accuracy figures of trained per-pixel networks are not reproducible
    # without those networks; the shipped classical estimator must stay
    # below 0.05 cycles circular RMSE on noiseless captures instead
    pattern, camera, projector, prior = vga_setup
    worst = 0.0
    for scene in (
        sim.PlaneScene(normal=(0.0, 0.0, -1.0), offset=-1.0),
        sim.make_heightfield(seed=4, base_depth=1.0, amplitude=0.01),
    ):
        capture = sim.render_capture(scene, camera, projector, pattern)
        maps = gx.estimate_wrapped_phase(capture.image, calib=prior, pattern=pattern)
        m = (maps.mask > 0.5) & capture.lit
        worst = max(worst,
                    circ_rmse(maps.phase_u, capture.gt_phase_u, m),
                    circ_rmse(maps.phase_v, capture.gt_phase_v, m))
    ok = worst < 0.05
    report(8, ok, f"classical wrapped-phase estimator circular RMSE <= {worst:.4f} "
                  f"cycles on noiseless captures (need < 0.05)")
