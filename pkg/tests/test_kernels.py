"""Backend parity: every numba kernel must match its numpy fallback."""

import numpy as np
import pytest

from gridscan import kernels
from gridscan._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


@needs_numba
def test_heightfield_parity():
    rng = np.random.default_rng(0)
    heights = 1.0 + 0.02 * rng.standard_normal((17, 23))
    dirs = np.stack(
        [rng.uniform(-0.4, 0.4, 300), rng.uniform(-0.3, 0.3, 300), np.ones(300)], axis=1
    )
    origin = np.array([0.05, -0.02, 0.0])
    extent = (-0.5, 0.5, -0.4, 0.4)
    t_np, hit_np = kernels.raycast_heightfield_numpy(origin, dirs, heights, extent)
    t_nb, hit_nb = kernels._raycast_heightfield_numba(origin, dirs, heights, *extent, 30)
    assert np.array_equal(hit_np, hit_nb)
    assert np.allclose(t_np[hit_np], t_nb[hit_nb], rtol=0, atol=1e-12)


@needs_numba
def test_mesh_parity():
    rng = np.random.default_rng(1)
    tris = rng.uniform(-0.5, 0.5, (12, 3, 3))
    tris[:, :, 2] = rng.uniform(0.8, 1.4, (12, 3))
    dirs = np.stack(
        [rng.uniform(-0.5, 0.5, 400), rng.uniform(-0.5, 0.5, 400), np.ones(400)], axis=1
    )
    origin = np.zeros(3)
    t_np, hit_np = kernels.raycast_mesh_numpy(origin, dirs, tris)
    t_nb, hit_nb = kernels._raycast_mesh_numba(origin, dirs, tris)
    assert np.array_equal(hit_np, hit_nb)
    assert np.allclose(t_np[hit_np], t_nb[hit_np], rtol=0, atol=1e-12)


@needs_numba
def test_splat_parity():
    rng = np.random.default_rng(2)
    n = 500
    xs = rng.uniform(-2, 34, n)  # includes out-of-grid samples
    ys = rng.uniform(-2, 26, n)
    vals = rng.uniform(-0.5, 0.5, n)
    wts = rng.uniform(0.1, 2.0, n)
    v_np, w_np = kernels.bilinear_splat_numpy(xs, ys, vals, wts, (24, 32))
    v_nb, w_nb = kernels._bilinear_splat_numba(xs, ys, vals, wts, 24, 32)
    assert np.allclose(v_np, v_nb, atol=1e-12)
    assert np.allclose(w_np, w_nb, atol=1e-12)


def _bf_instance(rng, n_nodes=6, k=4):
    counts = rng.integers(1, k + 1, n_nodes).astype(np.int64)
    g = rng.uniform(0, 3, (n_nodes, k))
    edge_other = []
    edge_cost = []
    edge_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    for node in range(1, n_nodes):
        if rng.random() < 0.8:
            edge_other.append(int(rng.integers(0, node)))
            edge_cost.append(rng.choice([0.0, 1.5], size=(k, k)))
        edge_ptr[node + 1] = len(edge_other)
    edge_ptr[1] = 0
    for i in range(1, n_nodes + 1):
        edge_ptr[i] = max(edge_ptr[i], edge_ptr[i - 1])
    cost = np.stack(edge_cost) if edge_cost else np.zeros((0, k, k))
    return counts, g, edge_ptr, np.asarray(edge_other, dtype=np.int64), cost


@needs_numba
def test_bruteforce_parity():
    rng = np.random.default_rng(3)
    for _ in range(25):
        counts, g, ptr, other, cost = _bf_instance(rng)
        idx_np, e_np = kernels.bruteforce_assign_numpy(counts, g, ptr, other, cost)
        idx_nb, e_nb = kernels._bruteforce_assign_numba(counts, g, ptr, other, cost)
        assert np.array_equal(idx_np, idx_nb)
        assert e_np == pytest.approx(float(e_nb), abs=1e-9)


@needs_numba
def test_phase_bfs_parity():
    rng = np.random.default_rng(4)
    h, w = 40, 56
    phase = (np.cumsum(rng.uniform(0.03, 0.08, (h, w)), axis=1)) % 1.0
    valid = rng.random((h, w)) > 0.1
    seeds_y = rng.integers(0, h, 6).astype(np.int64)
    seeds_x = rng.integers(0, w, 6).astype(np.int64)
    seeds_k = rng.integers(-3, 4, 6).astype(np.int32)
    k_np, vis_np = kernels.phase_bfs_numpy(phase, valid, seeds_y, seeds_x, seeds_k)
    k_nb, vis_nb = kernels._phase_bfs_numba(phase, valid, seeds_y, seeds_x, seeds_k,
                                            h + w + 8)
    assert np.array_equal(vis_np, vis_nb)
    assert np.array_equal(k_np[vis_np], k_nb[vis_np])


def test_dispatchers_run_on_selected_backend():
    # whatever backend was chosen at import, the dispatchers must work
    rng = np.random.default_rng(5)
    heights = np.full((5, 5), 1.0)
    dirs = np.array([[0.0, 0.0, 1.0]])
    t, hit = kernels.raycast_heightfield(np.zeros(3), dirs, heights, (-1, 1, -1, 1))
    assert hit[0] and t[0] == pytest.approx(1.0)
    v, w = kernels.bilinear_splat(np.array([1.5]), np.array([1.5]), np.array([0.2]),
                                  np.array([1.0]), (4, 4))
    assert w.sum() == pytest.approx(1.0)
    assert v.sum() == pytest.approx(0.2)
