"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``raycast_heightfield``, ``raycast_mesh``,
``densify_scatter``, ``bruteforce_assign``, ``phase_bfs``) dispatch on the
backend chosen in :mod:`gridscan._accel`. Both implementations follow the
same arithmetic sequence so results agree to floating-point noise (the
BFS and brute-force kernels agree exactly); tests/test_kernels.py checks
the parity and benchmarks/benchmark_backends.py compares speed.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover
    njit = None


# ---------------------------------------------------------------------------
# heightfield ray casting (fixed-point iteration on the depth-along-ray)


def raycast_heightfield_numpy(origin, dirs, heights, extent, iters=30):
    """Intersect rays with a bilinear heightfield z = h(x, y).

    origin: (3,), dirs: (P, 3) unnormalized, heights: (ny, nx),
    extent: (x0, x1, y0, y1). Returns (t, hit) with t the ray parameter.
    Convergence requires shallow slopes relative to the ray z-component,
    which holds for the smooth synthetic fields generated here.
    """
    x0, x1, y0, y1 = extent
    ny, nx = heights.shape
    dz = dirs[:, 2]
    ok = np.abs(dz) > 1e-12
    t = np.where(ok, (heights.mean() - origin[2]) / np.where(ok, dz, 1.0), -1.0)
    sx = (nx - 1) / (x1 - x0) if nx > 1 else 0.0
    sy = (ny - 1) / (y1 - y0) if ny > 1 else 0.0
    for _ in range(iters):
        x = origin[0] + t * dirs[:, 0]
        y = origin[1] + t * dirs[:, 1]
        gx = np.clip((x - x0) * sx, 0.0, nx - 1.0)
        gy = np.clip((y - y0) * sy, 0.0, ny - 1.0)
        ix = np.minimum(gx.astype(np.int64), nx - 2) if nx > 1 else np.zeros(len(gx), np.int64)
        iy = np.minimum(gy.astype(np.int64), ny - 2) if ny > 1 else np.zeros(len(gy), np.int64)
        fx = gx - ix
        fy = gy - iy
        if nx > 1 and ny > 1:
            hz = (
                heights[iy, ix] * (1 - fx) * (1 - fy)
                + heights[iy, ix + 1] * fx * (1 - fy)
                + heights[iy + 1, ix] * (1 - fx) * fy
                + heights[iy + 1, ix + 1] * fx * fy
            )
        else:
            hz = heights[iy, ix]
        t = np.where(ok, (hz - origin[2]) / np.where(ok, dz, 1.0), -1.0)
    x = origin[0] + t * dirs[:, 0]
    y = origin[1] + t * dirs[:, 1]
    hit = ok & (t > 0) & (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return t, hit


if HAVE_NUMBA:

    @njit(cache=True)
    def _raycast_heightfield_numba(origin, dirs, heights, x0, x1, y0, y1, iters):
        p = dirs.shape[0]
        ny, nx = heights.shape
        t_out = np.empty(p, np.float64)
        hit = np.zeros(p, np.bool_)
        hmean = heights.mean()
        sx = (nx - 1) / (x1 - x0) if nx > 1 else 0.0
        sy = (ny - 1) / (y1 - y0) if ny > 1 else 0.0
        for i in range(p):
            dz = dirs[i, 2]
            if abs(dz) <= 1e-12:
                t_out[i] = -1.0
                continue
            t = (hmean - origin[2]) / dz
            for _ in range(iters):
                x = origin[0] + t * dirs[i, 0]
                y = origin[1] + t * dirs[i, 1]
                gx = min(max((x - x0) * sx, 0.0), nx - 1.0)
                gy = min(max((y - y0) * sy, 0.0), ny - 1.0)
                ix = min(int(gx), nx - 2) if nx > 1 else 0
                iy = min(int(gy), ny - 2) if ny > 1 else 0
                fx = gx - ix
                fy = gy - iy
                if nx > 1 and ny > 1:
                    hz = (
                        heights[iy, ix] * (1 - fx) * (1 - fy)
                        + heights[iy, ix + 1] * fx * (1 - fy)
                        + heights[iy + 1, ix] * (1 - fx) * fy
                        + heights[iy + 1, ix + 1] * fx * fy
                    )
                else:
                    hz = heights[iy, ix]
                t = (hz - origin[2]) / dz
            t_out[i] = t
            x = origin[0] + t * dirs[i, 0]
            y = origin[1] + t * dirs[i, 1]
            hit[i] = (t > 0) and (x0 <= x <= x1) and (y0 <= y <= y1)
        return t_out, hit


def raycast_heightfield(origin, dirs, heights, extent, iters=30):
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    heights = np.ascontiguousarray(heights, dtype=np.float64)
    if USE_NUMBA:
        x0, x1, y0, y1 = (float(v) for v in extent)
        return _raycast_heightfield_numba(origin, dirs, heights, x0, x1, y0, y1, iters)
    return raycast_heightfield_numpy(origin, dirs, heights, extent, iters)


# ---------------------------------------------------------------------------
# triangle-mesh ray casting (Moller-Trumbore, closest positive hit)


def raycast_mesh_numpy(origin, dirs, triangles):
    """origin (3,), dirs (P, 3), triangles (T, 3, 3). Returns (t, hit)."""
    p = dirs.shape[0]
    t_best = np.full(p, np.inf)
    eps = 1e-12
    for tri in triangles:
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        pvec = np.cross(dirs, e2)
        det = pvec @ e1
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - tri[0]
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        v = (dirs @ qvec) * inv
        t = (qvec @ e2) * inv
        ok &= (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > 1e-9)
        t_best = np.where(ok & (t < t_best), t, t_best)
    hit = np.isfinite(t_best)
    return np.where(hit, t_best, -1.0), hit


if HAVE_NUMBA:

    @njit(cache=True)
    def _raycast_mesh_numba(origin, dirs, triangles):
        p = dirs.shape[0]
        nt = triangles.shape[0]
        t_out = np.full(p, -1.0)
        hit = np.zeros(p, np.bool_)
        for i in range(p):
            best = np.inf
            for k in range(nt):
                ax, ay, az = triangles[k, 0, 0], triangles[k, 0, 1], triangles[k, 0, 2]
                e1x = triangles[k, 1, 0] - ax
                e1y = triangles[k, 1, 1] - ay
                e1z = triangles[k, 1, 2] - az
                e2x = triangles[k, 2, 0] - ax
                e2y = triangles[k, 2, 1] - ay
                e2z = triangles[k, 2, 2] - az
                dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = px * e1x + py * e1y + pz * e1z
                if abs(det) <= 1e-12:
                    continue
                inv = 1.0 / det
                tx = origin[0] - ax
                ty = origin[1] - ay
                tz = origin[2] - az
                u = (px * tx + py * ty + pz * tz) * inv
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (qx * dx + qy * dy + qz * dz) * inv
                t = (qx * e2x + qy * e2y + qz * e2z) * inv
                if u >= -1e-9 and v >= -1e-9 and u + v <= 1 + 1e-9 and t > 1e-9 and t < best:
                    best = t
            if best < np.inf:
                t_out[i] = best
                hit[i] = True
        return t_out, hit


def raycast_mesh(origin, dirs, triangles):
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.float64)
    if USE_NUMBA:
        return _raycast_mesh_numba(origin, dirs, triangles)
    return raycast_mesh_numpy(origin, dirs, triangles)


# ---------------------------------------------------------------------------
# bilinear scatter accumulation (the splat half of normalized convolution)


def bilinear_splat_numpy(xs, ys, vals, weights, shape):
    """Accumulate weighted samples into (value, weight) grids.

    Each sample spreads over its four surrounding pixels with bilinear
    weights; samples outside the grid lose the out-of-range share.
    """
    h, w = shape
    vsum = np.zeros((h, w))
    wsum = np.zeros((h, w))
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    for dx, dy, bw in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        px = x0 + dx
        py = y0 + dy
        ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        np.add.at(wsum, (py[ok], px[ok]), weights[ok] * bw[ok])
        np.add.at(vsum, (py[ok], px[ok]), weights[ok] * bw[ok] * vals[ok])
    return vsum, wsum


if HAVE_NUMBA:

    @njit(cache=True)
    def _bilinear_splat_numba(xs, ys, vals, weights, h, w):
        vsum = np.zeros((h, w))
        wsum = np.zeros((h, w))
        for k in range(xs.shape[0]):
            x0 = int(np.floor(xs[k]))
            y0 = int(np.floor(ys[k]))
            fx = xs[k] - x0
            fy = ys[k] - y0
            for dx in range(2):
                for dy in range(2):
                    px = x0 + dx
                    py = y0 + dy
                    if 0 <= px < w and 0 <= py < h:
                        bw = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
                        wsum[py, px] += weights[k] * bw
                        vsum[py, px] += weights[k] * bw * vals[k]
        return vsum, wsum


def bilinear_splat(xs, ys, vals, weights, shape):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if USE_NUMBA:
        return _bilinear_splat_numba(xs, ys, vals, weights, int(shape[0]), int(shape[1]))
    return bilinear_splat_numpy(xs, ys, vals, weights, shape)


# ---------------------------------------------------------------------------
# exhaustive MAP search over per-node candidate lists (branch and bound)
#
# Nodes are visited in index order; candidates must be pre-sorted so that
# the first minimum found in enumeration order is the wanted tie-break.
# edge_ptr/edge_other/edge_cost hold, per node n, the pairwise cost matrix
# against each already-assigned node m < n:
#   cost = edge_cost[e, k_n, k_m].


def bruteforce_assign_numpy(counts, g, edge_ptr, edge_other, edge_cost, chunk=200_000):
    n = len(counts)
    strides = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * counts[i + 1]
    total = strides[0] * counts[0]
    best_e = np.inf
    best_idx = np.zeros(n, dtype=np.int64)
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        lin = np.arange(start, stop, dtype=np.int64)
        idx = (lin[:, None] // strides[None, :]) % counts[None, :]
        energy = np.zeros(stop - start)
        for node in range(n):
            energy += g[node, idx[:, node]]
            for e in range(edge_ptr[node], edge_ptr[node + 1]):
                other = edge_other[e]
                energy += edge_cost[e, idx[:, node], idx[:, other]]
        kmin = int(np.argmin(energy))
        if energy[kmin] < best_e:
            best_e = float(energy[kmin])
            best_idx = idx[kmin].copy()
    return best_idx, best_e


if HAVE_NUMBA:

    @njit(cache=True)
    def _bruteforce_assign_numba(counts, g, edge_ptr, edge_other, edge_cost):
        n = counts.shape[0]
        idx = np.zeros(n, np.int64)
        partial = np.zeros(n + 1, np.float64)
        best_e = np.inf
        best_idx = np.zeros(n, np.int64)
        level = 0
        idx[0] = 0
        while level >= 0:
            if idx[level] >= counts[level]:
                level -= 1
                if level >= 0:
                    idx[level] += 1
                continue
            c = g[level, idx[level]]
            for e in range(edge_ptr[level], edge_ptr[level + 1]):
                c += edge_cost[e, idx[level], idx[edge_other[e]]]
            total = partial[level] + c
            if total < best_e:
                if level == n - 1:
                    best_e = total
                    for i in range(n):
                        best_idx[i] = idx[i]
                    idx[level] += 1
                else:
                    partial[level + 1] = total
                    level += 1
                    idx[level] = 0
            else:
                idx[level] += 1
        return best_idx, best_e


def bruteforce_assign(counts, g, edge_ptr, edge_other, edge_cost):
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    edge_ptr = np.ascontiguousarray(edge_ptr, dtype=np.int64)
    edge_other = np.ascontiguousarray(edge_other, dtype=np.int64)
    edge_cost = np.ascontiguousarray(edge_cost, dtype=np.float64)
    if USE_NUMBA:
        idx, e = _bruteforce_assign_numba(counts, g, edge_ptr, edge_other, edge_cost)
        return idx, float(e)
    return bruteforce_assign_numpy(counts, g, edge_ptr, edge_other, edge_cost)


# ---------------------------------------------------------------------------
# integer-cycle propagation over a wrapped-phase map (layered flood fill)
#
# Seeds carry known integer cycle counts; each unvisited masked pixel that
# touches the visited set adopts k = k_nb + rint(phase_nb - phase_self)
# from its first visited 4-neighbor in (up, down, left, right) priority.
# Layered (synchronous) updates keep both backends bit-identical.


def phase_bfs_numpy(phase, valid, seeds_y, seeds_x, seeds_k, max_iters=0):
    h, w = phase.shape
    if max_iters <= 0:
        max_iters = h + w + 8
    k = np.zeros((h, w), dtype=np.int32)
    visited = np.zeros((h, w), dtype=bool)
    for sy, sx, sk in zip(seeds_y, seeds_x, seeds_k):
        if valid[sy, sx]:
            visited[sy, sx] = True
            k[sy, sx] = sk
    for _ in range(max_iters):
        cand_vis = np.zeros((4, h, w), dtype=bool)
        cand_k = np.zeros((4, h, w), dtype=np.int32)
        # up neighbor (y-1)
        cand_vis[0, 1:, :] = visited[:-1, :]
        cand_k[0, 1:, :] = visited[:-1, :] * (
            k[:-1, :] + np.rint(phase[:-1, :] - phase[1:, :]).astype(np.int32)
        )
        # down neighbor (y+1)
        cand_vis[1, :-1, :] = visited[1:, :]
        cand_k[1, :-1, :] = visited[1:, :] * (
            k[1:, :] + np.rint(phase[1:, :] - phase[:-1, :]).astype(np.int32)
        )
        # left neighbor (x-1)
        cand_vis[2, :, 1:] = visited[:, :-1]
        cand_k[2, :, 1:] = visited[:, :-1] * (
            k[:, :-1] + np.rint(phase[:, :-1] - phase[:, 1:]).astype(np.int32)
        )
        # right neighbor (x+1)
        cand_vis[3, :, :-1] = visited[:, 1:]
        cand_k[3, :, :-1] = visited[:, 1:] * (
            k[:, 1:] + np.rint(phase[:, 1:] - phase[:, :-1]).astype(np.int32)
        )
        frontier = (~visited) & valid & cand_vis.any(axis=0)
        if not frontier.any():
            break
        pick = np.argmax(cand_vis, axis=0)  # first available direction
        k = np.where(frontier, np.take_along_axis(cand_k, pick[None], 0)[0], k)
        visited |= frontier
    return k, visited


if HAVE_NUMBA:

    @njit(cache=True)
    def _phase_bfs_numba(phase, valid, seeds_y, seeds_x, seeds_k, max_iters):
        h, w = phase.shape
        k = np.zeros((h, w), np.int32)
        visited = np.zeros((h, w), np.bool_)
        for s in range(seeds_y.shape[0]):
            sy, sx = seeds_y[s], seeds_x[s]
            if valid[sy, sx]:
                visited[sy, sx] = True
                k[sy, sx] = seeds_k[s]
        k_new = k.copy()
        vis_new = visited.copy()
        for _ in range(max_iters):
            changed = False
            for y in range(h):
                for x in range(w):
                    if visited[y, x] or not valid[y, x]:
                        continue
                    if y > 0 and visited[y - 1, x]:
                        kk = k[y - 1, x] + np.int32(np.rint(phase[y - 1, x] - phase[y, x]))
                    elif y < h - 1 and visited[y + 1, x]:
                        kk = k[y + 1, x] + np.int32(np.rint(phase[y + 1, x] - phase[y, x]))
                    elif x > 0 and visited[y, x - 1]:
                        kk = k[y, x - 1] + np.int32(np.rint(phase[y, x - 1] - phase[y, x]))
                    elif x < w - 1 and visited[y, x + 1]:
                        kk = k[y, x + 1] + np.int32(np.rint(phase[y, x + 1] - phase[y, x]))
                    else:
                        continue
                    k_new[y, x] = kk
                    vis_new[y, x] = True
                    changed = True
            if not changed:
                break
            k[:, :] = k_new
            visited[:, :] = vis_new
        return k, visited


def phase_bfs(phase, valid, seeds_y, seeds_x, seeds_k, max_iters=0):
    phase = np.ascontiguousarray(phase, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=bool)
    seeds_y = np.ascontiguousarray(seeds_y, dtype=np.int64)
    seeds_x = np.ascontiguousarray(seeds_x, dtype=np.int64)
    seeds_k = np.ascontiguousarray(seeds_k, dtype=np.int32)
    if max_iters <= 0:
        max_iters = phase.shape[0] + phase.shape[1] + 8
    if USE_NUMBA:
        return _phase_bfs_numba(phase, valid, seeds_y, seeds_x, seeds_k, max_iters)
    return phase_bfs_numpy(phase, valid, seeds_y, seeds_x, seeds_k, max_iters)
