"""Line-anchored phase correction and unwrapping to projector coordinates.

Grid lines sit at cell phase 0.5 by construction, so the deviation of the
estimated phase from 0.5 along a detected line measures the local phase
bias. Those sparse corrections are densified by normalized Gaussian
scatter interpolation and subtracted; the corrected wrapped phase is then
anchored to absolute cell indices at the labeled nodes and propagated
per-pixel, yielding dense projector coordinates for triangulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate, ndimage

from . import kernels
from .graphext import DetectedGraph, WrappedPhaseMaps
from .mrf import Labeling
from .pattern import DOWN, LEFT, RIGHT, UP, GridPattern, adjacency, circ_signed, wrap01

DIR_U = 0  # corrections to phase_u (vertical grid lines)
DIR_V = 1  # corrections to phase_v (horizontal grid lines)


class UnwrapError(ValueError):
    pass


@dataclass
class LineCurve:
    points: np.ndarray  # (M, 2) subpixel x, y at ~1 px spacing
    direction: int  # DIR_U or DIR_V
    fallback: bool = False  # straight-segment fallback (chain too short)


@dataclass
class LineSampleSet:
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray  # correction values in (-0.5, 0.5]
    direction: np.ndarray  # DIR_U / DIR_V per sample

    def split(self, direction):
        m = self.direction == direction
        return self.x[m], self.y[m], self.c[m]


@dataclass
class CorrectionMap:
    c_u: np.ndarray  # (H, W)
    c_v: np.ndarray
    mask_u: np.ndarray  # bool
    mask_v: np.ndarray

    def validate(self):
        for c, m in ((self.c_u, self.mask_u), (self.c_v, self.mask_v)):
            if m.any():
                vals = c[m]
                if not np.isfinite(vals).all():
                    raise UnwrapError("non-finite correction on the support mask")
                if np.abs(vals).max() > 0.5 + 1e-9:
                    raise UnwrapError("correction magnitude exceeds half a cell")
        return self


@dataclass
class CorrespondenceMap:
    u: np.ndarray  # (H, W) absolute projector x, float
    v: np.ndarray
    valid: np.ndarray  # bool

    @property
    def coverage(self) -> float:
        return float(self.valid.mean())


# ---------------------------------------------------------------------------
# relative lattice coordinates from the graph connectivity alone


def relative_lattice(graph: DetectedGraph):
    """Per-node (component, rel_i, rel_j) from a BFS over directional edges."""
    n = graph.num_nodes
    comp = np.full(n, -1, dtype=np.int64)
    ri = np.zeros(n, dtype=np.int64)
    rj = np.zeros(n, dtype=np.int64)
    step = {RIGHT: (0, 1), LEFT: (0, -1), DOWN: (1, 0), UP: (-1, 0)}
    c = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        comp[start] = c
        queue = [start]
        while queue:
            v = queue.pop(0)
            for u, d in graph.neighbors(v):
                if comp[u] < 0:
                    comp[u] = c
                    di, dj = step[d]
                    ri[u] = ri[v] + di
                    rj[u] = rj[v] + dj
                    queue.append(u)
        c += 1
    return comp, ri, rj


# ---------------------------------------------------------------------------
# curve extraction


def _edge_crossings(image, a_xy, b_xy, search=(0.25, 0.75), n_samples=64, lobe=6):
    """Subpixel brightness peaks along many segments at once.

    The bright grid line crosses each node-to-node segment near its
    middle; its position is the centroid of the above-half-max lobe
    around the restricted profile maximum. Returns ``(points, ok)``.
    """
    e = len(a_xy)
    s = np.linspace(0.0, 1.0, n_samples)
    xs = a_xy[:, 0:1] + s[None, :] * (b_xy[:, 0:1] - a_xy[:, 0:1])
    ys = a_xy[:, 1:2] + s[None, :] * (b_xy[:, 1:2] - a_xy[:, 1:2])
    prof = ndimage.map_coordinates(
        image, [ys.ravel(), xs.ravel()], order=1, cval=0.0
    ).reshape(e, n_samples)
    lo, hi = int(search[0] * n_samples), int(search[1] * n_samples)
    # remove the linear baseline across the window (glyph bleed slopes it)
    left = prof[:, lo : lo + 3].mean(axis=1)
    right = prof[:, hi - 3 : hi].mean(axis=1)
    ramp = np.linspace(0.0, 1.0, n_samples)
    base = left[:, None] + (right - left)[:, None] * (ramp[None, :] - ramp[lo]) / max(
        ramp[hi - 1] - ramp[lo], 1e-9
    )
    flat = prof - base
    win = flat[:, lo:hi]
    k = np.argmax(win, axis=1) + lo
    peak = flat[np.arange(e), k]
    # centroid over a fixed lobe around the peak, thresholded at half max
    offs = np.arange(-lobe, lobe + 1)
    idx = np.clip(k[:, None] + offs[None, :], 0, n_samples - 1)
    seg = flat[np.arange(e)[:, None], idx] - 0.5 * peak[:, None]
    seg = np.maximum(seg, 0.0)
    ssum = seg.sum(axis=1)
    ok = (peak > 1e-6) & (ssum > 1e-12)
    pos = np.where(ok, (s[idx] * seg).sum(axis=1) / np.where(ok, ssum, 1.0), 0.5)
    points = a_xy + pos[:, None] * (b_xy - a_xy)
    return points, ok


def _fit_chain(points, smooth=0.05, spacing=1.0):
    """Cubic b-spline through ordered chain points, resampled at ~spacing px.

    ``smooth`` is the tolerated rms deviation per point in px (matched to
    the crossing-localization noise).
    """
    pts = np.asarray(points, dtype=np.float64)
    chord = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
    total = chord[-1]
    if len(pts) >= 4 and total > 1e-9:
        tck, _ = interpolate.splprep(pts.T, u=chord / total, k=3,
                                     s=len(pts) * smooth * smooth)
        t = np.linspace(0.0, 1.0, max(int(np.ceil(total / spacing)) + 1, 2))
        out = np.stack(interpolate.splev(t, tck), axis=1)
        return out, False
    # straight-segment fallback: total-least-squares line through the points
    mean = pts.mean(axis=0)
    if len(pts) == 1 or total <= 1e-9:
        return mean[None, :], True
    _, _, vt = np.linalg.svd(pts - mean)
    axis = vt[0]
    proj = (pts - mean) @ axis
    t = np.linspace(proj.min(), proj.max(), max(int(np.ceil(total / spacing)) + 1, 2))
    return mean[None, :] + t[:, None] * axis[None, :], True


def fit_line_curves(graph: DetectedGraph, image, smooth=0.05):
    """Subpixel curves of the grid lines, localized between adjacent nodes.

    Each image edge between horizontally adjacent nodes crosses one
    vertical grid line near its midpoint; the crossings stacked along a
    column boundary form one chain (and transposed for horizontal lines).
    Chains shorter than 4 points fall back to straight segments and are
    flagged on the curve.
    """
    if len(graph.edges) == 0:
        raise UnwrapError("graph has no edges to trace lines from")
    img = np.asarray(image, dtype=np.float64)
    comp, ri, rj = relative_lattice(graph)
    xy = np.array([[nd.x, nd.y] for nd in graph.nodes])
    forward = graph.edges[np.isin(graph.edges[:, 2], (RIGHT, DOWN))]
    points, ok = _edge_crossings(img, xy[forward[:, 0]], xy[forward[:, 1]])
    chains: dict = {}
    for row, pt, good in zip(forward, points, ok):
        if not good:
            continue
        src, _, d = int(row[0]), int(row[1]), int(row[2])
        if d == RIGHT:  # crossing of a vertical line -> phase_u correction
            key = (DIR_U, int(comp[src]), int(rj[src]))
            order = int(ri[src])
        else:  # DOWN: horizontal line -> phase_v correction
            key = (DIR_V, int(comp[src]), int(ri[src]))
            order = int(rj[src])
        chains.setdefault(key, []).append((order, tuple(pt)))
    curves = []
    for (direction, _, _), entries in sorted(chains.items()):
        entries.sort(key=lambda e: e[0])
        pts = np.array([p for _, p in entries])
        sampled, fallback = _fit_chain(pts, smooth=smooth)
        curves.append(LineCurve(points=sampled, direction=direction, fallback=fallback))
    return curves


# ---------------------------------------------------------------------------
# corrections


def _circular_interp(phase, x, y):
    """Bilinear interpolation of a wrapped quantity via its unit phasor."""
    ang = 2.0 * np.pi * phase
    re = ndimage.map_coordinates(np.cos(ang), [y, x], order=1, cval=0.0)
    im = ndimage.map_coordinates(np.sin(ang), [y, x], order=1, cval=0.0)
    return wrap01(np.arctan2(im, re) / (2.0 * np.pi))


def sample_corrections(curves, phase: WrappedPhaseMaps, min_mask=0.5) -> LineSampleSet:
    """Phase deviation from the ideal line value 0.5 at every curve sample."""
    xs, ys, cs, ds = [], [], [], []
    h, w = phase.mask.shape
    for curve in curves:
        x = curve.points[:, 0]
        y = curve.points[:, 1]
        inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
        if not inside.any():
            continue
        x, y = x[inside], y[inside]
        m = ndimage.map_coordinates(phase.mask, [y, x], order=1, cval=0.0)
        ok = m >= min_mask
        if not ok.any():
            continue
        x, y = x[ok], y[ok]
        ph = _circular_interp(
            phase.phase_u if curve.direction == DIR_U else phase.phase_v, x, y
        )
        xs.append(x)
        ys.append(y)
        cs.append(circ_signed(ph - 0.5))
        ds.append(np.full(len(x), curve.direction, dtype=np.int8))
    if not xs:
        return LineSampleSet(
            x=np.empty(0), y=np.empty(0), c=np.empty(0), direction=np.empty(0, np.int8)
        )
    return LineSampleSet(
        x=np.concatenate(xs),
        y=np.concatenate(ys),
        c=np.concatenate(cs),
        direction=np.concatenate(ds),
    )


def default_sigma_g(graph: DetectedGraph) -> float:
    """Pattern period in camera px, estimated from the median edge length."""
    if len(graph.edges) == 0:
        return 16.0
    xy = np.array([[nd.x, nd.y] for nd in graph.nodes])
    d = np.linalg.norm(xy[graph.edges[:, 0]] - xy[graph.edges[:, 1]], axis=1)
    return float(np.median(d))


def densify_correction(samples: LineSampleSet, shape, sigma_g, w_min=1e-3,
                       sample_weights=None) -> CorrectionMap:
    """Normalized Gaussian scatter interpolation of the sparse corrections.

    Computed as normalized convolution: samples are splatted bilinearly
    into value/weight accumulators and both are blurred with the Gaussian
    kernel, so each pixel carries the exp(-d^2 / 2 sigma_g^2)-weighted
    mean of the samples. Scaling all sample weights by a common positive
    factor leaves the values unchanged; the support mask keeps pixels
    whose accumulated Gaussian weight reaches ``w_min``.
    """
    h, w = shape
    maps = []
    masks = []
    kernel_scale = 2.0 * np.pi * sigma_g * sigma_g  # unnormalized-Gaussian weight sum
    for direction in (DIR_U, DIR_V):
        xs, ys, cs = samples.split(direction)
        if sample_weights is None:
            wts = np.ones(len(xs))
        else:
            wts = np.asarray(sample_weights, dtype=np.float64)[samples.direction == direction]
        if len(xs) == 0:
            maps.append(np.zeros((h, w)))
            masks.append(np.zeros((h, w), dtype=bool))
            continue
        vsum, wsum = kernels.bilinear_splat(xs, ys, cs, wts, (h, w))
        vblur = ndimage.gaussian_filter(vsum, sigma_g, mode="constant")
        wblur = ndimage.gaussian_filter(wsum, sigma_g, mode="constant")
        mask = wblur * kernel_scale >= w_min
        c = np.zeros((h, w))
        c[mask] = vblur[mask] / wblur[mask]
        # blur of |c| <= 0.5 samples stays within +-0.5 up to fp noise
        np.clip(c, -0.5, 0.5, out=c)
        maps.append(c)
        masks.append(mask)
    return CorrectionMap(c_u=maps[0], c_v=maps[1], mask_u=masks[0], mask_v=masks[1]).validate()


def apply_correction(phase: WrappedPhaseMaps, corr: CorrectionMap) -> WrappedPhaseMaps:
    """Subtract the dense correction where supported; identity elsewhere."""
    if corr.c_u.shape != phase.phase_u.shape:
        raise UnwrapError("correction/phase dimension mismatch")
    on_u = corr.mask_u & (phase.mask > 0)
    on_v = corr.mask_v & (phase.mask > 0)
    pu = phase.phase_u.copy()
    pv = phase.phase_v.copy()
    pu[on_u] = wrap01(pu[on_u] - corr.c_u[on_u])
    pv[on_v] = wrap01(pv[on_v] - corr.c_v[on_v])
    return WrappedPhaseMaps(phase_u=pu, phase_v=pv, mask=phase.mask.copy()).validate()


def refine_phase(graph: DetectedGraph, image, phase: WrappedPhaseMaps, sigma_g=None,
                 w_min=1e-3, smooth=0.05):
    """Full line-anchored refinement: curves -> corrections -> corrected phase.

    Degenerate inputs (no usable samples) leave the phase untouched.
    """
    if len(graph.edges) == 0:
        return phase, None
    curves = fit_line_curves(graph, image, smooth=smooth)
    samples = sample_corrections(curves, phase)
    if len(samples.c) == 0:
        return phase, None
    if sigma_g is None:
        sigma_g = default_sigma_g(graph)
    corr = densify_correction(samples, phase.mask.shape, sigma_g, w_min=w_min)
    return apply_correction(phase, corr), corr


# ---------------------------------------------------------------------------
# unwrapping


def unwrap(phase: WrappedPhaseMaps, labeling: Labeling, graph: DetectedGraph,
           pattern: GridPattern, min_mask=0.5, consensus=True,
           margin_cells=0.5) -> CorrespondenceMap:
    """Dense absolute projector coordinates from labeled node anchors.

    Every labeled node seeds its cell index; integer cell counts then
    propagate along the wrapped-phase continuity. Pixels left unreached,
    carrying half-cell jumps against a 4-neighbor, or mapping outside the
    line-bracketed pattern area (``margin_cells`` of the boundary cells
    lack a second carrier line) are masked as ambiguous.
    """
    if len(labeling.labels) != graph.num_nodes:
        raise UnwrapError("labeling length does not match the graph")
    h, w = phase.mask.shape
    valid_in = phase.mask > min_mask
    pu = phase.phase_u.astype(np.float64)
    pv = phase.phase_v.astype(np.float64)

    # a label anchors the fill only when at least one labeled neighbor
    # agrees with it on the pattern (isolated nodes still anchor: a region
    # without any seed would stay unreachable)
    table = adjacency(pattern).table
    labels = labeling.labels

    def seed_ok(v, label):
        labeled_nb = [(u, d) for u, d in graph.neighbors(v) if labels[u] >= 0]
        if not labeled_nb:
            return True
        return any(table[label, d] == labels[u] for u, d in labeled_nb)

    seeds = []
    for idx, node in enumerate(graph.nodes):
        label = int(labeling.labels[idx])
        if label < 0 or not seed_ok(idx, label):
            continue
        px = int(round(node.x))
        py = int(round(node.y))
        if not (0 <= px < w and 0 <= py < h) or not valid_in[py, px]:
            continue
        i, j = pattern.node_ij(label)
        ku = int(round(j + circ_signed(pu[py, px]) - pu[py, px]))
        kv = int(round(i + circ_signed(pv[py, px]) - pv[py, px]))
        seeds.append((py, px, ku, kv))
    if not seeds:
        return CorrespondenceMap(
            u=np.zeros((h, w)), v=np.zeros((h, w)), valid=np.zeros((h, w), dtype=bool)
        )
    seeds = np.asarray(seeds, dtype=np.int64)

    def run(seed_rows):
        k_u, vis_u = kernels.phase_bfs(pu, valid_in, seed_rows[:, 0], seed_rows[:, 1],
                                       seed_rows[:, 2].astype(np.int32))
        k_v, vis_v = kernels.phase_bfs(pv, valid_in, seed_rows[:, 0], seed_rows[:, 1],
                                       seed_rows[:, 3].astype(np.int32))
        return k_u, k_v, vis_u & vis_v

    k_u, k_v, vis = run(seeds)
    if consensus and len(seeds) > 2:
        # drop seeds whose anchors lost the flood fill to a conflicting cell
        phi_u = k_u + pu
        phi_v = k_v + pv
        res_u = np.abs(phi_u[seeds[:, 0], seeds[:, 1]] - (seeds[:, 2] + pu[seeds[:, 0], seeds[:, 1]]))
        res_v = np.abs(phi_v[seeds[:, 0], seeds[:, 1]] - (seeds[:, 3] + pv[seeds[:, 0], seeds[:, 1]]))
        ok = (res_u < 0.5) & (res_v < 0.5)
        if (~ok).any() and ok.sum() >= 1:
            k_u, k_v, vis = run(seeds[ok])

    phi_u = np.where(vis, k_u + pu, 0.0)
    phi_v = np.where(vis, k_v + pv, 0.0)
    u_map = phi_u * pattern.period_u
    v_map = phi_v * pattern.period_v

    valid = vis.copy()
    wp, hp = pattern.resolution
    mu = margin_cells * pattern.period_u
    mv = margin_cells * pattern.period_v
    valid &= (u_map >= -0.5 + mu) & (u_map < wp - 0.5 - mu)
    valid &= (v_map >= -0.5 + mv) & (v_map < hp - 0.5 - mv)

    # half-cell continuity audit across 4-neighbors
    for phi in (phi_u, phi_v):
        jump_x = np.abs(np.diff(phi, axis=1)) >= 0.5
        both_x = vis[:, 1:] & vis[:, :-1] & jump_x
        valid[:, 1:][both_x] = False
        valid[:, :-1][both_x] = False
        jump_y = np.abs(np.diff(phi, axis=0)) >= 0.5
        both_y = vis[1:, :] & vis[:-1, :] & jump_y
        valid[1:, :][both_y] = False
        valid[:-1, :][both_y] = False

    return CorrespondenceMap(u=u_map, v=v_map, valid=valid)
