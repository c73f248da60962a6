"""Image-side grid graph and wrapped phase extraction.

The learned front end of the measurement system (per-pixel phase network
and graph-net node identification) is replaced by classical machinery
with the same outputs:

* nodes via glyph-matched filtering at the estimated camera-side period,
  with subpixel peaks, observed code classes and 4-neighbor edges;
* per-node ranked candidate pattern IDs from code compatibility plus
  proximity to the epipolar locus at a nominal depth;
* wrapped phase via complex quadrature demodulation at the carrier
  frequency of the grid lines (which sit at cell phase 0.5).

Externally computed phase/candidate files can be ingested instead, so
real network outputs slot into the rest of the pipeline unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from . import pattern as pat
from .gridio import read_grid, read_json, write_grid, write_json
from .pattern import (
    DIRECTION_IDS,
    DIRECTION_NAMES,
    OPPOSITE,
    GridPattern,
    circ_signed,
    wrap01,
)
from .simulator import PinholeModel, SceneCapture, project_pattern_nodes


class DetectionError(RuntimeError):
    pass


class PeriodEstimationError(DetectionError):
    """Carrier period could not be recovered; pass an explicit period."""


class ExternalDataError(ValueError):
    """Ingested phase/candidate files violate the documented format."""


# ---------------------------------------------------------------------------
# types


@dataclass
class GraphNode:
    x: float
    y: float
    code: int = -1  # -1 = unknown
    candidate_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    candidate_probs: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))

    def __post_init__(self):
        self.candidate_ids = np.asarray(self.candidate_ids, dtype=np.int64)
        self.candidate_probs = np.asarray(self.candidate_probs, dtype=np.float64)


@dataclass
class DetectedGraph:
    nodes: list
    edges: np.ndarray  # (E, 3) int32 rows (src, dst, direction)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int32).reshape(-1, 3)
        self._neighbor_cache = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self, v: int):
        """List of (other_node_index, direction) for node v."""
        if self._neighbor_cache is None:
            cache = [[] for _ in range(self.num_nodes)]
            for src, dst, d in self.edges:
                cache[src].append((int(dst), int(d)))
            self._neighbor_cache = cache
        return self._neighbor_cache[v]

    def validate(self, num_pattern_nodes=None):
        for i, node in enumerate(self.nodes):
            ids = node.candidate_ids
            probs = node.candidate_probs
            if ids.shape != probs.shape:
                raise ExternalDataError(f"node {i}: candidate id/prob length mismatch")
            if len(probs):
                if probs.min() <= 0.0 or probs.max() > 1.0:
                    raise ExternalDataError(f"node {i}: candidate probs must be in (0, 1]")
                if np.any(np.diff(probs) > 1e-12):
                    raise ExternalDataError(f"node {i}: candidate probs not sorted descending")
                if probs.sum() > 1.0 + 1e-9:
                    raise ExternalDataError(f"node {i}: candidate probs sum to {probs.sum():.6f} > 1")
                if ids.min() < 0:
                    raise ExternalDataError(f"node {i}: negative candidate id")
                if num_pattern_nodes is not None and ids.max() >= num_pattern_nodes:
                    bad = int(ids.max())
                    raise ExternalDataError(
                        f"node {i}: candidate id {bad} outside pattern (max {num_pattern_nodes - 1})"
                    )
            if not (-1 <= node.code < pat.NUM_CODES):
                raise ExternalDataError(f"node {i}: code {node.code} not in -1..4")
        n = self.num_nodes
        seen = set()
        for src, dst, d in self.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise ExternalDataError(f"edge ({src},{dst}): node index out of range")
            if not (0 <= d < 4):
                raise ExternalDataError(f"edge ({src},{dst}): bad direction {d}")
            seen.add((int(src), int(dst), int(d)))
        for src, dst, d in seen:
            if (dst, src, OPPOSITE[d]) not in seen:
                raise ExternalDataError(
                    f"edge ({src}->{dst},{DIRECTION_NAMES[d]}) lacks its mirror"
                )
        return self


@dataclass
class WrappedPhaseMaps:
    phase_u: np.ndarray  # (H, W) in [0, 1)
    phase_v: np.ndarray  # (H, W) in [0, 1)
    mask: np.ndarray  # (H, W) confidence in [0, 1]

    def validate(self):
        if self.phase_u.shape != self.phase_v.shape or self.phase_u.shape != self.mask.shape:
            raise ExternalDataError("phase/mask dimensions differ")
        for name, ph in (("phase_u", self.phase_u), ("phase_v", self.phase_v)):
            if not np.isfinite(ph).all():
                y, x = np.argwhere(~np.isfinite(ph))[0]
                raise ExternalDataError(f"{name}: non-finite value at pixel ({x}, {y})")
            if ph.min() < 0.0 or ph.max() >= 1.0:
                y, x = np.argwhere((ph < 0) | (ph >= 1.0))[0]
                raise ExternalDataError(f"{name}: value outside [0, 1) at pixel ({x}, {y})")
        if self.mask.min() < 0.0 or self.mask.max() > 1.0:
            raise ExternalDataError("mask values must lie in [0, 1]")
        return self


@dataclass(frozen=True)
class EpipolarPrior:
    """Calibration context for ranking candidate pattern nodes."""

    camera: PinholeModel
    projector: PinholeModel
    nominal_depth: float
    along_relax: float = 3.0  # how much looser the along-line depth prior is


@dataclass
class DetectorParams:
    top_k: int = 5
    response_rel_threshold: float = 0.35
    min_separation_factor: float = 0.55
    sigma_carrier_factor: float = 0.5  # Gabor sigma along the phase axis, x period
    sigma_cross_factor: float = 1.0  # Gabor sigma across it, x period
    mask_floor: float = 0.02
    mask_scale: float = 0.10
    epipolar_sigma_factor: float = 1.5  # x pattern period (projector px)
    position_prior_sigma: float = 0.15  # normalized units, no-calibration fallback
    normalize: bool = False  # optional local min-max pre-normalization
    period_hint: tuple | None = None  # (period_u_cam, period_v_cam)
    edge_tolerance: float = 0.45  # x period, neighbor search window
    node_phase_gate: float = 0.22  # max |cell phase| at a node peak; <= 0 disables
    template_blur: float = 0.7  # px, matches resampling blur of the render
    code_mismatch_penalty: float = 0.15  # score multiplier for other-code nodes
    adaptive_passes: int = 1  # extra demodulation passes with a tracked carrier
    adaptive_sigma_factor: float = 0.65  # window of the adaptive passes, x period
    frame_margin_factor: float = 0.6  # x period; mask zeroed this close to the frame


# ---------------------------------------------------------------------------
# period and phase estimation


def _local_minmax_normalize(img, size=31):
    lo = ndimage.grey_erosion(img, size=(size, size))
    hi = ndimage.grey_dilation(img, size=(size, size))
    lo = ndimage.gaussian_filter(lo, 7.0)
    hi = ndimage.gaussian_filter(hi, 7.0)
    return np.clip((img - lo) / np.maximum(hi - lo, 1e-6), 0.0, 1.5)


def estimate_period(image, period_band=(6.0, 80.0), min_significance=0.08,
                    half_lag_ratio=0.6):
    """Repeat length along each axis from the mean row/column autocorrelation.

    The glyph/line alternation of this pattern family puts glyphs half a
    cell away from the lines, which makes the half-period lag a strong
    spurious autocorrelation peak; whenever doubling the best lag keeps a
    comparable correlation (>= ``half_lag_ratio`` of it), the doubled lag
    is taken as the cell period.
    """
    img = np.asarray(image, dtype=np.float64)
    out = []
    for axis in (1, 0):
        sig = img - img.mean(axis=axis, keepdims=True)
        if axis == 0:
            sig = sig.T
        n = sig.shape[1]
        lag_hi = int(min(period_band[1], n // 2 - 2))
        lag_lo = int(max(2, period_band[0]))
        if lag_hi <= 2 * lag_lo:
            raise PeriodEstimationError("image too small for the period search band")
        spec = np.abs(np.fft.rfft(sig, n=2 * n, axis=1)) ** 2
        ac = np.fft.irfft(spec, axis=1)[:, :n].mean(axis=0)
        if ac[0] <= 1e-12:
            raise PeriodEstimationError(
                "no carrier found (flat image); pass the expected period explicitly"
            )
        ac = ac / ac[0]
        band = ac[lag_lo : lag_hi + 1]
        lag = lag_lo + int(np.argmax(band))
        if ac[lag] < min_significance:
            raise PeriodEstimationError(
                "no dominant carrier found; pass the expected period explicitly"
            )
        while 2 * lag <= lag_hi:
            window = ac[max(2 * lag - 2, 0) : 2 * lag + 3]
            cand = 2 * lag - 2 + int(np.argmax(window))
            if ac[cand] >= half_lag_ratio * ac[lag]:
                lag = cand
            else:
                break
        # parabolic subsample refinement around the chosen lag
        denom = ac[lag - 1] - 2 * ac[lag] + ac[lag + 1]
        dk = 0.5 * (ac[lag - 1] - ac[lag + 1]) / denom if abs(denom) > 1e-12 else 0.0
        out.append(lag + float(np.clip(dk, -0.5, 0.5)))
    return out[0], out[1]  # (period_u, period_v) in camera px


def expected_periods_from_rig(camera: PinholeModel, projector: PinholeModel,
                              pattern: GridPattern, depth: float):
    """Camera-side cell periods at the frame center for a frontal plane at ``depth``.

    Numerical: walk one pattern period in the projector image, intersect
    the z = depth plane, and measure the camera-pixel displacement.
    """
    center_px = np.array([(camera.width - 1) / 2.0, (camera.height - 1) / 2.0])
    d = camera.ray_through(center_px[:1] * 0 + center_px[0], center_px[1:] * 0 + center_px[1])
    d = np.atleast_2d(d)[0]
    point = camera.center + depth / d[2] * d if abs(d[2]) > 1e-12 else camera.center + depth * d
    u0, v0, _ = projector.project(point[None, :])
    base = np.array([u0[0], v0[0]])
    out = []
    for step in (np.array([pattern.period_u, 0.0]), np.array([0.0, pattern.period_v])):
        uv = np.stack([base, base + step])
        rays = projector.ray_through(uv[:, 0], uv[:, 1])
        tz = (depth - projector.center[2]) / rays[:, 2]
        pts = projector.center[None, :] + tz[:, None] * rays
        x, y, _ = camera.project(pts)
        out.append(float(np.hypot(x[1] - x[0], y[1] - y[0])))
    return out[0], out[1]


def _quadrature(img, period, axis, sigma_carrier, sigma_cross):
    n = img.shape[1] if axis == 1 else img.shape[0]
    ramp = np.arange(n, dtype=np.float64) / period
    carrier = np.exp(-2j * np.pi * ramp)
    mixed = img * (carrier[None, :] if axis == 1 else carrier[:, None])
    sig = (sigma_cross, sigma_carrier) if axis == 1 else (sigma_carrier, sigma_cross)
    # zero padding (not reflection) so the response amplitude decays where
    # the carrier runs out of support instead of aliasing a mirrored one
    resp = ndimage.gaussian_filter(mixed.real, sig, mode="constant") + 1j * (
        ndimage.gaussian_filter(mixed.imag, sig, mode="constant")
    )
    return resp, ramp


def resolve_periods(image, params: DetectorParams, calib: EpipolarPrior | None = None,
                    pattern: GridPattern | None = None, period=None):
    """Camera-side periods: explicit > hint > calibration-derived > autocorrelation."""
    if period is not None:
        return float(period[0]), float(period[1])
    if params.period_hint is not None:
        return float(params.period_hint[0]), float(params.period_hint[1])
    if calib is not None and pattern is not None:
        return expected_periods_from_rig(calib.camera, calib.projector, pattern,
                                         calib.nominal_depth)
    return estimate_period(image)


def _adaptive_repass(ac, phase, period, axis, sigma_carrier, sigma_cross):
    """Re-demodulate against a carrier ramp tracked from a previous pass.

    The tracked ramp follows the local instantaneous frequency, which
    removes the detuning bias a fixed carrier picks up under perspective
    chirp.
    """
    freq = circ_signed(np.diff(phase, axis=axis))
    freq = np.concatenate(
        [freq, freq[:, -1:]] if axis == 1 else [freq, freq[-1:, :]], axis=axis
    )
    freq = ndimage.gaussian_filter(freq, 2.0 * period, mode="nearest")
    freq = np.clip(freq, 1.0 / 90.0, 1.0 / 5.0)
    ramp = np.cumsum(freq, axis=axis) - freq  # starts at 0 per row/column
    mixed = ac * np.exp(-2j * np.pi * ramp)
    sig = (sigma_cross, sigma_carrier) if axis == 1 else (sigma_carrier, sigma_cross)
    resp = ndimage.gaussian_filter(mixed.real, sig, mode="constant") + 1j * (
        ndimage.gaussian_filter(mixed.imag, sig, mode="constant")
    )
    return resp, wrap01(np.angle(resp) / (2 * np.pi) + ramp + 0.5)


def estimate_wrapped_phase(image, period=None, params: DetectorParams | None = None,
                           calib: EpipolarPrior | None = None,
                           pattern: GridPattern | None = None):
    """Per-pixel wrapped phase in both directions with a confidence mask.

    Grid lines are the carrier: they sit at cell phase 0.5, so the
    demodulated angle maps back to the node-origin phase convention with
    a half-cycle shift.
    """
    params = params or DetectorParams()
    img = np.asarray(image, dtype=np.float64) / 255.0
    if params.normalize:
        img = _local_minmax_normalize(img)
    pu, pv = resolve_periods(img, params, calib, pattern, period)

    su, sv = params.sigma_carrier_factor * pu, params.sigma_cross_factor * pv
    local_mean = ndimage.gaussian_filter(img, (sv, su))
    ac = img - local_mean
    resp_u, ramp_u = _quadrature(ac, pu, 1, su, sv)
    phase_u = wrap01(np.angle(resp_u) / (2 * np.pi) + ramp_u[None, :] + 0.5)

    su2, sv2 = params.sigma_carrier_factor * pv, params.sigma_cross_factor * pu
    local_mean_v = ndimage.gaussian_filter(img, (su2, sv2))
    ac_v = img - local_mean_v
    resp_v, ramp_v = _quadrature(ac_v, pv, 0, su2, sv2)
    phase_v = wrap01(np.angle(resp_v) / (2 * np.pi) + ramp_v[:, None] + 0.5)

    sa_u = params.adaptive_sigma_factor * pu
    sa_v = params.adaptive_sigma_factor * pv
    for _ in range(max(params.adaptive_passes, 0)):
        resp_u, phase_u = _adaptive_repass(ac, phase_u, pu, 1, sa_u, sv)
        resp_v, phase_v = _adaptive_repass(ac_v, phase_v, pv, 0, sa_v, sv2)

    bright = ndimage.gaussian_filter(img, (sv, su)) + 1e-6
    raw = np.minimum(np.abs(resp_u), np.abs(resp_v)) / bright
    conf = np.where(raw < params.mask_floor, 0.0, np.minimum(raw / params.mask_scale, 1.0))
    frame = int(np.ceil(params.frame_margin_factor * max(pu, pv)))
    if frame > 0:  # filter support is one-sided against the frame: unmeasurable
        conf[:frame, :] = 0.0
        conf[-frame:, :] = 0.0
        conf[:, :frame] = 0.0
        conf[:, -frame:] = 0.0
    maps = WrappedPhaseMaps(
        phase_u=phase_u.astype(np.float64),
        phase_v=phase_v.astype(np.float64),
        mask=conf.astype(np.float64),
    )
    return maps.validate()


# ---------------------------------------------------------------------------
# node detection


def _subpixel_peak(resp, y, x):
    h, w = resp.shape
    dx = dy = 0.0
    if 0 < x < w - 1:
        denom = resp[y, x - 1] - 2 * resp[y, x] + resp[y, x + 1]
        if abs(denom) > 1e-12:
            dx = float(np.clip(0.5 * (resp[y, x - 1] - resp[y, x + 1]) / denom, -0.5, 0.5))
    if 0 < y < h - 1:
        denom = resp[y - 1, x] - 2 * resp[y, x] + resp[y + 1, x]
        if abs(denom) > 1e-12:
            dy = float(np.clip(0.5 * (resp[y - 1, x] - resp[y + 1, x]) / denom, -0.5, 0.5))
    return x + dx, y + dy


def _epipolar_scores(prior: EpipolarPrior, x, y, node_uv):
    """Gaussian score of each pattern node around the epipolar locus of (x, y)."""
    z0 = prior.nominal_depth
    d = prior.camera.ray_through(np.array([x]), np.array([y]))[0]
    p_near = prior.camera.center + (0.75 * z0) * d
    p_nom = prior.camera.center + z0 * d
    p_far = prior.camera.center + (1.5 * z0) * d
    pts = np.stack([p_near, p_nom, p_far])
    us, vs, zs = prior.projector.project(pts)
    e0 = np.array([us[1], vs[1]])
    line = np.array([us[2] - us[0], vs[2] - vs[0]])
    norm = np.linalg.norm(line)
    if norm < 1e-9 or not np.all(zs > 0):
        return None
    line = line / norm
    delta = node_uv - e0[None, :]
    along = delta @ line
    perp = delta - along[:, None] * line[None, :]
    return along, np.linalg.norm(perp, axis=1)


def _candidates_for_node(node_x, node_y, code, pattern, prior, params, node_uv, node_codes):
    n = pattern.num_nodes
    sigma = params.epipolar_sigma_factor * pattern.period_u
    res = _epipolar_scores(prior, node_x, node_y, node_uv) if prior is not None else None
    if res is not None:
        along, perp = res
        relax = max(prior.along_relax, 1.0)
        d2 = (perp**2 + (along / relax) ** 2) / (2.0 * sigma**2)
    else:
        # no calibration: crude normalized-position prior (plumbing fallback)
        i, j = pattern.node_ij(np.arange(n))
        jn = j / max(pattern.cols - 1, 1)
        inn = i / max(pattern.rows - 1, 1)
        d2 = ((jn - node_x) ** 2 + (inn - node_y) ** 2) / (
            2.0 * params.position_prior_sigma**2
        )
    scores = np.exp(-d2)
    if code >= 0:
        scores = scores * np.where(node_codes == code, 1.0, params.code_mismatch_penalty)
    k = min(params.top_k, n)
    order = np.argsort(-scores, kind="stable")[:k]
    ids = order.astype(np.int64)
    probs = scores[order]
    total = probs.sum()
    probs = probs / total if total > 1e-300 else np.full(k, 1.0 / k)
    probs = np.minimum(probs, 1.0)
    return ids, probs


def detect_graph(image, pattern: GridPattern, calib: EpipolarPrior | None = None,
                 params: DetectorParams | None = None) -> DetectedGraph:
    """Glyph-matched node detection plus 4-neighbor edge tracing.

    Returns an empty graph when no node response clears the threshold.
    """
    params = params or DetectorParams()
    img = np.asarray(image, dtype=np.float64) / 255.0
    if params.normalize:
        img = _local_minmax_normalize(img)
    try:
        pu, pv = resolve_periods(img, params, calib, pattern)
    except PeriodEstimationError:
        return DetectedGraph(nodes=[], edges=np.empty((0, 3), np.int32))

    mag = 0.5 * (pu / pattern.period_u + pv / pattern.period_v)
    radius = pat.default_glyph_radius(pattern) * mag
    responses = []
    for code in range(pat.NUM_CODES):
        tpl = pat.glyph_patch(code, radius)
        tpl = ndimage.gaussian_filter(tpl, params.template_blur)  # model imaging blur
        tpl = tpl - tpl.mean()
        tpl /= max(np.linalg.norm(tpl), 1e-12)
        responses.append(signal.fftconvolve(img, tpl[::-1, ::-1], mode="same"))
    responses = np.stack(responses)
    combined = responses.max(axis=0)

    sep = max(3, int(round(params.min_separation_factor * min(pu, pv))))
    if sep % 2 == 0:
        sep += 1
    local_max = combined == ndimage.maximum_filter(combined, size=sep)
    peak_floor = params.response_rel_threshold * combined.max()
    if combined.max() <= 1e-9:
        return DetectedGraph(nodes=[], edges=np.empty((0, 3), np.int32))
    keep = local_max & (combined > peak_floor)
    if params.node_phase_gate > 0:
        # nodes sit at cell phase (0, 0); line crossings at (0.5, 0.5) and
        # line midpoints at (0, 0.5)/(0.5, 0) are rejected by the gate
        maps = estimate_wrapped_phase(image, period=(pu, pv), params=params)
        near_zero = (
            (np.abs(circ_signed(maps.phase_u)) <= params.node_phase_gate)
            & (np.abs(circ_signed(maps.phase_v)) <= params.node_phase_gate)
            & (maps.mask > 0.2)
        )
        keep &= near_zero
    ys, xs = np.nonzero(keep)

    node_uv = np.stack(pattern.node_uv(np.arange(pattern.num_nodes)), axis=1)
    node_codes = pattern.codes.reshape(-1)
    nodes = []
    h, w = img.shape
    norm_xy = calib is None
    for y, x in sorted(zip(ys, xs)):  # raster order for determinism
        sx, sy = _subpixel_peak(combined, y, x)
        code = int(np.argmax(responses[:, y, x]))
        qx = sx / max(w - 1, 1) if norm_xy else sx
        qy = sy / max(h - 1, 1) if norm_xy else sy
        ids, probs = _candidates_for_node(
            qx, qy, code, pattern, calib, params, node_uv, node_codes
        )
        nodes.append(GraphNode(x=float(sx), y=float(sy), code=code,
                               candidate_ids=ids, candidate_probs=probs))

    edges = _trace_edges(nodes, pu, pv, params.edge_tolerance)
    graph = DetectedGraph(nodes=nodes, edges=edges)
    return graph.validate(pattern.num_nodes)


def _trace_edges(nodes, pu, pv, tol):
    n = len(nodes)
    if n == 0:
        return np.empty((0, 3), np.int32)
    xy = np.array([[nd.x, nd.y] for nd in nodes])
    dxy = xy[None, :, :] - xy[:, None, :]  # dxy[a, b] = pos[b] - pos[a]
    expected = {
        pat.RIGHT: (pu, 0.0),
        pat.LEFT: (-pu, 0.0),
        pat.DOWN: (0.0, pv),
        pat.UP: (0.0, -pv),
    }
    choice = {}
    for d, (ex, ey) in expected.items():
        err = (dxy[:, :, 0] - ex) ** 2 + (dxy[:, :, 1] - ey) ** 2
        ok = (np.abs(dxy[:, :, 0] - ex) < tol * pu) & (np.abs(dxy[:, :, 1] - ey) < tol * pv)
        np.fill_diagonal(ok, False)
        err = np.where(ok, err, np.inf)
        best = np.argmin(err, axis=1)
        has = np.isfinite(err[np.arange(n), best])
        choice[d] = np.where(has, best, -1)
    rows = []
    for d in (pat.RIGHT, pat.DOWN):
        od = OPPOSITE[d]
        for a in range(n):
            b = choice[d][a]
            if b >= 0 and choice[od][b] == a:  # mutual
                rows.append((a, b, d))
                rows.append((b, a, od))
    if not rows:
        return np.empty((0, 3), np.int32)
    return np.asarray(rows, dtype=np.int32)


# ---------------------------------------------------------------------------
# candidate corruption (stress knob for the refinement stage)


def corrupt_candidates(graph: DetectedGraph, true_ids, q, rng, num_pattern_nodes,
                       exact=False) -> DetectedGraph:
    """Demote each node's true label below a random impostor.

    ``exact=True`` corrupts exactly round(q * n) nodes (sampled without
    replacement), which keeps baseline top-1 accuracy at 1 - q by
    construction; otherwise each node is corrupted with probability q.
    """
    n = graph.num_nodes
    if exact:
        count = int(round(q * n))
        victims = set(rng.choice(n, size=count, replace=False).tolist()) if count else set()
    else:
        victims = {i for i in range(n) if rng.random() < q}
    new_nodes = []
    for i, node in enumerate(graph.nodes):
        ids = node.candidate_ids.copy()
        probs = node.candidate_probs.copy()
        true_id = int(true_ids[i])
        if i in victims and true_id in ids:
            t_pos = int(np.nonzero(ids == true_id)[0][0])
            impostor = int(rng.integers(0, num_pattern_nodes))
            while impostor == true_id:
                impostor = int(rng.integers(0, num_pattern_nodes))
            boost = probs[t_pos] * 1.25
            if impostor in ids:
                probs[np.nonzero(ids == impostor)[0][0]] = boost
            else:
                ids = np.append(ids, impostor)
                probs = np.append(probs, boost)
            probs = probs / probs.sum()
        order = np.argsort(-probs, kind="stable")
        new_nodes.append(
            GraphNode(x=node.x, y=node.y, code=node.code,
                      candidate_ids=ids[order], candidate_probs=probs[order])
        )
    return DetectedGraph(nodes=new_nodes, edges=graph.edges.copy())


def synthetic_grid_instance(pattern: GridPattern, rows, cols, rng, n_candidates=5,
                            corrupt_q=0.0, corrupt_exact=True, near_miss_frac=0.5):
    """Fully connected rows x cols instance whose true labeling is a
    contiguous pattern block.

    Distractor candidates mix nearby pattern nodes (the typical confusion
    of a multi-resolution matcher) with uniform draws; ``corrupt_q``
    demotes true labels via :func:`corrupt_candidates`. Returns
    ``(graph, true_ids)``.
    """
    if rows > pattern.rows or cols > pattern.cols:
        raise ValueError("instance larger than the pattern lattice")
    i0 = int(rng.integers(0, pattern.rows - rows + 1))
    j0 = int(rng.integers(0, pattern.cols - cols + 1))
    nodes = []
    true_ids = []
    for i in range(rows):
        for j in range(cols):
            true = (i0 + i) * pattern.cols + (j0 + j)
            true_ids.append(true)
            k = int(rng.integers(2, n_candidates + 1))
            picks = {true}
            while len(picks) < k:
                if rng.random() < near_miss_frac:
                    cand = true + int(rng.choice([-1, 1, -pattern.cols, pattern.cols]))
                else:
                    cand = int(rng.integers(0, pattern.num_nodes))
                if 0 <= cand < pattern.num_nodes:
                    picks.add(cand)
            ids = np.array(sorted(picks), dtype=np.int64)
            raw = rng.uniform(0.2, 1.0, size=len(ids))
            raw[ids == true] = raw.max() * rng.uniform(1.2, 2.0)
            probs = raw / raw.sum()
            order = np.argsort(-probs, kind="stable")
            nodes.append(
                GraphNode(x=float(j), y=float(i), code=int(pattern.code_of(true)),
                          candidate_ids=ids[order], candidate_probs=probs[order])
            )
    rows_list = []
    for i in range(rows):
        for j in range(cols):
            v = i * cols + j
            if j + 1 < cols:
                rows_list += [(v, v + 1, pat.RIGHT), (v + 1, v, pat.LEFT)]
            if i + 1 < rows:
                rows_list += [(v, v + cols, pat.DOWN), (v + cols, v, pat.UP)]
    edges = np.asarray(rows_list, dtype=np.int32) if rows_list else np.empty((0, 3), np.int32)
    graph = DetectedGraph(nodes=nodes, edges=edges)
    true_ids = np.asarray(true_ids, dtype=np.int64)
    if corrupt_q > 0:
        graph = corrupt_candidates(graph, true_ids, corrupt_q, rng, pattern.num_nodes,
                                   exact=corrupt_exact)
    return graph, true_ids


# ---------------------------------------------------------------------------
# ground-truth stand-ins (what a trained front end would produce)


def truth_phase_maps(capture: SceneCapture) -> WrappedPhaseMaps:
    mask = capture.lit.astype(np.float64)
    return WrappedPhaseMaps(
        phase_u=capture.gt_phase_u.astype(np.float64),
        phase_v=capture.gt_phase_v.astype(np.float64),
        mask=mask,
    ).validate()


def truth_graph(scene, camera, projector, pattern: GridPattern, margin_px=6.0) -> DetectedGraph:
    """Graph of the visible lattice nodes with their true IDs (prob 1)."""
    xy, visible, _ = project_pattern_nodes(scene, camera, projector, pattern, margin_px)
    index_of = {}
    nodes = []
    for nid in np.nonzero(visible)[0]:
        index_of[int(nid)] = len(nodes)
        nodes.append(
            GraphNode(
                x=float(xy[nid, 0]),
                y=float(xy[nid, 1]),
                code=int(pattern.code_of(int(nid))),
                candidate_ids=np.array([nid], dtype=np.int64),
                candidate_probs=np.array([1.0]),
            )
        )
    adj = pat.adjacency(pattern)
    rows = []
    for nid, idx in index_of.items():
        for d in (pat.RIGHT, pat.DOWN):
            other = adj.neighbor(nid, d)
            if other >= 0 and other in index_of:
                rows.append((idx, index_of[other], d))
                rows.append((index_of[other], idx, OPPOSITE[d]))
    edges = np.asarray(rows, dtype=np.int32) if rows else np.empty((0, 3), np.int32)
    return DetectedGraph(nodes=nodes, edges=edges).validate(pattern.num_nodes)


# ---------------------------------------------------------------------------
# external file exchange


def write_phase_maps(maps: WrappedPhaseMaps, path_u, path_v, path_mask, meta=None):
    for path, ph in ((path_u, maps.phase_u), (path_v, maps.phase_v)):
        f32 = ph.astype(np.float32)
        f32[f32 >= 1.0] = 0.0  # float32 rounding can close the half-open range
        write_grid(path, f32, meta)
    write_grid(path_mask, maps.mask.astype(np.float32), meta)


def graph_to_json(graph: DetectedGraph) -> dict:
    return {
        "nodes": [
            {
                "x": node.x,
                "y": node.y,
                "code": int(node.code),
                "candidates": [
                    {"id": int(i), "prob": float(p)}
                    for i, p in zip(node.candidate_ids, node.candidate_probs)
                ],
            }
            for node in graph.nodes
        ],
        "edges": [
            [int(src), int(dst), DIRECTION_NAMES[d]] for src, dst, d in graph.edges
        ],
    }


def graph_from_json(obj: dict) -> DetectedGraph:
    try:
        nodes = []
        for k, nd in enumerate(obj["nodes"]):
            cand = nd.get("candidates", [])
            nodes.append(
                GraphNode(
                    x=float(nd["x"]),
                    y=float(nd["y"]),
                    code=int(nd.get("code", -1)),
                    candidate_ids=np.array([c["id"] for c in cand], dtype=np.int64),
                    candidate_probs=np.array([c["prob"] for c in cand], dtype=np.float64),
                )
            )
        edges = [
            (int(src), int(dst), DIRECTION_IDS[d] if isinstance(d, str) else int(d))
            for src, dst, d in obj.get("edges", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ExternalDataError(f"malformed graph JSON: {exc}") from exc
    arr = np.asarray(edges, dtype=np.int32) if edges else np.empty((0, 3), np.int32)
    return DetectedGraph(nodes=nodes, edges=arr)


def write_graph_json(graph: DetectedGraph, path):
    write_json(path, graph_to_json(graph))


def read_graph_json(path) -> DetectedGraph:
    return graph_from_json(read_json(path))


def ingest_external(path_phase_u, path_phase_v, path_mask, path_graph,
                    pattern: GridPattern):
    """Load and validate externally computed phase maps and candidates."""
    pu, _ = read_grid(path_phase_u)
    pv, _ = read_grid(path_phase_v)
    mask, _ = read_grid(path_mask)
    maps = WrappedPhaseMaps(
        phase_u=pu.astype(np.float64),
        phase_v=pv.astype(np.float64),
        mask=mask.astype(np.float64),
    )
    maps.validate()
    graph = read_graph_json(path_graph)
    graph.validate(pattern.num_nodes)
    return maps, graph
