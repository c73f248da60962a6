"""Coded grid projection pattern: lattice, per-node code classes, raster.

A pattern is a ``rows x cols`` lattice of nodes. Node ``(i, j)`` has the
integer ID ``i * cols + j`` and sits at projector pixel
``(j * period_u, i * period_v)``. Grid lines run midway between adjacent
nodes, so along either axis the pattern repeats with its period and the
fractional position inside a cell ("phase", in [0, 1)) is 0 at nodes and
0.5 on lines. Each node carries one of five code classes rendered as a
small glyph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUM_CODES = 5

# direction encoding shared across the package
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
DIRECTION_NAMES = ("up", "down", "left", "right")
OPPOSITE = (DOWN, UP, RIGHT, LEFT)
DIRECTION_IDS = {name: d for d, name in enumerate(DIRECTION_NAMES)}


class PatternConfigError(ValueError):
    """Pattern parameters violate the lattice/resolution constraints."""


def wrap01(values):
    """Wrap to [0, 1); guards the float edge case where mod returns 1.0."""
    out = np.mod(np.asarray(values, dtype=np.float64), 1.0)
    if np.ndim(out) == 0:
        return 0.0 if out >= 1.0 else float(out)
    out[out >= 1.0] = 0.0
    return out


def circ_signed(values):
    """Reduce a cyclic quantity to the signed half-cell range (-0.5, 0.5]."""
    v = np.asarray(values, dtype=np.float64)
    return v - np.ceil(v - 0.5)


@dataclass(frozen=True)
class GridPattern:
    rows: int
    cols: int
    period_u: int
    period_v: int
    codes: np.ndarray  # (rows, cols) uint8, values 0..4
    resolution: tuple[int, int]  # projector (width, height) in px

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise PatternConfigError("rows and cols must be >= 1")
        if self.period_u < 4 or self.period_v < 4:
            raise PatternConfigError("periods must be >= 4 px")
        w, h = self.resolution
        if self.cols * self.period_u > w or self.rows * self.period_v > h:
            raise PatternConfigError(
                f"lattice {self.cols}x{self.period_u} x {self.rows}x{self.period_v} "
                f"exceeds resolution {w}x{h}"
            )
        codes = np.asarray(self.codes, dtype=np.uint8)
        if codes.shape != (self.rows, self.cols):
            raise PatternConfigError("codes array must have shape (rows, cols)")
        if codes.max(initial=0) >= NUM_CODES:
            raise PatternConfigError("codes must be in 0..4")
        object.__setattr__(self, "codes", codes)

    @property
    def num_nodes(self) -> int:
        return self.rows * self.cols

    def node_id(self, i, j):
        return np.asarray(i) * self.cols + np.asarray(j)

    def node_ij(self, node_id):
        node_id = np.asarray(node_id)
        return node_id // self.cols, node_id % self.cols

    def node_uv(self, node_id):
        """Projector-pixel position of a node (phase-0 point of its cell)."""
        i, j = self.node_ij(node_id)
        return j * float(self.period_u), i * float(self.period_v)

    def code_of(self, node_id):
        i, j = self.node_ij(node_id)
        return self.codes[i, j]


@dataclass(frozen=True)
class PatternAdjacency:
    """Per-node neighbor IDs, ``table[n, d]`` with d in (UP, DOWN, LEFT, RIGHT); -1 at the boundary."""

    table: np.ndarray  # (num_nodes, 4) int32

    def neighbor(self, node_id: int, direction: int) -> int:
        return int(self.table[node_id, direction])


def generate_pattern(rows, cols, period_u, period_v, code_seed, resolution=None) -> GridPattern:
    """Build a pattern with per-row rejection-sampled codes.

    Codes are uniform over the five classes subject to no two horizontally
    adjacent nodes sharing a code. Deterministic for a fixed seed.
    """
    if resolution is None:
        resolution = (int(cols) * int(period_u), int(rows) * int(period_v))
    rng = np.random.default_rng(code_seed)
    codes = np.empty((rows, cols), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            code = int(rng.integers(0, NUM_CODES))
            while j > 0 and code == codes[i, j - 1]:
                code = int(rng.integers(0, NUM_CODES))
            codes[i, j] = code
    return GridPattern(
        rows=int(rows),
        cols=int(cols),
        period_u=int(period_u),
        period_v=int(period_v),
        codes=codes,
        resolution=(int(resolution[0]), int(resolution[1])),
    )


def adjacency(pattern: GridPattern) -> PatternAdjacency:
    n = pattern.num_nodes
    ids = np.arange(n, dtype=np.int32)
    i, j = pattern.node_ij(ids)
    table = np.full((n, 4), -1, dtype=np.int32)
    table[i > 0, UP] = ids[i > 0] - pattern.cols
    table[i < pattern.rows - 1, DOWN] = ids[i < pattern.rows - 1] + pattern.cols
    table[j > 0, LEFT] = ids[j > 0] - 1
    table[j < pattern.cols - 1, RIGHT] = ids[j < pattern.cols - 1] + 1
    return PatternAdjacency(table=table)


def _glyph_mask(code, dx, dy, r):
    """Boolean glyph footprint on local offsets (dx, dy) for a glyph of radius r."""
    if code == 0:  # filled dot
        return dx * dx + dy * dy <= r * r
    if code == 1:  # hollow dot
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if code == 2:  # cross
        hw = 0.33 * r
        return ((np.abs(dx) <= hw) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= hw) & (np.abs(dx) <= r)
        )
    if code == 3:  # bar tilted left-to-right rising ('/')
        s = np.sqrt(2.0)
        return (np.abs(dx + dy) / s <= 0.33 * r) & (np.abs(dx - dy) / s <= r)
    if code == 4:  # bar tilted left-to-right falling ('\\')
        s = np.sqrt(2.0)
        return (np.abs(dx - dy) / s <= 0.33 * r) & (np.abs(dx + dy) / s <= r)
    raise PatternConfigError(f"unknown code {code}")


def default_glyph_radius(pattern: GridPattern) -> float:
    return 0.19 * min(pattern.period_u, pattern.period_v)


def glyph_patch(code, radius, supersample=4):
    """Render one glyph alone into a float patch in [0, 1], odd side length."""
    half = int(np.ceil(radius)) + 1
    side = 2 * half + 1
    s = supersample
    coords = (np.arange(side * s) + 0.5) / s - 0.5 - half
    dx, dy = np.meshgrid(coords, coords)
    mask = _glyph_mask(code, dx, dy, radius)
    return mask.reshape(side, s, side, s).mean(axis=(1, 3)).astype(np.float64)


def rasterize_pattern(pattern: GridPattern, supersample=4, line_width=3.0, glyph_radius=None):
    """Rasterize to an 8-bit grayscale projector image.

    Background 0, fully covered foreground 255; shape edges get partial
    coverage from ``supersample x supersample`` box filtering so glyph
    centroids and line centers land on the lattice geometry subpixel-
    accurately.
    """
    w, h = pattern.resolution
    s = int(supersample)
    if glyph_radius is None:
        glyph_radius = default_glyph_radius(pattern)
    canvas = np.zeros((h * s, w * s), dtype=bool)
    xs = (np.arange(w * s) + 0.5) / s - 0.5
    ys = (np.arange(h * s) + 0.5) / s - 0.5

    pu, pv = pattern.period_u, pattern.period_v
    # lattice extent plus half a cell so boundary nodes keep their anchors
    v_lo, v_hi = -0.5 * pv, (pattern.rows - 1) * pv + 0.5 * pv
    u_lo, u_hi = -0.5 * pu, (pattern.cols - 1) * pu + 0.5 * pu
    row_in = (ys >= v_lo) & (ys <= v_hi)
    col_in = (xs >= u_lo) & (xs <= u_hi)

    # interior lines between node pairs plus the two half-cell boundary lines,
    # so every cell of the lattice is bracketed by carriers
    for j in range(-1, pattern.cols):
        uc = (j + 0.5) * pu
        cols_hit = np.abs(xs - uc) <= line_width / 2.0
        canvas[np.ix_(row_in, cols_hit)] = True
    for i in range(-1, pattern.rows):
        vc = (i + 0.5) * pv
        rows_hit = np.abs(ys - vc) <= line_width / 2.0
        canvas[np.ix_(rows_hit, col_in)] = True

    half = glyph_radius + 1.0
    for i in range(pattern.rows):
        cv = i * pv
        y0 = max(0, int(np.floor((cv - half + 0.5) * s)))
        y1 = min(h * s, int(np.ceil((cv + half + 0.5) * s)))
        for j in range(pattern.cols):
            cu = j * pu
            x0 = max(0, int(np.floor((cu - half + 0.5) * s)))
            x1 = min(w * s, int(np.ceil((cu + half + 0.5) * s)))
            if x0 >= x1 or y0 >= y1:
                continue
            dx = xs[x0:x1] - cu
            dy = ys[y0:y1] - cv
            gx, gy = np.meshgrid(dx, dy)
            mask = _glyph_mask(int(pattern.codes[i, j]), gx, gy, glyph_radius)
            canvas[y0:y1, x0:x1] |= mask

    coverage = canvas.reshape(h, s, w, s).mean(axis=(1, 3))
    return np.round(coverage * 255.0).astype(np.uint8)


def pattern_to_json(pattern: GridPattern) -> dict:
    return {
        "rows": pattern.rows,
        "cols": pattern.cols,
        "period_u": pattern.period_u,
        "period_v": pattern.period_v,
        "resolution": list(pattern.resolution),
        "codes": pattern.codes.flatten().tolist(),
    }


def pattern_from_json(obj: dict) -> GridPattern:
    codes = np.asarray(obj["codes"], dtype=np.uint8).reshape(obj["rows"], obj["cols"])
    return GridPattern(
        rows=int(obj["rows"]),
        cols=int(obj["cols"]),
        period_u=int(obj["period_u"]),
        period_v=int(obj["period_v"]),
        codes=codes,
        resolution=(int(obj["resolution"][0]), int(obj["resolution"][1])),
    )
