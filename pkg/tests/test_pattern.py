import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridscan import pattern as pat


def test_single_node_pattern_is_degenerate_lattice():
    p = pat.generate_pattern(1, 1, 16, 16, code_seed=0)
    assert p.num_nodes == 1
    assert p.node_ij(0) == (0, 0)
    assert p.node_id(0, 0) == 0


def test_generation_is_deterministic():
    a = pat.generate_pattern(10, 10, 16, 16, code_seed=7)
    b = pat.generate_pattern(10, 10, 16, 16, code_seed=7)
    assert np.array_equal(a.codes, b.codes)
    assert np.array_equal(pat.rasterize_pattern(a), pat.rasterize_pattern(b))


def test_lattice_identity_and_neighbors():
    p = pat.generate_pattern(3, 4, 16, 16, code_seed=1)
    i, j = p.node_ij(6)
    assert (i, j) == (1, 2)
    adj = pat.adjacency(p)
    assert adj.neighbor(6, pat.RIGHT) == 7
    assert adj.neighbor(6, pat.DOWN) == 10


def test_no_horizontally_adjacent_codes_match():
    for seed in range(5):
        p = pat.generate_pattern(8, 12, 16, 16, code_seed=seed)
        assert (p.codes[:, 1:] != p.codes[:, :-1]).all()


def test_bad_dimensions_rejected():
    with pytest.raises(pat.PatternConfigError):
        pat.generate_pattern(0, 4, 16, 16, code_seed=0)
    with pytest.raises(pat.PatternConfigError):
        pat.generate_pattern(4, 4, 3, 16, code_seed=0)
    with pytest.raises(pat.PatternConfigError):
        pat.generate_pattern(4, 4, 16, 16, code_seed=0, resolution=(32, 32))


def test_line_columns_sit_between_nodes():
    # raster-scan oracle: fully bright column runs must center on (j + 0.5) * period
    p = pat.generate_pattern(6, 8, 16, 16, code_seed=3)
    img = pat.rasterize_pattern(p)
    h, w = img.shape
    full = (img >= 250).sum(axis=0) >= int(0.9 * h)
    runs = []
    x = 0
    while x < w:
        if full[x]:
            x0 = x
            while x < w and full[x]:
                x += 1
            runs.append(0.5 * (x0 + x - 1))
        else:
            x += 1
    expected = [(j + 0.5) * p.period_u for j in range(-1, p.cols) if 0 <= (j + 0.5) * p.period_u < w]
    assert len(runs) == len(expected)
    assert np.allclose(runs, expected, atol=0.51)


def test_glyph_centroids_on_lattice_points():
    p = pat.generate_pattern(6, 8, 16, 16, code_seed=5)
    img = pat.rasterize_pattern(p).astype(np.float64)
    half = 6  # window stays clear of the +-8 px lines
    for i in range(1, p.rows - 1):
        for j in range(1, p.cols - 1):
            cu, cv = j * p.period_u, i * p.period_v
            win = img[cv - half : cv + half + 1, cu - half : cu + half + 1]
            total = win.sum()
            assert total > 0
            ys, xs = np.mgrid[-half : half + 1, -half : half + 1]
            assert abs((xs * win).sum() / total) <= 0.5
            assert abs((ys * win).sum() / total) <= 0.5


def test_adjacency_degenerate_and_center():
    p1 = pat.generate_pattern(1, 1, 16, 16, code_seed=0)
    assert (pat.adjacency(p1).table[0] == -1).all()
    p3 = pat.generate_pattern(3, 3, 16, 16, code_seed=0)
    adj = pat.adjacency(p3)
    assert adj.neighbor(4, pat.UP) == 1
    assert adj.neighbor(4, pat.DOWN) == 7
    assert adj.neighbor(4, pat.LEFT) == 3
    assert adj.neighbor(4, pat.RIGHT) == 5


@given(rows=st.integers(1, 6), cols=st.integers(1, 6), seed=st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_adjacency_is_involution_under_reversal(rows, cols, seed):
    p = pat.generate_pattern(rows, cols, 16, 16, code_seed=seed)
    table = pat.adjacency(p).table
    for n in range(p.num_nodes):
        for d in range(4):
            m = table[n, d]
            if m >= 0:
                assert table[m, pat.OPPOSITE[d]] == n


@given(st.floats(-50, 50, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_wrap_and_circ_ranges(v):
    w = pat.wrap01(v)
    assert 0.0 <= w < 1.0
    c = pat.circ_signed(v)
    assert -0.5 < c <= 0.5


def test_circ_signed_convention():
    assert pat.circ_signed(0.5) == 0.5
    assert pat.circ_signed(-0.5) == 0.5
    assert pat.circ_signed(0.12) == pytest.approx(0.12)
    assert pat.circ_signed(0.98) == pytest.approx(-0.02)


def test_pattern_json_round_trip():
    p = pat.generate_pattern(5, 7, 16, 20, code_seed=9)
    q = pat.pattern_from_json(pat.pattern_to_json(p))
    assert (q.rows, q.cols, q.period_u, q.period_v, q.resolution) == (
        p.rows, p.cols, p.period_u, p.period_v, p.resolution)
    assert np.array_equal(q.codes, p.codes)


def test_raster_detect_round_trip(plane_capture, plane_graph, plane_node_truth):
    # every visible lattice node is recovered within 1 px on a noiseless render
    xy, visible = plane_node_truth
    det = np.array([[n.x, n.y] for n in plane_graph.nodes])
    gt = xy[visible]
    d2 = ((gt[:, None, :] - det[None, :, :]) ** 2).sum(-1)
    assert (d2.min(axis=1) <= 1.0).all()
