import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridscan import gridio


@pytest.mark.parametrize("dtype", ["float32", "float64", "int32", "uint8"])
def test_grid_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    arr = (rng.uniform(0, 200, (7, 11))).astype(dtype)
    path = tmp_path / "a.grid"
    gridio.write_grid(path, arr, {"seed": 5})
    back, meta = gridio.read_grid(path)
    assert back.dtype == arr.dtype
    assert np.array_equal(back, arr)
    assert meta == {"seed": 5}


def test_grid_truncation_detected(tmp_path):
    path = tmp_path / "a.grid"
    gridio.write_grid(path, np.zeros((4, 4), dtype=np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(gridio.GridFormatError, match="truncated"):
        gridio.read_grid(path)


def test_grid_reserved_meta_key(tmp_path):
    with pytest.raises(gridio.GridFormatError):
        gridio.write_grid(tmp_path / "a.grid", np.zeros((2, 2), np.float32),
                          {"shape": [9]})


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_pgm_round_trip(tmp_path_factory, w, h, seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (h, w), dtype=np.uint8)
    path = tmp_path_factory.mktemp("pgm") / "img.pgm"
    gridio.write_pgm(path, img)
    assert np.array_equal(gridio.read_pgm(path), img)


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (9, 13), dtype=np.uint8)
    path = tmp_path / "img.png"
    gridio.save_image(path, img)
    assert np.array_equal(gridio.load_image(path), img)


def test_config_hash_stability():
    a = gridio.config_hash({"b": 1, "a": [1, 2]})
    b = gridio.config_hash({"a": [1, 2], "b": 1})
    assert a == b
    assert a != gridio.config_hash({"a": [1, 2], "b": 2})
