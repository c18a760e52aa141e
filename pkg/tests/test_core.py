import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piguiqa.core import (as_image, broadcast_grid, center_square, depatchify, patchify,
                          read_image, read_map16, resize, write_image, write_map16)
from piguiqa.errors import InvalidArgument


def test_patchify_exact_division(rng):
    img = rng.uniform(size=(32, 32, 3))
    g = patchify(img, 16)
    assert (g.rows, g.cols) == (2, 2)
    assert g.patches.shape == (2, 2, 16, 16, 3)
    np.testing.assert_array_equal(g.patches[1, 0], img[16:32, 0:16])


def test_patchify_reflect_pad_rows(rng):
    img = rng.uniform(size=(33, 32, 3))
    g = patchify(img, 16)
    assert (g.rows, g.cols) == (3, 2)
    padded = depatchify_full(g)
    # 0-based: padded row 33 + k mirrors row 31 - k (edge row 32 not repeated)
    for k in range(15):
        np.testing.assert_array_equal(padded[33 + k], img[31 - k])


def depatchify_full(g):
    r, c, n = g.rows, g.cols, g.patch_size
    return g.patches.transpose(0, 2, 1, 3, 4).reshape(r * n, c * n, -1)


@pytest.mark.parametrize("n", [0, -3])
def test_patchify_rejects_bad_size(n):
    with pytest.raises(InvalidArgument):
        patchify(np.zeros((4, 4, 3)), n)


def test_roundtrip_37x41(rng):
    img = rng.uniform(size=(37, 41, 3))
    np.testing.assert_array_equal(depatchify(patchify(img, 16)), img)


def test_depatchify_zero_and_blocks():
    g = patchify(np.zeros((32, 32, 3)), 16)
    assert not depatchify(g).any()
    img = np.zeros((32, 32, 3))
    for (i, j), v in zip([(0, 0), (0, 1), (1, 0), (1, 1)], [0.1, 0.2, 0.3, 0.4]):
        img[16 * i:16 * i + 16, 16 * j:16 * j + 16] = v
    out = depatchify(patchify(img, 16))
    assert out[0, 0, 0] == 0.1 and out[31, 31, 2] == 0.4


@settings(max_examples=200, deadline=None)
@given(h=st.integers(1, 64), w=st.integers(1, 64), n=st.integers(1, 20), seed=st.integers(0, 2**31))
def test_roundtrip_property(h, w, n, seed):
    img = np.random.default_rng(seed).uniform(size=(h, w, 3))
    g = patchify(img, n)
    assert g.patches.min() >= 0 and g.patches.max() <= 1
    np.testing.assert_array_equal(depatchify(g), img)


def test_broadcast_blocks():
    grid = np.array([[0, 1], [0.5, 0.25]])
    f = broadcast_grid(grid, 16, 32, 32)
    assert f.shape == (32, 32, 1)
    assert np.all(f[:16, :16] == 0) and np.all(f[:16, 16:] == 1)
    assert np.all(f[16:, :16] == 0.5) and np.all(f[16:, 16:] == 0.25)
    assert not broadcast_grid(np.zeros((2, 2)), 16, 32, 32).any()


def test_broadcast_crop_and_mismatch():
    grid = np.arange(6, dtype=float).reshape(3, 2) / 6
    f = broadcast_grid(grid, 16, 33, 32)
    assert f.shape == (33, 32, 1)
    assert np.all(f[32, :16] == grid[2, 0])
    with pytest.raises(InvalidArgument):
        broadcast_grid(grid, 16, 32, 32)


def test_broadcast_idempotence(rng):
    grid = rng.uniform(size=(3, 4))
    field = broadcast_grid(grid, 8, 20, 30)
    again = patchify(field, 8).patches.max(axis=(2, 3, 4))
    np.testing.assert_array_equal(again, grid)
    np.testing.assert_array_equal(broadcast_grid(again, 8, 20, 30), field)


def test_resize_contracts(rng):
    const = np.full((10, 13, 3), 0.3)
    np.testing.assert_allclose(resize(const, 7, 29), 0.3, atol=1e-12)
    img = rng.uniform(size=(9, 11, 3))
    np.testing.assert_allclose(resize(img, 9, 11), img, atol=1e-7)
    checker = np.zeros((2, 2, 3))
    checker[0, 0] = checker[1, 1] = 1
    up = resize(checker, 4, 4)
    assert up.min() >= 0 and up.max() <= 1


def test_center_square_shape(rng):
    out = center_square(rng.uniform(size=(40, 60, 3)), 32)
    assert out.shape == (32, 32, 3)


def test_as_image_validation():
    with pytest.raises(InvalidArgument):
        as_image(np.zeros((4, 4)))
    with pytest.raises(InvalidArgument):
        as_image(np.full((4, 4, 3), 1.5))


def test_image_io_roundtrip(tmp_path, rng):
    img = np.round(rng.uniform(size=(5, 7, 3)) * 255) / 255
    write_image(tmp_path / "x.png", img)
    np.testing.assert_allclose(read_image(tmp_path / "x.png"), img, atol=1e-12)


def test_map16_roundtrip(tmp_path, rng):
    m = rng.uniform(size=(6, 5, 3))
    stored = write_map16(tmp_path / "m.png16", m, {"note": "x"})
    back = read_map16(tmp_path / "m.png16")
    np.testing.assert_array_equal(back, stored)
    assert np.abs(back - m).max() <= 0.5 / 65535 + 1e-15
    wide = rng.normal(size=(4, 4, 1)) * 10
    back = read_map16_after(tmp_path, wide)
    assert np.abs(back - wide).max() <= np.ptp(wide) / 65535


def read_map16_after(tmp_path, values):
    write_map16(tmp_path / "w.png16", values)
    return read_map16(tmp_path / "w.png16")
