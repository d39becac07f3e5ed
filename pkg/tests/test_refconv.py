import numpy as np
import pytest

from hetgrid.grid import DIRECTIONS, Direction, GridShape
from hetgrid.linalg import ShapeError
from hetgrid.refconv import KernelSet, conv3x3_dense, conv_as_graph

DIR_INDEX = {d: i for i, d in enumerate(DIRECTIONS)}


def kernel_with(entries, cin=1, cout=1, dtype=np.float32):
    w = np.zeros((9, cin, cout), dtype=dtype)
    for d, mat in entries.items():
        w[DIR_INDEX[d]] = mat
    return KernelSet(w)


def loop_conv(x, shape, k):
    """Per-pixel, per-tap python loop oracle with zero padding."""
    h, w = shape.height, shape.width
    img = x.reshape(h, w, k.cin).astype(np.float64)
    out = np.zeros((h, w, k.cout), dtype=np.float64)
    for r in range(h):
        for c in range(w):
            for d in DIRECTIONS:
                rr, cc = r + d.drow, c + d.dcol
                if 0 <= rr < h and 0 <= cc < w:
                    out[r, c] += img[rr, cc] @ k[d].astype(np.float64)
    return out.reshape(shape.n_pix, k.cout)


def test_kernelset_validation():
    with pytest.raises(ShapeError):
        KernelSet(np.zeros((8, 1, 1)))
    with pytest.raises(ValueError):
        KernelSet(np.full((9, 1, 1), np.nan))
    k = KernelSet.identity(3)
    assert k.cin == k.cout == 3
    assert np.array_equal(k[Direction.SELF], np.eye(3, dtype=np.float32))
    assert np.all(k[Direction.LEFT] == 0)


def test_identity_kernel_passthrough():
    rng = np.random.default_rng(0)
    shape = GridShape(4, 5)
    x = rng.normal(size=(shape.n_pix, 3)).astype(np.float32)
    k = KernelSet.identity(3)
    assert np.allclose(conv3x3_dense(x, shape, k), x)
    assert np.max(np.abs(conv_as_graph(x, shape, k) - x)) <= 1e-6


def test_left_tap_on_1x3():
    shape = GridShape(1, 3)
    x = np.array([[1.0], [2.0], [3.0]], dtype=np.float32)
    k = kernel_with({Direction.LEFT: [[1.0]]})
    want = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
    assert np.array_equal(conv3x3_dense(x, shape, k), want)
    assert np.max(np.abs(conv_as_graph(x, shape, k) - want)) <= 1e-6


def test_zero_input_zero_output():
    shape = GridShape(3, 3)
    x = np.zeros((9, 2), dtype=np.float32)
    rng = np.random.default_rng(1)
    k = KernelSet.random(2, 4, rng)
    assert np.all(conv3x3_dense(x, shape, k) == 0)
    assert np.all(conv_as_graph(x, shape, k) == 0)


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(2)
    for h, w, cin, cout in [(1, 1, 1, 1), (2, 3, 2, 2), (4, 4, 3, 2), (5, 2, 1, 3)]:
        shape = GridShape(h, w)
        x = rng.normal(size=(shape.n_pix, cin)).astype(np.float32)
        k = KernelSet.random(cin, cout, rng)
        got = conv3x3_dense(x, shape, k)
        want = loop_conv(x, shape, k)
        assert np.max(np.abs(got - want)) <= 1e-5


def test_graph_equivalence_small_sweep():
    rng = np.random.default_rng(3)
    for h in range(1, 6):
        for w in range(1, 6):
            shape = GridShape(h, w)
            for cin in (1, 3):
                for _ in range(5):
                    x = rng.normal(size=(shape.n_pix, cin)).astype(np.float32)
                    k = KernelSet.random(cin, 2, rng)
                    dev = np.max(np.abs(
                        conv_as_graph(x, shape, k) - conv3x3_dense(x, shape, k)))
                    assert dev <= 1e-4, (h, w, cin, dev)


def test_graph_equivalence_float64_path():
    rng = np.random.default_rng(4)
    for h, w in [(3, 3), (5, 4), (8, 8)]:
        shape = GridShape(h, w)
        x = rng.normal(size=(shape.n_pix, 3))
        k = KernelSet.random(3, 3, rng, dtype=np.float64)
        dev = np.max(np.abs(conv_as_graph(x, shape, k) - conv3x3_dense(x, shape, k)))
        assert dev <= 1e-10


def test_linearity():
    rng = np.random.default_rng(5)
    shape = GridShape(4, 4)
    x = rng.normal(size=(16, 2)).astype(np.float32)
    y = rng.normal(size=(16, 2)).astype(np.float32)
    k = KernelSet.random(2, 2, rng)
    lhs = conv3x3_dense(2.0 * x + 3.0 * y, shape, k)
    rhs = 2.0 * conv3x3_dense(x, shape, k) + 3.0 * conv3x3_dense(y, shape, k)
    assert np.max(np.abs(lhs - rhs)) <= 1e-4


def test_shape_mismatch_rejected():
    k = KernelSet.identity(2)
    with pytest.raises(ShapeError):
        conv3x3_dense(np.zeros((5, 2), dtype=np.float32), GridShape(2, 2), k)
    with pytest.raises(ShapeError):
        conv_as_graph(np.zeros((4, 3), dtype=np.float32), GridShape(2, 2), k)
