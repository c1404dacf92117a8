"""Compiled and NumPy kernels must agree bit for bit."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superdp import kernels

try:
    CY = kernels.backend_module("cython")
except ImportError:  # extension not built
    CY = None
PY = kernels.backend_module("python")

needs_ext = pytest.mark.skipif(CY is None, reason="Cython kernels not built")


@st.composite
def conv_case(draw):
    k = draw(st.integers(1, 4))
    stride = draw(st.integers(1, 3))
    pad = draw(st.integers(0, 2))
    h = draw(st.integers(k, 10))
    w = draw(st.integers(k, 10))
    b = draw(st.integers(1, 3))
    c = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    return b, c, h, w, k, stride, pad, seed


@needs_ext
@settings(max_examples=60, deadline=None)
@given(conv_case())
def test_im2col_col2im_identical(case):
    b, c, h, w, k, stride, pad, seed = case
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, c, h, w))
    a = PY.im2col(x, k, k, stride, pad)
    assert np.array_equal(a, CY.im2col(x, k, k, stride, pad))
    g = rng.normal(size=a.shape)
    assert np.array_equal(PY.col2im(g, x.shape, k, k, stride, pad), CY.col2im(g, x.shape, k, k, stride, pad))


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_maxpool_identical(b, c, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-3, 3, size=(b, c, h, w)).astype(float)  # ties exercise first-max rule
    o1, i1 = PY.maxpool2x2_forward(x)
    o2, i2 = CY.maxpool2x2_forward(x)
    assert np.array_equal(o1, o2) and np.array_equal(i1, i2)
    g = rng.normal(size=o1.shape)
    assert np.array_equal(PY.maxpool2x2_backward(g, i1, x.shape), CY.maxpool2x2_backward(g, i2, x.shape))


def test_im2col_layout():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    cols = kernels.im2col(x, 2, 2)
    # rows are kernel offsets (0,0),(0,1),(1,0),(1,1); columns are output positions
    assert cols[0].tolist() == [[0, 1, 3, 4], [1, 2, 4, 5], [3, 4, 6, 7], [4, 5, 7, 8]]


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.normal(size=(2, 3, 7, 6))
    cols = kernels.im2col(x, 3, 2, 2, 1)
    y = rng.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * kernels.col2im(y, x.shape, 3, 2, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
