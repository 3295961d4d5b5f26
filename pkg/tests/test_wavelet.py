import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import TOL32, TOL64
from oracles import haar_matrix
from mtsic.gradcheck import grad_check
from mtsic.tensor import ShapeError, Tensor, concat
from mtsic.wavelet import WaveletPyramid, haar_dwt2, haar_idwt2


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_constant_image():
    p = haar_dwt2(t64(np.full((2, 4, 6), 1.5)))
    np.testing.assert_allclose(p.ll.data, 3.0)
    for d in p.details:
        np.testing.assert_allclose(d.data, 0.0)


def test_single_block_and_inverse():
    p = haar_dwt2(t64([[[1.0, 2.0], [3.0, 4.0]]]))
    assert (p.ll.item(), p.lh.item(), p.hl.item(), p.hh.item()) == (5.0, -1.0, -2.0, 0.0)
    back = haar_idwt2(WaveletPyramid(t64([[[5.0]]]), t64([[[-1.0]]]), t64([[[-2.0]]]), t64([[[0.0]]])))
    np.testing.assert_array_equal(back.data, [[[1.0, 2.0], [3.0, 4.0]]])


def test_detail_free_pyramid_gives_constant():
    z = t64(np.zeros((1, 2, 3)))
    out = haar_idwt2(WaveletPyramid(t64(np.full((1, 2, 3), 1.4)), z, z, z))
    np.testing.assert_allclose(out.data, 0.7)


@pytest.mark.parametrize("instance", range(20))
def test_matches_matrix_oracle(instance):
    x = np.random.default_rng(instance).standard_normal((8, 8))
    m = haar_matrix(8)
    # rows transform along H, columns along W; low half first on each axis
    t = m @ x @ m.T
    p = haar_dwt2(t64(x[None]))
    np.testing.assert_allclose(p.ll.data[0], t[:4, :4], atol=1e-6)
    np.testing.assert_allclose(p.lh.data[0], t[:4, 4:], atol=1e-6)
    np.testing.assert_allclose(p.hl.data[0], t[4:, :4], atol=1e-6)
    np.testing.assert_allclose(p.hh.data[0], t[4:, 4:], atol=1e-6)


def test_odd_extent_rejected():
    with pytest.raises(ShapeError):
        haar_dwt2(t64(np.zeros((1, 3, 4))))
    with pytest.raises(ShapeError):
        WaveletPyramid(t64(np.zeros((1, 2, 2))), t64(np.zeros((1, 2, 3))), t64(np.zeros((1, 2, 2))), t64(np.zeros((1, 2, 2))))


even_shapes = st.tuples(st.integers(1, 3), st.integers(1, 5).map(lambda n: 2 * n), st.integers(1, 5).map(lambda n: 2 * n))
finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


@given(arrays(np.float64, even_shapes, elements=finite))
def test_round_trip_float64(x):
    np.testing.assert_allclose(haar_idwt2(haar_dwt2(t64(x))).data, x, atol=1e-12 * (1 + np.abs(x).max()))


@given(arrays(np.float64, even_shapes, elements=st.floats(-10, 10)))
def test_round_trip_float32_and_parseval(x):
    x32 = Tensor(x.astype(np.float32))
    p = haar_dwt2(x32)
    np.testing.assert_allclose(haar_idwt2(p).data, x32.data, atol=1e-6 * (1 + np.abs(x).max()))
    e_in = float((x32.data.astype(np.float64) ** 2).sum())
    assert abs(p.energy() - e_in) <= 1e-5 * max(e_in, 1e-30)


@given(
    arrays(np.float64, (2, 4, 6), elements=st.floats(-5, 5)),
    arrays(np.float64, (2, 4, 6), elements=st.floats(-5, 5)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_linearity(x, y, a, b):
    lhs = haar_dwt2(t64(a * x + b * y))
    px, py = haar_dwt2(t64(x)), haar_dwt2(t64(y))
    for sub in ("ll", "lh", "hl", "hh"):
        expected = a * getattr(px, sub).data + b * getattr(py, sub).data
        np.testing.assert_allclose(getattr(lhs, sub).data, expected, atol=1e-6)


@pytest.mark.parametrize("dtype,tol", [(np.float64, TOL64), (np.float32, TOL32)])
def test_gradients(rng, dtype, tol):
    x = Tensor(rng.standard_normal((2, 4, 6)).astype(dtype))

    def analysis(t):
        p = haar_dwt2(t)
        return concat([p.ll, p.lh, p.hl, p.hh], axis=0)

    assert grad_check(analysis, x) < tol
    assert grad_check(lambda t: haar_idwt2(WaveletPyramid(t[0:1], t[1:2], t[2:3], t[3:4])), Tensor(rng.standard_normal((4, 3, 2)).astype(dtype))) < tol
