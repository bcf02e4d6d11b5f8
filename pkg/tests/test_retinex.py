import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rseed.retinex import (GammaParam, RetinexState, compose_arrays, enhance_compose,
                           gamma_transform, reconstruct)
from rseed.tensor import ShapeError, Tensor


def state(r, l, g=0.5):
    return RetinexState(Tensor(np.asarray(r, np.float32)), Tensor(np.asarray(l, np.float32)),
                        Tensor(np.float32(g)))


def test_reconstruct_constant():
    s = state(np.full((3, 2, 2), 0.8), np.full((1, 2, 2), 0.25))
    np.testing.assert_allclose(reconstruct(s).data, 0.2, rtol=1e-6)


def test_unit_illumination_gives_reflectance():
    r = np.random.default_rng(0).uniform(0, 1, (3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(reconstruct(state(r, np.ones((1, 4, 4)))).data, r)


def test_reconstruct_matches_loop():
    rng = np.random.default_rng(1)
    r = rng.uniform(0, 1, (3, 4, 4)).astype(np.float32)
    l = rng.uniform(0, 1, (1, 4, 4)).astype(np.float32)
    out = reconstruct(state(r, l)).data
    for c in range(3):
        for i in range(4):
            for j in range(4):
                assert out[c, i, j] == np.float32(r[c, i, j] * l[0, i, j])


def test_gamma_transform_examples():
    l = Tensor(np.full((1, 2, 2), 0.25, np.float32))
    np.testing.assert_allclose(gamma_transform(l, 0.5).data, 0.5, rtol=1e-6)
    np.testing.assert_array_equal(gamma_transform(l, 1.0).data, l.data)
    with pytest.raises(ValueError):
        gamma_transform(l, 0.0)
    with pytest.raises(ValueError):
        gamma_transform(l, -1.0)


def test_gamma_derivative():
    l = Tensor(np.array([[[0.3, 0.7]]], np.float64), dtype=np.float64)
    g = Tensor(np.array(0.5), requires_grad=True, dtype=np.float64)
    gamma_transform(l, g).sum().backward()
    assert g.grad == pytest.approx(np.sum(l.data ** 0.5 * np.log(l.data)))


def test_enhance_compose_examples():
    s = state(np.full((3, 2, 2), 0.8), np.full((1, 2, 2), 0.25), 0.5)
    np.testing.assert_allclose(enhance_compose(s).data, 0.4, rtol=1e-6)


def test_state_validation():
    with pytest.raises(ShapeError):
        state(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
    with pytest.raises(ShapeError):
        state(np.zeros((3, 2, 2)), np.zeros((3, 2, 2)))
    with pytest.raises(ShapeError):
        state(np.zeros((3, 2, 2)), np.zeros((1, 2, 3)))


def test_gamma_param_clamps():
    g = GammaParam(0.5)
    g.tensor.data[...] = -3.0
    g.clamp()
    assert g.value == pytest.approx(0.01)
    g.tensor.data[...] = 50.0
    g.clamp()
    assert g.value == pytest.approx(10.0)
    assert GammaParam(0.001).value == pytest.approx(0.01)


maps = st.tuples(
    arrays(np.float32, (3, 3, 4), elements=st.floats(0.015625, 0.984375, width=32)),
    arrays(np.float32, (1, 3, 4), elements=st.floats(0.015625, 0.984375, width=32)),
)


@settings(max_examples=50, deadline=None)
@given(maps)
def test_composition_identity_bit_exact(rl):
    r, l = rl
    s = state(r, l, 1.0)
    assert enhance_compose(s).data.tobytes() == reconstruct(s).data.tobytes()


@settings(max_examples=50, deadline=None)
@given(maps, st.floats(0.01, 10), st.floats(0.01, 10))
def test_brightening_monotonicity(rl, g1, g2):
    r, l = rl
    lo, hi = sorted((g1, g2))
    a = enhance_compose(state(r, l, lo)).data
    b = enhance_compose(state(r, l, hi)).data
    assert np.all(a >= b)


@settings(max_examples=50, deadline=None)
@given(maps, st.floats(0.01, 10))
def test_output_range(rl, g):
    out = enhance_compose(state(*rl, g)).data
    assert np.all(out >= 0) and np.all(out < 1)


@settings(max_examples=30, deadline=None)
@given(maps, st.floats(0.01, 10))
def test_offline_recomposition_bit_equal(rl, g):
    r, l = rl
    g = np.float32(g)
    assert compose_arrays(r, l, g).tobytes() == enhance_compose(state(r, l, g)).data.tobytes()
