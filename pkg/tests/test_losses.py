import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rseed import losses as L
from rseed.retinex import RetinexState
from rseed.tensor import ShapeError, Tensor


def T64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


unit = st.floats(0.015625, 0.984375)


class TestIlluminationTarget:
    def test_constant_channels(self):
        img = np.stack([np.full((30, 30), v) for v in (0.2, 0.5, 0.3)]).astype(np.float32)
        t = L.illumination_target(img)
        np.testing.assert_allclose(t.data, 0.5, atol=1e-6)
        assert t.shape == (1, 30, 30) and not t.requires_grad

    def test_black(self):
        assert not np.any(L.illumination_target(np.zeros((3, 20, 20), np.float32)).data)

    def test_single_bright_pixel_matches_direct_convolution(self):
        H = W = 40
        img = np.zeros((3, H, W))
        img[1, 17, 22] = 1.0
        k = L.gaussian_kernel2d()
        p = 12
        padded = np.pad(img, ((0, 0), (p, p), (p, p)), mode="reflect")
        direct = np.zeros((3, H, W))
        for c in range(3):
            for i in range(H):
                for j in range(W):
                    direct[c, i, j] = np.sum(k * padded[c, i:i + 25, j:j + 25])
        np.testing.assert_allclose(L.illumination_target(img).data[0], direct.max(axis=0), atol=1e-6)

    def test_kernel_sums_to_one(self):
        assert L.gaussian_kernel2d().sum() == pytest.approx(1.0, abs=1e-15)
        assert L.gaussian_kernel2d().shape == (25, 25)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            L.illumination_target(np.zeros((1, 30, 30)))


class TestReconstruction:
    def test_examples(self):
        x = T64(np.random.default_rng(0).uniform(0, 1, (3, 4, 4)))
        assert L.loss_reconstruction(x, x).item() == 0.0
        assert L.loss_reconstruction(T64(np.zeros((3, 2, 2))), T64(np.ones((3, 2, 2)))).item() == 1.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (2, 3, 4, 4))
        acc = 0.0
        for idx in np.ndindex(a.shape):
            acc += (a[idx] - b[idx]) ** 2
        assert L.loss_reconstruction(T64(a), T64(b)).item() == pytest.approx(acc / a.size, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.loss_reconstruction(T64(np.zeros((3, 2, 2))), T64(np.zeros((1, 2, 2))))


class TestIlluminationConsistency:
    def test_examples(self):
        t = T64(np.full((1, 3, 3), 0.5))
        assert L.loss_illumination_consistency(t, t).item() == 0.0
        assert L.loss_illumination_consistency(t, T64(np.full((1, 3, 3), 0.3))).item() == pytest.approx(0.2)

    def test_loop_oracle(self):
        a, b = np.random.default_rng(2).uniform(0, 1, (2, 1, 5, 5))
        acc = sum(abs(a[i] - b[i]) for i in np.ndindex(a.shape)) / a.size
        assert L.loss_illumination_consistency(T64(a), T64(b)).item() == pytest.approx(acc, rel=1e-12)


def smoothness_oracle(l, r, tau):
    C, H, W = r.shape

    def grads(m):
        gx = np.zeros_like(m)
        gy = np.zeros_like(m)
        for c in range(m.shape[0]):
            for i in range(H):
                for j in range(W):
                    gx[c, i, j] = m[c, i, j + 1] - m[c, i, j] if j + 1 < W else 0.0
                    gy[c, i, j] = m[c, i + 1, j] - m[c, i, j] if i + 1 < H else 0.0
        return np.abs(gx), np.abs(gy)

    lx, ly = grads(l)
    rx, ry = grads(r)
    first = 0.0
    for i in range(H):
        for j in range(W):
            wx = np.mean(rx[:, i, j])
            wy = np.mean(ry[:, i, j])
            first += lx[0, i, j] / np.exp(wx) + ly[0, i, j] / np.exp(wy)
    first /= 2 * H * W
    second = (rx.sum() + ry.sum()) / (2 * C * H * W)
    return first + tau * second


class TestSmoothness:
    def test_constant_maps(self):
        assert L.loss_smoothness(T64(np.full((1, 3, 4), 0.4)), T64(np.full((3, 3, 4), 0.7)), 0.6).item() == 0.0

    def test_constant_illumination(self):
        r = np.random.default_rng(3).uniform(0, 1, (3, 4, 5))
        got = L.loss_smoothness(T64(np.full((1, 4, 5), 0.3)), T64(r), 0.6).item()
        assert got == pytest.approx(0.6 * smoothness_oracle(np.full((1, 4, 5), 0.0), r, 1.0), rel=1e-12)

    def test_hand_case(self):
        l = np.array([[[0.1, 0.4, 0.2], [0.5, 0.3, 0.9]]])
        r = np.random.default_rng(4).uniform(0, 1, (3, 2, 3))
        for tau in (0.2, 0.6):
            got = L.loss_smoothness(T64(l), T64(r), tau).item()
            assert got == pytest.approx(smoothness_oracle(l, r, tau), rel=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            L.loss_smoothness(T64(np.zeros((1, 3, 3))), T64(np.zeros((3, 3, 4))), 0.6)

    def test_reflectance_edges_license_illumination_edges(self):
        l = np.array([[[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]])
        flat = np.zeros((3, 2, 3))
        edged = flat.copy()
        edged[:, :, 1:] = 0.8
        first = [L.loss_smoothness(T64(l), T64(r), 0.0).item() for r in (flat, edged)]
        assert first[1] < first[0]


class TestIlluminationControl:
    def test_examples(self):
        r = T64(np.full((3, 2, 2), 0.6))
        l = T64(np.full((1, 2, 2), 1.0 - 1e-12))
        assert L.loss_illumination_control(r, l, T64(1.0), 0.6).item() == pytest.approx(0.0, abs=1e-9)
        zero = T64(np.zeros((3, 2, 2)))
        assert L.loss_illumination_control(zero, T64(np.full((1, 2, 2), 0.5)), T64(1.0), 0.6).item() == pytest.approx(0.6)

    def test_loop_oracle_and_gradient_reaches_everything(self):
        rng = np.random.default_rng(5)
        r = rng.uniform(0.05, 0.95, (3, 3, 3))
        l = rng.uniform(0.05, 0.95, (1, 3, 3))
        g = 0.7
        acc = 0.0
        for c in range(3):
            for i in range(3):
                for j in range(3):
                    acc += abs(0.6 - r[c, i, j] * l[0, i, j] ** g)
        rt, lt, gt = T64(r, True), T64(l, True), T64(g, True)
        loss = L.loss_illumination_control(rt, lt, gt, 0.6)
        assert loss.item() == pytest.approx(acc / 27, rel=1e-12)
        loss.backward()
        assert all(np.any(t.grad != 0) for t in (rt, lt, gt))


class TestTotal:
    def parts(self, v):
        return {k: T64(v) for k in ("l_re", "l_e", "l_s", "l_i")}

    def test_examples(self):
        w = L.LossWeights()
        assert L.loss_total(self.parts(0.0), w).item() == 0.0
        assert L.loss_total(self.parts(1.0), w).item() == pytest.approx(12.09)

    def test_zero_weight_excluded(self):
        parts = self.parts(1.0)
        parts["l_s"] = T64(np.nan)
        assert L.loss_total(parts, L.LossWeights(lambda_s=0.0)).item() == pytest.approx(12.06)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            L.LossWeights(lambda_e=-1)
        with pytest.raises(ValueError):
            L.LossWeights(exposure_e=1.0)


def random_state(rng, grad=True, H=6, W=7):
    return RetinexState(T64(rng.uniform(0.05, 0.95, (3, H, W)), grad),
                        T64(rng.uniform(0.05, 0.95, (1, H, W)), grad),
                        T64(rng.uniform(0.2, 2.0), grad))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), unit)
def test_non_negativity(seed, e):
    rng = np.random.default_rng(seed)
    img = T64(rng.uniform(0, 1, (3, 6, 7)))
    total, parts = L.compute_losses(img, L.illumination_target(img), random_state(rng, False),
                                    L.LossWeights(exposure_e=e))
    assert all(p.item() >= 0 for p in parts.values()) and total.item() >= 0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 4), elements=unit), arrays(np.float64, (1, 4, 4), elements=unit))
def test_zero_at_optimum(r, l):
    rec = T64(r * l)
    assert L.loss_reconstruction(rec, T64(r) * T64(l)).item() == 0.0
    assert L.loss_illumination_consistency(T64(l), T64(l)).item() == 0.0
    bumped = l.copy()
    bumped[0, 0, 0] += 1e-3
    assert L.loss_illumination_consistency(T64(l), T64(bumped)).item() > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["lambda_re", "lambda_e", "lambda_s", "lambda_i"]))
def test_ablation_matches_removed_term(seed, key):
    rng = np.random.default_rng(seed)
    img = T64(rng.uniform(0, 1, (3, 6, 7)))
    target = T64(L.illumination_target(img).data)
    s1 = random_state(np.random.default_rng(seed + 1))
    s2 = random_state(np.random.default_rng(seed + 1))
    w = L.LossWeights(**{key: 0.0})
    L.compute_losses(img, target, s1, w)[0].backward()
    # hand-built sum of the remaining terms
    parts = {
        "lambda_re": lambda s: L.loss_reconstruction(img, s.reflectance * s.illumination),
        "lambda_e": lambda s: L.loss_illumination_consistency(target, s.illumination),
        "lambda_s": lambda s: L.loss_smoothness(s.illumination, s.reflectance, w.tau),
        "lambda_i": lambda s: L.loss_illumination_control(s.reflectance, s.illumination, s.gamma, w.exposure_e),
    }
    total = None
    for name, fn in parts.items():
        if name == key:
            continue
        term = fn(s2) * getattr(w, name)
        total = term if total is None else total + term
    total.backward()
    for a, b in ((s1.reflectance, s2.reflectance), (s1.illumination, s2.illumination), (s1.gamma, s2.gamma)):
        if a.grad is None or b.grad is None:
            assert a.grad is None and b.grad is None
        else:
            np.testing.assert_allclose(a.grad, b.grad, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(1.0, 5.0))
def test_smoothness_asymmetry(seed, scale):
    # scaling R by s >= 1 raises every |grad R|; the illumination term must not grow
    rng = np.random.default_rng(seed)
    l = T64(rng.uniform(0, 1, (1, 4, 4)))
    r = rng.uniform(0, 1, (3, 4, 4))
    before = L.loss_smoothness(l, T64(r), 0.0).item()
    after = L.loss_smoothness(l, T64(r * scale), 0.0).item()
    assert after <= before + 1e-15
