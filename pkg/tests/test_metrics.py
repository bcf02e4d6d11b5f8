import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rseed.metrics import MetricReport, evaluate, psnr, ssim

img = arrays(np.float64, (3, 12, 13), elements=st.floats(0, 1))


def test_psnr_identical_capped():
    a = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    assert psnr(a, a) == 100.0


def test_psnr_uniform_offset():
    a = np.full((3, 8, 8), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


def test_psnr_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, (2, 3, 5, 6))
    acc = 0.0
    for idx in np.ndindex(a.shape):
        acc += (a[idx] - b[idx]) ** 2
    assert psnr(a, b) == pytest.approx(10 * np.log10(a.size / acc), rel=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ssim_identical():
    a = np.random.default_rng(2).uniform(0, 1, (3, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_degenerate_negative():
    a = np.full((3, 16, 16), 0.5)
    assert ssim(a, 1 - a) == pytest.approx(1.0)


def test_ssim_constants_closed_form():
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a, mu_b = 0.5, 0.6
    expected = (2 * mu_a * mu_b + c1) * c2 / ((mu_a ** 2 + mu_b ** 2 + c1) * c2)
    assert ssim(np.full((3, 20, 20), 0.5), np.full((3, 20, 20), 0.6)) == pytest.approx(expected, rel=1e-9)


def test_ssim_matches_skimage():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, (3, 32, 40))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = skm.structural_similarity(a, b, channel_axis=0, data_range=1.0, gaussian_weights=True,
                                    sigma=1.5, use_sample_covariance=False)
    # skimage averages over the full (reflect-padded) map; ours over valid windows only
    crop = 5
    full = skm.structural_similarity(a, b, channel_axis=0, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                     use_sample_covariance=False, full=True)[1]
    assert ssim(a, b) == pytest.approx(full[:, crop:-crop, crop:-crop].mean(), rel=1e-6)
    assert abs(ssim(a, b) - ref) < 0.02


def test_ssim_layouts_and_small_image():
    a = np.random.default_rng(4).uniform(0, 1, (3, 16, 16))
    b = a * 0.9
    assert ssim(a, b) == pytest.approx(ssim(a.transpose(1, 2, 0), b.transpose(1, 2, 0), channel_axis=-1))
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 10, 16)), np.zeros((3, 10, 16)))


@settings(max_examples=40, deadline=None)
@given(img, img)
def test_symmetry(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 <= ssim(a, b) <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.2), st.floats(1.1, 3))
def test_psnr_decreases_with_noise(seed, amp, factor):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (3, 8, 8))
    noise = rng.uniform(-1, 1, a.shape)
    assert psnr(a, a + amp * factor * noise) < psnr(a, a + amp * noise)


def test_evaluate_report():
    a = np.full((3, 16, 16), 0.5)
    rep = evaluate([("x", a, a), ("y", a, a + 0.1)])
    assert isinstance(rep, MetricReport)
    assert rep.psnr_db == pytest.approx(60.0)
    assert [r[0] for r in rep.per_image] == ["x", "y"]
    with pytest.raises(ValueError):
        evaluate([])
