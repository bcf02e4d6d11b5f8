import numpy as np
import pytest

from rseed.synthetic import darken


def natural_like(H, W, seed=0):
    """Smooth colourful test image (sum of low-frequency sinusoids) in [0, 1]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:H, 0:W] / max(H, W)
    img = np.zeros((3, H, W))
    for c in range(3):
        for _ in range(4):
            fy, fx, ph = rng.uniform(0.5, 4, 2).tolist() + [rng.uniform(0, 6.3)]
            img[c] += np.sin(2 * np.pi * (fy * y + fx * x) + ph)
    img -= img.min()
    img /= img.max()
    return (0.1 + 0.8 * img).astype(np.float32)


@pytest.fixture
def dark64():
    gt = natural_like(64, 64, 1)
    dark, _ = darken(gt, np.random.default_rng(1))
    return dark


def photos(size=128):
    """Five scikit-image test photographs, centre-cropped and box-resized to size x size."""
    data = pytest.importorskip("skimage.data")
    from PIL import Image

    raw = [data.astronaut(), data.coffee(), data.chelsea(), data.rocket(), data.stereo_motorcycle()[0]]
    out = []
    for a in raw:
        h, w, _ = a.shape
        s = min(h, w)
        y, x = (h - s) // 2, (w - s) // 2
        im = Image.fromarray(a[y:y + s, x:x + s]).resize((size, size), Image.BOX)
        out.append((np.asarray(im).astype(np.float32) / 255).transpose(2, 0, 1).copy())
    return out


def darkened_photos(size=128):
    """(ground truth, darkened) pairs; image i is darkened with rng seed 100 + i."""
    return [(gt, darken(gt, np.random.default_rng(100 + i))[0]) for i, gt in enumerate(photos(size))]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
