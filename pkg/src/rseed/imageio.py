"""8-bit image files <-> 3 x H x W float32 arrays in [0, 1]."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class ImageReadError(OSError):
    pass


def read_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from None
    return np.ascontiguousarray((arr / 255.0).transpose(2, 0, 1))


def to_uint8(image):
    """[0, 1] floats to bytes: floor(v * 255 + 0.5) clamped to [0, 255]."""
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_png(path, image):
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise ImageReadError(f"not a directory: {directory}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def center_square(image, size):
    """Center-crop a 3 x H x W array to a square and box-resize it to size x size."""
    _, H, W = image.shape
    s = min(H, W)
    y, x = (H - s) // 2, (W - s) // 2
    crop = to_uint8(image[:, y:y + s, x:x + s]).transpose(1, 2, 0)
    im = Image.fromarray(crop).resize((size, size), Image.BOX)
    return np.ascontiguousarray((np.asarray(im, dtype=np.float32) / 255.0).transpose(2, 0, 1))
