"""Convolutional decoder generators and their binary weight files.

A decoder maps a seed of shape ``seed_channels x h x w`` to an
``out_channels x h*2^n x w*2^n`` map in (0, 1)::

    for each stage:  upsample x2 -> conv3x3 (reflect) -> leaky_relu(0.2)
    head:            conv3x3 (reflect) -> sigmoid

Weight file layout (little-endian)::

    b"RSWT" | u32 version=1
    u32 n_stages | u32 seed_channels | u32 out_channels | u32 count | u32 stage_channels[count]
    u32 n_layers
    per layer: u32 name_len | name (utf-8) | u32 rank | u32 dims[rank] | f32 data
    u32 crc32 of everything above
"""

import hashlib
import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d, leaky_relu, permute, sigmoid, upsample_nearest2x

MAGIC = b"RSWT"
VERSION = 1
LEAKY_SLOPE = 0.2


class WeightFormatError(ValueError):
    """Base class for unreadable weight files."""


class BadMagicError(WeightFormatError):
    pass


class BadVersionError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    pass


class ArchMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Arch:
    n_stages: int = 4
    seed_channels: int = 16
    stage_channels: tuple = (32, 32, 16, 8)
    out_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.n_stages < 1 or len(self.stage_channels) != self.n_stages:
            raise ValueError(f"need one stage width per stage, got n_stages={self.n_stages}, "
                             f"stage_channels={self.stage_channels}")
        if self.out_channels not in (1, 3):
            raise ValueError(f"out_channels must be 1 or 3, got {self.out_channels}")
        if self.seed_channels < 1 or min(self.stage_channels) < 1:
            raise ValueError("channel counts must be positive")

    @property
    def scale(self):
        return 2 ** self.n_stages

    def with_out(self, out_channels):
        return Arch(self.n_stages, self.seed_channels, self.stage_channels, out_channels)

    def layer_shapes(self):
        shapes = []
        prev = self.seed_channels
        for i, c in enumerate(self.stage_channels):
            shapes.append((f"stage{i}.weight", (c, prev, 3, 3)))
            shapes.append((f"stage{i}.bias", (c,)))
            prev = c
        shapes.append(("head.weight", (self.out_channels, prev, 3, 3)))
        shapes.append(("head.bias", (self.out_channels,)))
        return shapes

    def describe(self):
        return (f"n_stages={self.n_stages} seed_channels={self.seed_channels} "
                f"stage_channels={list(self.stage_channels)} out_channels={self.out_channels}")


@dataclass
class DecoderWeights:
    arch: Arch
    layers: dict = field(default_factory=dict)  # name -> Tensor, in arch order

    def __post_init__(self):
        for name, shape in self.arch.layer_shapes():
            if name not in self.layers:
                raise ArchMismatchError(f"missing layer {name!r}")
            if self.layers[name].shape != shape:
                raise ArchMismatchError(f"layer {name!r} has shape {self.layers[name].shape}, "
                                        f"arch requires {shape}")

    def tensors(self):
        return [self.layers[name] for name, _ in self.arch.layer_shapes()]

    def set_trainable(self, flag):
        for t in self.layers.values():
            t.requires_grad = bool(flag)
            if not flag:
                t.grad = None

    def zero_grad(self):
        for t in self.layers.values():
            t.grad = None

    def copy(self):
        return DecoderWeights(self.arch, {k: Tensor(v.data.copy()) for k, v in self.layers.items()})

    def to_bytes(self):
        return serialize(self)

    def sha256(self):
        return hashlib.sha256(serialize(self)).hexdigest()


def init_random(arch, rng_seed):
    """He-normal kernels (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(rng_seed)
    layers = {}
    for name, shape in arch.layer_shapes():
        if name.endswith(".weight"):
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        else:
            data = np.zeros(shape)
        layers[name] = Tensor(data.astype(np.float32))
    return DecoderWeights(arch, layers)


def init_seed(arch, height, width, rng):
    """Gaussian seed for an image of (padded) size height x width."""
    s = arch.scale
    if height % s or width % s:
        raise ValueError(f"image size {height}x{width} is not a multiple of {s}")
    z = rng.standard_normal((arch.seed_channels, height // s, width // s)).astype(np.float32)
    return Tensor(z, requires_grad=True, name="seed")


def decode(seed, weights, freeze=True):
    """Run the generator.

    ``freeze=True`` marks every weight tensor ``requires_grad=False`` so only the
    seed can receive gradients; ``freeze=False`` makes the weights trainable.
    """
    arch = weights.arch
    if seed.ndim not in (3, 4) or seed.shape[-3] != arch.seed_channels:
        raise ArchMismatchError(f"seed of shape {seed.shape} does not fit a decoder with "
                                f"{arch.seed_channels} seed channels")
    weights.set_trainable(not freeze)
    batched = seed.ndim == 4
    # channels-last internally: the convolution kernels are fastest there
    x = permute(seed, (0, 2, 3, 1) if batched else (1, 2, 0))
    layers = weights.layers
    for i in range(arch.n_stages):
        x = upsample_nearest2x(x, layout="hwc")
        x = conv2d(x, layers[f"stage{i}.weight"], layers[f"stage{i}.bias"], padding="reflect", layout="hwc")
        x = leaky_relu(x, LEAKY_SLOPE)
    x = conv2d(x, layers["head.weight"], layers["head.bias"], padding="reflect", layout="hwc")
    x = permute(x, (0, 3, 1, 2) if batched else (2, 0, 1))
    return sigmoid(x)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def serialize(weights):
    arch = weights.arch
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<4I", arch.n_stages, arch.seed_channels, arch.out_channels,
                          len(arch.stage_channels)))
    buf.write(struct.pack(f"<{len(arch.stage_channels)}I", *arch.stage_channels))
    names = [name for name, _ in arch.layer_shapes()]
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        t = weights.layers[name].data
        enc = name.encode("utf-8")
        buf.write(struct.pack("<I", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated while reading {what} "
                                     f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize(data):
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a weight file: magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise BadVersionError(f"unsupported weight file version {version} (expected {VERSION})")
    n_stages = r.u32("arch block")
    seed_channels = r.u32("arch block")
    out_channels = r.u32("arch block")
    count = r.u32("arch block")
    if count > 64:
        raise WeightFormatError(f"implausible stage count {count}")
    stage_channels = struct.unpack(f"<{count}I", r.take(4 * count, "arch block"))
    try:
        arch = Arch(n_stages, seed_channels, stage_channels, out_channels)
    except ValueError as exc:
        raise WeightFormatError(f"invalid arch block: {exc}") from None
    n_layers = r.u32("layer count")
    expected = arch.layer_shapes()
    if n_layers != len(expected):
        raise WeightFormatError(f"arch implies {len(expected)} layers, file declares {n_layers}")
    layers = {}
    for idx, (want_name, want_shape) in enumerate(expected):
        label = f"layer {idx} ({want_name})"
        name_len = r.u32(f"{label} name length")
        name = r.take(name_len, f"{label} name").decode("utf-8", errors="replace")
        if name != want_name:
            raise WeightFormatError(f"layer {idx} is named {name!r}, expected {want_name!r}")
        rank = r.u32(f"{name} rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} dims"))
        if tuple(dims) != want_shape:
            raise WeightFormatError(f"layer {name!r} has shape {tuple(dims)}, arch requires {want_shape}")
        n = int(np.prod(dims))
        raw = r.take(4 * n, f"{name} data")
        layers[name] = Tensor(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims))
    body_end = r.pos
    crc = r.u32("checksum")
    if crc != zlib.crc32(data[:body_end]) & 0xFFFFFFFF:
        raise ChecksumError("CRC32 mismatch: weight file is corrupted")
    if r.pos != len(data):
        raise WeightFormatError(f"{len(data) - r.pos} trailing bytes after checksum")
    return DecoderWeights(arch, layers)


def save_weights(weights, path):
    with open(path, "wb") as fh:
        fh.write(serialize(weights))


def load_weights(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def import_weights(path, arch):
    """Load a weight file and require it to match ``arch``."""
    weights = load_weights(path)
    if weights.arch != arch:
        raise ArchMismatchError(f"weight file {path} has arch [{weights.arch.describe()}], "
                                f"expected [{arch.describe()}]")
    return weights
