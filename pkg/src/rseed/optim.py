"""Optimisers and the per-image enhancement loop."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from .config import ConfigError, EnhanceConfig, InitSetting, OptimizationMode
from .losses import compute_losses, illumination_target
from .retinex import GammaParam, RetinexState, enhance_compose
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class NonFiniteError(RuntimeError):
    """Raised when a loss or gradient stops being finite; carries the iteration."""

    def __init__(self, message, iteration, trace=()):
        super().__init__(message)
        self.iteration = iteration
        self.trace = list(trace)


class ImageTooSmallError(ValueError):
    pass


def gd_step(leaf, lr):
    """Plain gradient descent: returns ``leaf - lr * grad``."""
    if leaf.grad is None:
        raise ValueError(f"leaf {leaf.name or leaf.shape} has no gradient")
    return Tensor(leaf.data - leaf.dtype.type(lr) * leaf.grad, requires_grad=leaf.requires_grad,
                  name=leaf.name)


class Adam:
    """Bias-corrected Adam over a fixed list of leaves, updated in place.

    Leaves whose ``grad`` is None are skipped and keep their own step count,
    so a leaf that only sometimes takes part (a per-image seed) is not dragged
    along by stale momentum.
    """

    def __init__(self, leaves, lr=1e-2, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.leaves = list(leaves)
        self.names = list(names) if names else [t.name or f"leaf{i}" for i, t in enumerate(self.leaves)]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = [0] * len(self.leaves)
        self.m = [np.zeros_like(t.data) for t in self.leaves]
        self.v = [np.zeros_like(t.data) for t in self.leaves]

    @property
    def t(self):
        return max(self.steps, default=0)

    def zero_grad(self):
        for t in self.leaves:
            t.grad = None

    def step(self, iteration=None):
        for name, t in zip(self.names, self.leaves):
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                where = "" if iteration is None else f" at iteration {iteration}"
                raise NonFiniteError(f"non-finite gradient in {name}{where}", iteration)
        for i, (t, m, v) in enumerate(zip(self.leaves, self.m, self.v)):
            g = t.grad
            if g is None:
                continue
            self.steps[i] += 1
            k = self.steps[i]
            dt = t.dtype.type
            m *= dt(self.beta1)
            m += dt(1 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1 - self.beta2) * (g * g)
            m_hat = m / dt(1.0 - self.beta1 ** k)
            v_hat = v / dt(1.0 - self.beta2 ** k)
            t.data -= dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))


@dataclass
class EnhanceResult:
    image: np.ndarray            # 3 x H x W enhanced result, original size
    reflectance: np.ndarray      # 3 x H x W
    illumination: np.ndarray     # 1 x H x W
    gamma: float
    trace: list = field(default_factory=list)       # per-iteration loss dicts
    iter_times: list = field(default_factory=list)  # seconds per iteration
    weight_hashes_before: dict = field(default_factory=dict)
    weight_hashes_after: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def mean_iter_time(self):
        return float(np.mean(self.iter_times)) if self.iter_times else 0.0


def pad_to_multiple(image, multiple):
    """Reflect-pad a C x H x W array on the bottom/right to a multiple of ``multiple``."""
    _, H, W = image.shape
    if H < multiple or W < multiple:
        raise ImageTooSmallError(f"image is {H}x{W}; at least {multiple}x{multiple} pixels "
                                 f"are needed for a {multiple.bit_length() - 1}-stage decoder")
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(image)
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def log_line(t, rec):
    return (f"iter={t} l_re={rec['l_re']:.6f} l_e={rec['l_e']:.6f} l_s={rec['l_s']:.6f} "
            f"l_i={rec['l_i']:.6f} total={rec['total']:.6f} gamma={rec['gamma']:.6f}")


def _weight_rngs(rng_seed):
    ss = np.random.SeedSequence(rng_seed)
    seeds_ss, wr_ss, wl_ss = ss.spawn(3)
    return seeds_ss, wr_ss, wl_ss


def build_decoders(config, default_weights_r=None):
    """Reflectance and illumination decoders for ``config.init``.

    Pretrained weights come from ``config.weights_r`` / ``config.weights_l``,
    falling back to ``default_weights_r`` for the reflectance decoder.
    """
    arch_r, arch_l = config.arch(3), config.arch(1)
    _, wr_ss, wl_ss = _weight_rngs(config.rng_seed)
    init = config.init
    if init is InitSetting.RANDOM_ALL:
        return dec.init_random(arch_r, wr_ss), dec.init_random(arch_l, wl_ss)
    path_r = config.weights_r or default_weights_r
    if not path_r:
        raise ConfigError(f"init setting {init.value!r} needs a reflectance weight file (weights_r)")
    weights_r = dec.import_weights(path_r, arch_r)
    if init is InitSetting.PRETRAINED_BOTH:
        if not config.weights_l:
            raise ConfigError("init setting 'pretrained-both' needs an illumination weight file (weights_l)")
        return weights_r, dec.import_weights(config.weights_l, arch_l)
    return weights_r, dec.init_random(arch_l, wl_ss)


def run(i_low, weights_r, weights_l, config, on_iteration=None, snapshot=None):
    """Optimise one image.

    ``i_low`` is a 3 x H x W float array in [0, 1].  The learnable set depends
    on ``config.mode``; decoder weights are updated in place in the params and
    joint modes and never touched in seed mode.  ``on_iteration(t, record)`` is
    called after every step, ``snapshot(t, R, L, result, record)`` every
    ``config.snapshot_every`` steps.
    """
    if not isinstance(config, EnhanceConfig):
        raise TypeError("config must be an EnhanceConfig")
    i_low = np.asarray(i_low, dtype=np.float32)
    if i_low.ndim != 3 or i_low.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W image, got {i_low.shape}")
    if weights_r.arch.out_channels != 3 or weights_l.arch.out_channels != 1:
        raise dec.ArchMismatchError("reflectance decoder must output 3 channels, illumination 1")
    if weights_r.arch.scale != weights_l.arch.scale:
        raise dec.ArchMismatchError("both decoders need the same number of upsampling stages")
    _, H0, W0 = i_low.shape
    padded = pad_to_multiple(i_low, weights_r.arch.scale)
    _, H, W = padded.shape

    image = Tensor(padded)
    target = illumination_target(image)
    weights = config.loss_weights()
    seeds_ss, _, _ = _weight_rngs(config.rng_seed)
    rng = np.random.default_rng(seeds_ss)
    z_r = dec.init_seed(weights_r.arch, H, W, rng)
    z_l = dec.init_seed(weights_l.arch, H, W, rng)
    z_r.name, z_l.name = "seed_r", "seed_l"
    gamma = GammaParam(config.gamma_init)

    mode = config.mode
    train_seeds = mode in (OptimizationMode.SEED_ONLY, OptimizationMode.JOINT)
    train_weights = mode in (OptimizationMode.PARAMS_ONLY, OptimizationMode.JOINT)
    z_r.requires_grad = z_l.requires_grad = train_seeds
    leaves, names = [], []
    if train_seeds:
        leaves += [z_r, z_l]
        names += ["seed_r", "seed_l"]
    if train_weights:
        for tag, w in (("r", weights_r), ("l", weights_l)):
            for lname, _ in w.arch.layer_shapes():
                leaves.append(w.layers[lname])
                names.append(f"G_{tag}.{lname}")
    leaves.append(gamma.tensor)
    names.append("gamma")
    opt = Adam(leaves, lr=config.lr, names=names)

    hashes_before = {"r": weights_r.sha256(), "l": weights_l.sha256()}
    trace, times = [], []
    freeze = not train_weights

    for t in range(config.iterations):
        start = time.perf_counter()
        opt.zero_grad()
        state = RetinexState(dec.decode(z_r, weights_r, freeze=freeze),
                             dec.decode(z_l, weights_l, freeze=freeze),
                             gamma.tensor)
        total, parts = compute_losses(image, target, state, weights)
        rec = {k: float(v.data) for k, v in parts.items()}
        rec["total"] = float(total.data)
        rec["gamma"] = gamma.value
        if not np.isfinite(rec["total"]):
            raise NonFiniteError(f"non-finite loss at iteration {t}", t, trace + [rec])
        total.backward()
        opt.step(iteration=t)
        gamma.clamp()
        times.append(time.perf_counter() - start)
        trace.append(rec)
        if on_iteration is not None:
            on_iteration(t, rec)
        if snapshot is not None and config.snapshot_every and (t + 1) % config.snapshot_every == 0:
            with no_grad():
                r_now = dec.decode(z_r, weights_r, freeze=freeze).data[:, :H0, :W0]
                l_now = dec.decode(z_l, weights_l, freeze=freeze).data[:, :H0, :W0]
            snapshot(t + 1, r_now, l_now, r_now * np.power(l_now, np.float32(gamma.value)), rec)

    with no_grad():
        r_fin = dec.decode(z_r, weights_r, freeze=freeze)
        l_fin = dec.decode(z_l, weights_l, freeze=freeze)
        out = enhance_compose(RetinexState(r_fin, l_fin, gamma.tensor))
    weights_r.set_trainable(False)
    weights_l.set_trainable(False)

    return EnhanceResult(
        image=np.ascontiguousarray(out.data[:, :H0, :W0]),
        reflectance=np.ascontiguousarray(r_fin.data[:, :H0, :W0]),
        illumination=np.ascontiguousarray(l_fin.data[:, :H0, :W0]),
        gamma=gamma.value,
        trace=trace,
        iter_times=times,
        weight_hashes_before=hashes_before,
        weight_hashes_after={"r": weights_r.sha256(), "l": weights_l.sha256()},
        seeds={"r": z_r.data.copy(), "l": z_l.data.copy()},
    )
