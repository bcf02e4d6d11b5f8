"""Desk-scale decoder pretraining by generative latent optimisation.

A shared decoder and one learnable seed per corpus image are fitted jointly to
reconstruct the corpus.  The result plays the role of the pretrained
reflectance generator at enhancement time.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from .decoder import ArchMismatchError, import_weights  # noqa: F401  (re-exported)
from .metrics import psnr
from .optim import Adam, NonFiniteError
from .tensor import Tensor, mean, no_grad, stack

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    lr: float = 3e-4
    epochs: int = 200
    batch: int = 4
    resolution: int = 128
    rng_seed: int = 0


@dataclass
class PretrainResult:
    weights: dec.DecoderWeights
    epoch_losses: list    # mean per-image MSE for each epoch
    final_psnr: list      # per corpus image
    seeds: list


def _check_corpus(corpus, arch, config):
    if len(corpus) == 0:
        raise ValueError("pretraining corpus is empty")
    if config.resolution % arch.scale:
        raise ValueError(f"resolution {config.resolution} is not a multiple of {arch.scale}")
    images = []
    for i, img in enumerate(corpus):
        img = np.asarray(img, dtype=np.float32)
        want = (arch.out_channels, config.resolution, config.resolution)
        if img.shape != want:
            raise ValueError(f"corpus image {i} has shape {img.shape}, expected {want}")
        images.append(img)
    return images


def pretrain(corpus, arch, config, init=None, on_epoch=None):
    """Fit shared decoder weights to ``corpus`` (a list of C x R x R arrays).

    Returns a :class:`PretrainResult`; with ``epochs=0`` the weights are the
    untouched random initialisation.
    """
    images = _check_corpus(corpus, arch, config)
    ss = np.random.SeedSequence(config.rng_seed)
    w_ss, z_ss, order_ss = ss.spawn(3)
    weights = init.copy() if init is not None else dec.init_random(arch, w_ss)
    zrng = np.random.default_rng(z_ss)
    order_rng = np.random.default_rng(order_ss)
    R = config.resolution
    seeds = [dec.init_seed(arch, R, R, zrng) for _ in images]
    for i, z in enumerate(seeds):
        z.name = f"seed{i}"
    targets = [Tensor(img) for img in images]
    weights.set_trainable(True)
    leaves = weights.tensors() + seeds
    names = [n for n, _ in arch.layer_shapes()] + [z.name for z in seeds]
    opt = Adam(leaves, lr=config.lr, names=names)
    batch = max(1, int(config.batch))

    epoch_losses = []
    for epoch in range(config.epochs):
        perm = order_rng.permutation(len(images))
        losses = []
        for start in range(0, len(perm), batch):
            idx = perm[start:start + batch]
            opt.zero_grad()
            out = dec.decode(stack([seeds[i] for i in idx]), weights, freeze=False)
            diff = out - stack([targets[i] for i in idx])
            per_image = mean(mean(diff * diff, axis=(2, 3)), axis=1)  # B
            loss = per_image.sum()
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"non-finite pretraining loss in epoch {epoch}", epoch)
            loss.backward()
            opt.step(iteration=epoch)
            losses.extend(per_image.data.tolist())
        epoch_loss = float(np.mean(losses))
        epoch_losses.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)

    weights.set_trainable(False)
    final = []
    with no_grad():
        for z, img in zip(seeds, images):
            final.append(psnr(dec.decode(z, weights).data, img))
    return PretrainResult(weights, epoch_losses, final, [z.data.copy() for z in seeds])


def fit_seed(image, weights, iterations, lr=1e-2, rng_seed=0):
    """Seed-only reconstruction of one image with frozen weights; returns (PSNR, output)."""
    image = np.asarray(image, dtype=np.float32)
    _, H, W = image.shape
    z = dec.init_seed(weights.arch, H, W, np.random.default_rng(rng_seed))
    target = Tensor(image)
    opt = Adam([z], lr=lr, names=["seed"])
    for t in range(iterations):
        opt.zero_grad()
        d = dec.decode(z, weights, freeze=True) - target
        mean(d * d).backward()
        opt.step(iteration=t)
    with no_grad():
        out = dec.decode(z, weights, freeze=True).data
    return psnr(out, image), out
