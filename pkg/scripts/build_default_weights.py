"""Rebuild the bundled reflectance decoder weights.

The corpus is 36 crops of 128 x 128 from the two scikit-learn sample
photographs (china.jpg, flower.jpg): a non-overlapping grid of native crops
plus three crops of each photo at half scale.  None of the scikit-image test
photographs used by the acceptance suite appear in it.

    python scripts/build_default_weights.py [--epochs 1000] [-o src/rseed/data/default_r.rswt]
"""

import argparse
import time
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.datasets import load_sample_images

from rseed import decoder as dec
from rseed.pretrain import PretrainConfig, pretrain

CROP = 128


def corpus():
    out = []
    for photo in load_sample_images().images:
        h, w, _ = photo.shape
        for y in range(0, h - CROP + 1, 149):
            for x in range(0, w - CROP + 1, CROP):
                out.append(photo[y:y + CROP, x:x + CROP])
        half = np.asarray(Image.fromarray(photo).resize((w // 2, h // 2), Image.BOX))
        for x in (0, 96, 192):
            out.append(half[42:42 + CROP, x:x + CROP])
    return [(c.astype(np.float32) / 255).transpose(2, 0, 1).copy() for c in out]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--rng-seed", type=int, default=0)
    ap.add_argument("-o", "--output", default=str(Path(__file__).resolve().parents[1] / "src/rseed/data/default_r.rswt"))
    args = ap.parse_args()
    images = corpus()
    start = time.time()

    def report(epoch, loss):
        if epoch % 10 == 0:
            print(f"epoch={epoch} loss={loss:.5f} t={time.time() - start:.0f}s", flush=True)

    result = pretrain(images, dec.Arch(), PretrainConfig(epochs=args.epochs, rng_seed=args.rng_seed), on_epoch=report)
    print(f"images={len(images)} mean_psnr={np.mean(result.final_psnr):.2f}")
    dec.save_weights(result.weights, args.output)
    print("wrote", args.output)


if __name__ == "__main__":
    main()
