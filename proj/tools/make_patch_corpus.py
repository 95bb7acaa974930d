#!/usr/bin/env python3
"""Build a small CIFAR-10-format corpus of 32x32 patches from bundled sample images.

Used when the real CIFAR-10 binaries are unavailable. Each source image is
split by rows into disjoint regions: the top 70% feeds train, the next 15%
validation and the bottom 15% test, so no pixel appears in two splits.
Patches with a pixel standard deviation below 4 are redrawn.

Output (CIFAR-10 binary layout, 1 label byte + 3072 CHW bytes per record):
  data_batch_1.bin  train records followed by validation records
  test_batch.bin    test records
"""

import argparse
import pathlib
import warnings

import numpy as np

PATCH = 32
MIN_STD = 4.0


def sources():
    import skimage.data as data
    from sklearn.datasets import load_sample_images

    images = []
    for name in ("astronaut", "chelsea", "coffee", "rocket", "retina", "immunohistochemistry",
                 "hubble_deep_field"):
        images.append(getattr(data, name)())
    images.append(data.stereo_motorcycle()[0])
    images.extend(load_sample_images().images)
    out = []
    for im in images:
        im = np.asarray(im, dtype=np.uint8)[..., :3]
        out.append(im)
        # Half-resolution copy: objects closer to the CIFAR scale.
        h, w = im.shape[0] // 2 * 2, im.shape[1] // 2 * 2
        if h // 2 * 0.15 >= PATCH:
            half = im[:h, :w].reshape(h // 2, 2, w // 2, 2, 3).mean(axis=(1, 3))
            out.append(np.round(half).astype(np.uint8))
    return out


def sample(images, lo, hi, count, rng):
    """`count` patches whose rows lie entirely inside [lo, hi) of each image height."""
    records = []
    per_image = np.full(len(images), count // len(images))
    per_image[: count % len(images)] += 1
    for label, (im, n) in enumerate(zip(images, per_image)):
        h, w, _ = im.shape
        r0, r1 = int(lo * h), int(hi * h) - PATCH
        if r1 < r0 or w < PATCH:
            raise SystemExit(f"source {label} too small for region [{lo}, {hi})")
        for _ in range(n):
            # Near-constant patches (dark sky, blank background) are redrawn.
            for _ in range(1000):
                y = rng.integers(r0, r1 + 1)
                x = rng.integers(0, w - PATCH + 1)
                patch = im[y:y + PATCH, x:x + PATCH].transpose(2, 0, 1)  # CHW
                if patch.std() >= MIN_STD:
                    break
            else:
                raise SystemExit(f"source {label}: no textured patch in region [{lo}, {hi})")
            records.append(np.concatenate([[label % 256], patch.reshape(-1)]).astype(np.uint8))
    order = rng.permutation(len(records))
    return [records[i] for i in order]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--val", type=int, default=500)
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    warnings.filterwarnings("ignore")
    rng = np.random.default_rng(args.seed)
    images = sources()
    train = sample(images, 0.0, 0.70, args.train, rng)
    val = sample(images, 0.70, 0.85, args.val, rng)
    test = sample(images, 0.85, 1.00, args.test, rng)

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "data_batch_1.bin").write_bytes(b"".join(r.tobytes() for r in train + val))
    (args.out / "test_batch.bin").write_bytes(b"".join(r.tobytes() for r in test))
    print(f"{args.out}: {len(train)} train, {len(val)} val, {len(test)} test from {len(images)} sources")


if __name__ == "__main__":
    main()
