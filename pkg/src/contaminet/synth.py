"""Deterministic synthetic dataset: photos of colored geometric shapes.

Each label corresponds to one shape kind; any subset (including none, a
"clean bin") can appear in an image.  Shape placement, size and color jitter
come from per-image substreams of the dataset seed, so regenerating with the
same arguments reproduces every file byte for byte.  Test images additionally
get R synthetic raters derived from the true labels by independent per-label
bit flips.
"""

import json
import os

import numpy as np
from PIL import Image

from .data import derive_rng

SHAPE_LABELS = ("circle", "square", "triangle", "stripe")

# dominant-channel color ranges per shape, (low, high) per RGB channel
_COLOR_RANGES = {
    "circle": ((170, 255), (0, 70), (0, 70)),
    "square": ((0, 70), (170, 255), (0, 70)),
    "triangle": ((0, 70), (0, 70), (170, 255)),
    "stripe": ((170, 255), (170, 255), (0, 70)),
}


def _pick_color(rng, label):
    return np.array([rng.integers(lo, hi + 1) for lo, hi in _COLOR_RANGES[label]], dtype=np.float64)


def render_image(rng, height, width):
    """One (H,W,3) uint8 image plus the set of planted shape labels."""
    base = rng.uniform(20.0, 60.0)
    img = base + rng.normal(0.0, 8.0, size=(height, width, 3))
    yy = np.arange(height)[:, None]
    xx = np.arange(width)[None, :]
    present = rng.random(len(SHAPE_LABELS)) < 0.5
    labels = set()
    scale = min(height, width)
    for label, here in zip(SHAPE_LABELS, present):
        if not here:
            continue
        labels.add(label)
        color = _pick_color(rng, label)
        size = rng.uniform(0.14, 0.26) * scale
        cy = rng.uniform(size, height - size)
        cx = rng.uniform(size, width - size)
        if label == "circle":
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size**2
        elif label == "square":
            mask = (np.abs(yy - cy) <= size * 0.9) & (np.abs(xx - cx) <= size * 0.9)
        elif label == "triangle":
            # apex-up isoceles triangle inscribed in a 2*size tall box
            rel = (yy - (cy - size)) / (2.0 * size)
            mask = (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= rel * size)
        else:  # stripe: band through a random point at a random orientation
            theta = rng.uniform(0.0, np.pi)
            dist = np.abs(np.cos(theta) * (xx - cx) + np.sin(theta) * (yy - cy))
            mask = dist <= max(2.0, 0.35 * size)
        img[mask] = color + rng.normal(0.0, 5.0, size=3)
    return np.clip(img, 0, 255).astype(np.uint8), labels


def generate_dataset(
    out_dir,
    n_train=2000,
    n_valid=400,
    n_test=200,
    image_size=(80, 106),
    seed=0,
    n_raters=4,
    rater_flip_prob=0.1,
):
    """Write images/, manifest.csv, raters.csv and dataset.json under out_dir."""
    height, width = image_size
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)

    manifest_rows = []
    test_truth = []
    idx = 0
    for split, count in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        for _ in range(count):
            rng = derive_rng(seed, 1, idx)
            img, labels = render_image(rng, height, width)
            rel = f"images/img_{idx:05d}.png"
            Image.fromarray(img).save(os.path.join(out_dir, rel))
            ordered = [l for l in SHAPE_LABELS if l in labels]
            manifest_rows.append((rel, split, ";".join(ordered)))
            if split == "test":
                test_truth.append((rel, labels))
            idx += 1

    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("image_path,split,labels\n")
        for rel, split, labels in manifest_rows:
            fh.write(f"{rel},{split},{labels}\n")

    raters_path = os.path.join(out_dir, "raters.csv")
    with open(raters_path, "w", encoding="utf-8") as fh:
        fh.write("image_path,rater_id,labels\n")
        for rater in range(1, n_raters + 1):
            for j, (rel, truth) in enumerate(test_truth):
                rng = derive_rng(seed, 2, rater, j)
                flips = rng.random(len(SHAPE_LABELS)) < rater_flip_prob
                rated = [
                    l
                    for l, flip in zip(SHAPE_LABELS, flips)
                    if (l in truth) != flip
                ]
                fh.write(f"{rel},{rater},{';'.join(rated)}\n")

    summary = {
        "labels": list(SHAPE_LABELS),
        "n_train": n_train,
        "n_valid": n_valid,
        "n_test": n_test,
        "image_size": [height, width],
        "seed": seed,
        "n_raters": n_raters,
        "rater_flip_prob": rater_flip_prob,
        "manifest": "manifest.csv",
        "raters": "raters.csv",
    }
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary
