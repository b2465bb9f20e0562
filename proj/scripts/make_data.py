#!/usr/bin/env python3
"""Prepare the bundled grayscale corpus and libjpeg golden references.

Sources are the public-domain sample images shipped with scikit-image.
Color images are converted to BT.601 luminance and all dimensions are
cropped to even sizes. Golden files are real libjpeg encode/decode round
trips (via Pillow) used by the test suite to validate the quantization
simulator against an actual JPEG codec.

Outputs are committed to the repository; rerun only to regenerate them.
"""

import os

import numpy as np
import skimage.data
import skimage.io
from PIL import Image

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

TRAIN = [
    "camera", "brick", "grass", "gravel", "coins", "clock",
    "astronaut", "coffee", "chelsea", "immunohistochemistry",
    "motorcycle_left",
]
EVAL = ["moon", "page", "text", "cell", "motorcycle_right"]

# Golden libjpeg references: all four quality factors for two eval images,
# QF=10 for the rest.
GOLDEN_FULL = ["moon", "page"]
GOLDEN_QFS = [10, 20, 30, 40]


def load(name):
    data_dir = os.path.dirname(skimage.data.__file__)
    if name in ("motorcycle_left", "motorcycle_right"):
        arr = skimage.io.imread(os.path.join(data_dir, name + ".png"))
    else:
        arr = getattr(skimage.data, name)()
    if arr.ndim == 3:
        rgb = arr[..., :3].astype(np.float64)
        luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        arr = np.clip(np.round(luma), 0, 255).astype(np.uint8)
    h, w = arr.shape
    return arr[: h - h % 2, : w - w % 2]


def save_png(arr, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    Image.fromarray(arr, mode="L").save(path)
    print(f"{path}  {arr.shape[1]}x{arr.shape[0]}")


def main():
    for name in TRAIN:
        save_png(load(name), os.path.join(ROOT, "data", "train", name + ".png"))
    for name in EVAL:
        arr = load(name)
        save_png(arr, os.path.join(ROOT, "data", "eval", name + ".png"))
        qfs = GOLDEN_QFS if name in GOLDEN_FULL else [10]
        for qf in qfs:
            tmp = os.path.join("/tmp", f"{name}_q{qf}.jpg")
            Image.fromarray(arr, mode="L").save(tmp, quality=qf)
            dec = np.asarray(Image.open(tmp).convert("L"))
            save_png(dec, os.path.join(ROOT, "tests", "data", "golden",
                                       f"{name}_q{qf}.png"))
            os.remove(tmp)


if __name__ == "__main__":
    main()
