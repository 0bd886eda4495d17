"""Procedural digit corpus for fully offline runs.

Renders 28x28 grayscale digit glyphs from installed TrueType fonts with
random font, size, position, and rotation jitter. The corpus is written
through the same IDX files the real digit datasets use, so ingestion goes
through one code path regardless of source.
"""
from __future__ import annotations

import glob
import os
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import IMAGE_SIDE, load_idx_images, load_idx_labels, write_idx

FONT_DIRS = (
    "/usr/share/fonts",
    "/usr/local/share/fonts",
    os.path.expanduser("~/.fonts"),
)

IMAGE_BASENAMES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
LABEL_BASENAMES = ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")


def find_fonts() -> list:
    """Paths of usable TrueType fonts, sorted for determinism."""
    found = []
    for root in FONT_DIRS:
        found.extend(glob.glob(os.path.join(root, "**", "*.ttf"), recursive=True))
    try:  # matplotlib ships a font set; use it when present
        import matplotlib

        mpl_fonts = os.path.join(
            os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf"
        )
        found.extend(glob.glob(os.path.join(mpl_fonts, "*.ttf")))
    except ImportError:
        pass
    return sorted(set(found))


def render_digit(
    digit: int, rng: np.random.Generator, font_paths: list
) -> np.ndarray:
    """One 28x28 digit image in [0, 1] with random glyph jitter."""
    font_path = font_paths[int(rng.integers(len(font_paths)))]
    size = int(rng.integers(18, 27))
    font = ImageFont.truetype(font_path, size)
    pad = 20
    canvas = Image.new("L", (IMAGE_SIDE + 2 * pad, IMAGE_SIDE + 2 * pad), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((pad + IMAGE_SIDE // 2, pad + IMAGE_SIDE // 2), str(digit),
              fill=255, font=font, anchor="mm")
    angle = float(rng.uniform(-14.0, 14.0))
    canvas = canvas.rotate(angle, resample=Image.BILINEAR)
    arr = np.asarray(canvas, dtype=np.float32)
    ys, xs = np.nonzero(arr)
    if len(ys) == 0:  # glyph missing from this font; caller retries
        return None
    # center the glyph's bounding box, then jitter by up to 2 px
    cy, cx = (ys.min() + ys.max()) / 2.0, (xs.min() + xs.max()) / 2.0
    jy, jx = rng.integers(-2, 3, size=2)
    top = int(round(cy)) - IMAGE_SIDE // 2 + int(jy)
    left = int(round(cx)) - IMAGE_SIDE // 2 + int(jx)
    top = min(max(top, 0), arr.shape[0] - IMAGE_SIDE)
    left = min(max(left, 0), arr.shape[1] - IMAGE_SIDE)
    crop = arr[top : top + IMAGE_SIDE, left : left + IMAGE_SIDE]
    return crop / 255.0


def render_digit_corpus(count: int, seed: int) -> tuple:
    """(images (N, 28, 28), labels (N,)) of rendered digits, class-balanced."""
    font_paths = find_fonts()
    if not font_paths:
        raise RuntimeError("no TrueType fonts found; cannot render a digit corpus")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD161]))
    images = np.empty((count, IMAGE_SIDE, IMAGE_SIDE), dtype=np.float32)
    labels = (np.arange(count) % 10).astype(np.int64)
    rng.shuffle(labels)
    for i in range(count):
        img = None
        while img is None:
            img = render_digit(int(labels[i]), rng, font_paths)
        images[i] = img
    return images, labels


def locate_idx_pair(data_dir) -> "tuple | None":
    """(images_path, labels_path) under data_dir, or None if absent."""
    root = Path(data_dir)
    for img_name in IMAGE_BASENAMES:
        for lab_name in LABEL_BASENAMES:
            for suffix in ("", ".gz"):
                img = root / (img_name + suffix)
                lab = root / (lab_name + suffix)
                if img.exists() and lab.exists():
                    return img, lab
    return None


def load_digit_corpus(
    data_dir=None, limit: "int | None" = None, seed: int = 0, cache_dir=None
) -> tuple:
    """(images, labels, source) with IDX files preferred over rendering.

    Looks for an IDX image/label pair under `data_dir` (default: the
    MVBIGAN_DATA_DIR environment variable). Without one, renders a glyph
    corpus of `limit` items, caching it as IDX files under `cache_dir`
    (or data_dir) so every load still exercises the IDX parser.
    """
    if data_dir is None:
        data_dir = os.environ.get("MVBIGAN_DATA_DIR")
    pair = locate_idx_pair(data_dir) if data_dir else None
    if pair is not None:
        images = load_idx_images(pair[0])
        labels = load_idx_labels(pair[1])
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        return images, labels, "idx"

    count = limit if limit is not None else 10000
    cache = Path(cache_dir) if cache_dir else (Path(data_dir) if data_dir else None)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        img_path = cache / f"glyphs-{count}-s{seed}-images-idx3-ubyte"
        lab_path = cache / f"glyphs-{count}-s{seed}-labels-idx1-ubyte"
        if not (img_path.exists() and lab_path.exists()):
            images, labels = render_digit_corpus(count, seed)
            write_idx(img_path, np.rint(images * 255).astype(np.uint8))
            write_idx(lab_path, labels.astype(np.uint8))
        images = load_idx_images(img_path)
        labels = load_idx_labels(lab_path)
        return images, labels, "glyphs"

    images, labels = render_digit_corpus(count, seed)
    return images, labels, "glyphs"
