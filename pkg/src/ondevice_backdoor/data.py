"""Image datasets: a procedural 10-class traffic-sign set for desk-scale
experiments, and loaders for class-per-directory or manifest layouts.

Images are float32 HxWxC arrays in [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

SIGN_CLASSES = (
    "no-overtaking", "weight-limit", "no-entry", "ahead-only", "turn-right",
    "caution", "yield", "stop", "priority-road", "parking",
)

_RED = (200, 30, 35)
_BLUE = (25, 70, 170)
_YELLOW = (240, 190, 20)
_WHITE = (245, 245, 245)
_BLACK = (20, 20, 20)


@dataclass
class ImageSet:
    images: np.ndarray  # N x H x W x C float32 in [0, 1]
    labels: np.ndarray  # N int64
    class_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ImageSet":
        idx = np.asarray(idx)
        return ImageSet(self.images[idx], self.labels[idx], self.class_names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _polygon(cx, cy, r, n, rot):
    return [(cx + r * math.cos(rot + 2 * math.pi * k / n), cy + r * math.sin(rot + 2 * math.pi * k / n))
            for k in range(n)]


def _draw_sign(d: ImageDraw.ImageDraw, cls: int, cx: float, cy: float, r: float, rot: float):
    box = (cx - r, cy - r, cx + r, cy + r)
    inner = (cx - 0.72 * r, cy - 0.72 * r, cx + 0.72 * r, cy + 0.72 * r)
    bar = 0.16 * r

    def hbar(color, length=0.55):
        d.rectangle((cx - length * r, cy - bar, cx + length * r, cy + bar), fill=color)

    def vbar(color, length=0.55):
        d.rectangle((cx - bar, cy - length * r, cx + bar, cy + length * r), fill=color)

    if cls in (0, 1):  # red ring, white centre
        d.ellipse(box, fill=_RED)
        d.ellipse(inner, fill=_WHITE)
        (hbar if cls == 0 else vbar)(_BLACK, 0.45)
    elif cls == 2:
        d.ellipse(box, fill=_RED)
        hbar(_WHITE, 0.6)
    elif cls in (3, 4):  # blue disc with an arrow
        d.ellipse(box, fill=_BLUE)
        if cls == 3:
            vbar(_WHITE, 0.45)
            d.polygon(_polygon(cx, cy - 0.3 * r, 0.4 * r, 3, -math.pi / 2), fill=_WHITE)
        else:
            hbar(_WHITE, 0.45)
            d.polygon(_polygon(cx + 0.3 * r, cy, 0.4 * r, 3, 0.0), fill=_WHITE)
    elif cls == 5:  # triangle, point up
        d.polygon(_polygon(cx, cy + 0.15 * r, 1.15 * r, 3, -math.pi / 2 + rot), fill=_RED)
        d.polygon(_polygon(cx, cy + 0.15 * r, 0.7 * r, 3, -math.pi / 2 + rot), fill=_WHITE)
        d.ellipse((cx - 0.15 * r, cy - 0.05 * r, cx + 0.15 * r, cy + 0.3 * r), fill=_BLACK)
    elif cls == 6:  # triangle, point down
        d.polygon(_polygon(cx, cy - 0.15 * r, 1.15 * r, 3, math.pi / 2 + rot), fill=_RED)
        d.polygon(_polygon(cx, cy - 0.15 * r, 0.65 * r, 3, math.pi / 2 + rot), fill=_WHITE)
    elif cls == 7:  # octagon
        d.polygon(_polygon(cx, cy, r, 8, math.pi / 8 + rot), fill=_RED)
        hbar(_WHITE, 0.5)
    elif cls == 8:  # diamond
        d.polygon(_polygon(cx, cy, r, 4, rot), fill=_WHITE)
        d.polygon(_polygon(cx, cy, 0.7 * r, 4, rot), fill=_YELLOW)
    else:  # square with a white "P" block
        d.polygon(_polygon(cx, cy, 1.15 * r, 4, math.pi / 4 + rot), fill=_BLUE)
        d.rectangle((cx - 0.35 * r, cy - 0.5 * r, cx - 0.1 * r, cy + 0.5 * r), fill=_WHITE)
        d.ellipse((cx - 0.3 * r, cy - 0.5 * r, cx + 0.35 * r, cy + 0.05 * r), fill=_WHITE)


def render_sign(cls: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One randomized sign of class `cls`, rendered 2x and downsampled."""
    s = size * 2
    # background: random two-colour vertical gradient
    top = rng.uniform(0, 255, 3)
    bottom = rng.uniform(0, 255, 3)
    t = np.linspace(0, 1, s)[:, None, None]
    bg = (top * (1 - t) + bottom * t) * np.ones((1, s, 1))
    img = Image.fromarray(bg.astype(np.uint8), "RGB")
    d = ImageDraw.Draw(img)
    # clutter
    for _ in range(int(rng.integers(0, 3))):
        x0, y0 = rng.uniform(0, s, 2)
        w, h = rng.uniform(4, s / 2, 2)
        d.rectangle((x0, y0, x0 + w, y0 + h), fill=tuple(int(v) for v in rng.uniform(0, 255, 3)))
    r = rng.uniform(0.3, 0.42) * s
    cx, cy = s / 2 + rng.uniform(-0.08, 0.08, 2) * s
    _draw_sign(d, int(cls), cx, cy, r, rng.uniform(-0.12, 0.12))
    img = img.filter(ImageFilter.GaussianBlur(rng.uniform(0.0, 1.2)))
    img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, np.float32) / 255.0
    arr = arr * rng.uniform(0.55, 1.25) + rng.uniform(-0.1, 0.1)
    arr = arr + rng.normal(0, 0.02, arr.shape)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def synthetic_signs(n: int, seed: int, size: int = 32, num_classes: int = 10) -> ImageSet:
    """Balanced (up to remainder) randomized traffic-sign images."""
    if not 2 <= num_classes <= len(SIGN_CLASSES):
        raise ValueError(f"num_classes must be in [2, {len(SIGN_CLASSES)}]")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    images = np.stack([render_sign(c, rng, size) for c in labels]) if n else \
        np.zeros((0, size, size, 3), np.float32)
    return ImageSet(images, labels.astype(np.int64), SIGN_CLASSES[:num_classes])


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), np.float32) / 255.0


def save_dataset(root, data: ImageSet, manifest: bool = True) -> Path:
    """Class-per-subdirectory PNG layout; also writes manifest.csv."""
    root = Path(root)
    rows = []
    for i, (img, lab) in enumerate(zip(data.images, data.labels)):
        name = data.class_names[int(lab)]
        sub = root / f"{int(lab):02d}_{name}"
        sub.mkdir(parents=True, exist_ok=True)
        p = sub / f"{i:06d}.png"
        save_png(p, img)
        rows.append((str(p.relative_to(root)), int(lab)))
    if manifest:
        with open(root / "manifest.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("path", "label"))
            w.writerows(rows)
    return root


def load_directory(root, size: int | None = None) -> ImageSet:
    """Class-per-subdirectory layout; classes ordered by directory name."""
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no class directories under {root}")
    images, labels = [], []
    for k, d in enumerate(dirs):
        for p in sorted(d.glob("*.png")):
            images.append(_sized(load_png(p), size))
            labels.append(k)
    names = tuple(d.name.split("_", 1)[1] if d.name[:2].isdigit() and "_" in d.name else d.name
                  for d in dirs)
    return ImageSet(np.stack(images), np.asarray(labels, np.int64), names)


def load_manifest(path, class_names=None, size: int | None = None) -> ImageSet:
    """CSV manifest with `path,label` columns; paths relative to the manifest."""
    path = Path(path)
    images, labels = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            images.append(_sized(load_png(path.parent / row["path"]), size))
            labels.append(int(row["label"]))
    labels = np.asarray(labels, np.int64)
    if class_names is None:
        class_names = tuple(str(i) for i in range(int(labels.max()) + 1))
    return ImageSet(np.stack(images), labels, tuple(class_names))


def load_dataset(path, size: int | None = None) -> ImageSet:
    p = Path(path)
    if p.is_file():
        return load_manifest(p, size=size)
    if (p / "manifest.csv").exists():
        names = tuple(d.name.split("_", 1)[1] if "_" in d.name else d.name
                      for d in sorted(x for x in p.iterdir() if x.is_dir()))
        return load_manifest(p / "manifest.csv", names or None, size)
    return load_directory(p, size)


def _sized(img: np.ndarray, size: int | None) -> np.ndarray:
    if size is None or img.shape[:2] == (size, size):
        return img
    return np.asarray(Image.fromarray(to_uint8(img)).resize((size, size), Image.BILINEAR),
                      np.float32) / 255.0
