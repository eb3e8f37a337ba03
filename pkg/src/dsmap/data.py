"""Unpaired two-domain image folders and a synthetic toy dataset.

Folder layout is ``root/{trainA,trainB,testA,testB}``. The toy dataset draws
one shape per image: geometry (position, size) is the content and follows the
same distribution in both domains; palette and primitive are the style
(warm squares for A, cool circles for B).
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .model import Domain, as_domain

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ("filename", "domain", "shape_x", "shape_y", "shape_size", "hue")

# Hue ranges in degrees. Sampling ranges sit inside the accepted ranges so 8-bit
# quantization never pushes a pixel out of its palette.
WARM_SAMPLE = (10.0, 50.0)
COOL_SAMPLE = (190.0, 250.0)
WARM_RANGE = (0.0, 60.0)
COOL_RANGE = (180.0, 260.0)
SHAPE_SV = (0.9, 1.0)
BACKGROUND_SV = (0.6, 0.3)
SHAPE_VALUE_THRESHOLD = 0.65


class DatasetError(RuntimeError):
    pass


class CorruptImageWarning(UserWarning):
    pass


def normalize(img: np.ndarray) -> np.ndarray:
    """uint8 HxWx3 -> float32 3xHxW in [-1, 1]."""
    return (img.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def denormalize(x) -> np.ndarray:
    """float 3xHxW in [-1, 1] -> uint8 HxWx3."""
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64).transpose(1, 2, 0)
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# folders


@dataclass
class DatasetSpec:
    root: str
    image_size: int = 64
    load_size: Optional[int] = None  # resize target before cropping; defaults to image_size
    resize: bool = True
    random_crop: bool = False
    horizontal_flip: bool = False
    seed: int = 0

    def folder(self, domain, split: str = "train") -> Path:
        return Path(self.root) / f"{split}{as_domain(domain).value}"

    def validate(self, splits=("train",)):
        for split in splits:
            for d in Domain:
                f = self.folder(d, split)
                if not f.is_dir():
                    raise DatasetError(f"missing folder {f}")
                if not any(p.suffix.lower() in IMAGE_EXTENSIONS for p in f.iterdir()):
                    raise DatasetError(f"folder {f} holds no images")


def list_images(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DatasetError(f"missing folder {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def read_image(path, size: Optional[int]) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).copy()


class ImageFolder:
    """All decodable images of one folder, held in memory as uint8."""

    def __init__(self, folder, size: Optional[int]):
        self.folder = Path(folder)
        paths = list_images(folder)
        if not paths:
            raise DatasetError(f"folder {folder} holds no images")
        names, images = [], []
        for p in paths:
            try:
                images.append(read_image(p, size))
            except Exception as exc:  # PIL raises a zoo of types for bad files
                warnings.warn(f"skipping unreadable image {p}: {exc}", CorruptImageWarning, stacklevel=2)
                continue
            names.append(p.name)
        if not images:
            raise DatasetError(f"no readable images in {folder}")
        self.names = names
        self.images = np.stack(images)

    def __len__(self):
        return len(self.images)

    def tensor(self, indices=None) -> torch.Tensor:
        imgs = self.images if indices is None else self.images[np.asarray(indices)]
        return torch.from_numpy(np.stack([normalize(im) for im in imgs]))


def augment(img: np.ndarray, spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    if spec.random_crop and img.shape[0] > s:
        top = int(rng.integers(0, img.shape[0] - s + 1))
        left = int(rng.integers(0, img.shape[1] - s + 1))
        img = img[top:top + s, left:left + s]
    elif img.shape[0] != s or img.shape[1] != s:
        off_y, off_x = (img.shape[0] - s) // 2, (img.shape[1] - s) // 2
        img = img[off_y:off_y + s, off_x:off_x + s]
    if spec.horizontal_flip and rng.random() < 0.5:
        img = img[:, ::-1]
    return np.ascontiguousarray(img)


def open_domain(spec: DatasetSpec, domain, split: str = "train") -> ImageFolder:
    size = (spec.load_size or spec.image_size) if spec.resize else None
    return ImageFolder(spec.folder(domain, split), size)


def assemble(folder: ImageFolder, indices, spec: DatasetSpec, rng: np.random.Generator) -> torch.Tensor:
    imgs = [normalize(augment(folder.images[i], spec, rng)) for i in indices]
    return torch.from_numpy(np.stack(imgs))


def load_batch(spec: DatasetSpec, domain, batch_size: int, rng: np.random.Generator,
               split: str = "train") -> torch.Tensor:
    """Random batch from one domain folder, normalized to [-1, 1] and augmented."""
    folder = open_domain(spec, domain, split)
    replace = batch_size > len(folder)
    indices = rng.choice(len(folder), size=batch_size, replace=replace)
    return assemble(folder, indices, spec, rng)


def schedule_indices(n: int, step: int, batch_size: int, seed: int, stream: int) -> list[int]:
    """Indices for training step ``step`` (1-based): a fresh permutation per epoch."""
    out = []
    for j in range(batch_size):
        pos = (step - 1) * batch_size + j
        epoch, k = divmod(pos, n)
        perm = np.random.default_rng([seed, stream, epoch]).permutation(n)
        out.append(int(perm[k]))
    return out


# ---------------------------------------------------------------------------
# toy dataset


@dataclass
class ToySpec:
    n_per_domain: int = 64
    image_size: int = 32
    seed: int = 0
    test_fraction: float = 0.0
    min_size_frac: float = 0.25
    max_size_frac: float = 0.4


def hsv_to_rgb(h_deg, s, v) -> np.ndarray:
    """Vectorized HSV -> RGB in [0, 1]; hue in degrees."""
    h = np.mod(np.asarray(h_deg, dtype=np.float64), 360.0) / 60.0
    s, v = np.asarray(s, dtype=np.float64), np.asarray(v, dtype=np.float64)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.choose(i, [c[0] * np.ones_like(h) for c in table])
    g = np.choose(i, [c[1] * np.ones_like(h) for c in table])
    b = np.choose(i, [c[2] * np.ones_like(h) for c in table])
    return np.stack([r, g, b], axis=-1)


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB in [0, 1] (last axis) -> (hue degrees, saturation, value)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx, mn = rgb.max(-1), rgb.min(-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, np.mod((g - b) / safe, 6.0),
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h * 60.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def draw_toy(image_size: int, domain, cx: float, cy: float, size: float, hue: float) -> np.ndarray:
    domain = as_domain(domain)
    yy, xx = np.mgrid[0:image_size, 0:image_size] + 0.5
    if domain is Domain.A:
        mask = (np.abs(xx - cx) <= size / 2) & (np.abs(yy - cy) <= size / 2)
    else:
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= (size / 2) ** 2
    fg = hsv_to_rgb(hue, *SHAPE_SV)
    bg = hsv_to_rgb(hue, *BACKGROUND_SV)
    img = np.where(mask[..., None], fg, bg)
    return np.rint(img * 255).astype(np.uint8)


def sample_toy_factors(spec: ToySpec, domain, rng: np.random.Generator):
    domain = as_domain(domain)
    s = spec.image_size
    size = float(rng.integers(int(round(spec.min_size_frac * s)), int(round(spec.max_size_frac * s)) + 1))
    lo, hi = size / 2 + 1, s - size / 2 - 1
    cx = float(np.round(rng.uniform(lo, hi), 2))
    cy = float(np.round(rng.uniform(lo, hi), 2))
    hue_range = WARM_SAMPLE if domain is Domain.A else COOL_SAMPLE
    hue = float(np.round(rng.uniform(*hue_range), 2))
    return cx, cy, size, hue


def make_toy_dataset(spec: ToySpec, out) -> Path:
    """Write the toy dataset under ``out`` in folder layout, plus a manifest CSV."""
    if spec.n_per_domain < 4:
        raise ValueError(f"n_per_domain must be >= 4, got {spec.n_per_domain}")
    if spec.image_size < 8:
        raise ValueError("image_size must be >= 8")
    if not 0.0 <= spec.test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    out = Path(out)
    n_test = int(round(spec.n_per_domain * spec.test_fraction))
    rows = []
    for stream, d in enumerate(Domain):
        # content factors come from the same stream for both domains' distributions
        content_rng = np.random.default_rng([spec.seed, 0, stream])
        for i in range(spec.n_per_domain):
            cx, cy, size, hue = sample_toy_factors(spec, d, content_rng)
            split = "test" if i >= spec.n_per_domain - n_test else "train"
            folder = out / f"{split}{d.value}"
            folder.mkdir(parents=True, exist_ok=True)
            name = f"{d.value}_{i:04d}.png"
            Image.fromarray(draw_toy(spec.image_size, d, cx, cy, size, hue)).save(folder / name)
            rows.append({"filename": f"{split}{d.value}/{name}", "domain": d.value,
                         "shape_x": cx, "shape_y": cy, "shape_size": size, "hue": hue})
    for split in ("train", "test"):
        for d in Domain:
            (out / f"{split}{d.value}").mkdir(parents=True, exist_ok=True)
    with open(out / MANIFEST_NAME, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    log.info("wrote %d toy images to %s", len(rows), out)
    return out


def read_manifest(root) -> list[dict]:
    with open(Path(root) / MANIFEST_NAME, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("shape_x", "shape_y", "shape_size", "hue"):
            r[k] = float(r[k])
    return rows


# ---------------------------------------------------------------------------
# toy measurements


def _to_rgb01(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError("expected a single 3xHxW image")
    return np.clip((x.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)


def mean_hue(x) -> float:
    """Saturation-weighted circular mean hue (degrees) of one [-1, 1] image."""
    h, s, v = rgb_to_hsv(_to_rgb01(x))
    w = s * v
    if w.sum() <= 0:
        return float("nan")
    ang = np.deg2rad(h)
    return float(np.mod(np.rad2deg(np.arctan2((w * np.sin(ang)).sum(), (w * np.cos(ang)).sum())), 360.0))


def _hue_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def classify_domain(x) -> Optional[Domain]:
    """Hue-threshold classifier: nearest of the warm (A) and cool (B) palette centres."""
    h = mean_hue(x)
    if np.isnan(h):
        return None
    warm = sum(WARM_RANGE) / 2
    cool = sum(COOL_RANGE) / 2
    return Domain.A if _hue_distance(h, warm) < _hue_distance(h, cool) else Domain.B


def shape_centroid(x) -> Optional[tuple[float, float]]:
    """Centroid (x, y) in pixel coordinates of the bright shape, or None when absent."""
    _, _, v = rgb_to_hsv(_to_rgb01(x))
    mask = v > SHAPE_VALUE_THRESHOLD
    if not mask.any():
        return None
    ys, xs = np.nonzero(mask)
    return float(xs.mean() + 0.5), float(ys.mean() + 0.5)
