"""Example-guided transfer, multimodal sampling and latent interpolation."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .data import denormalize
from .model import DSMAP, ContentCode, TagError, as_domain
from .training import load_model


def load_checkpoint_model(path) -> DSMAP:
    """Model for inference; a missing file raises ``CheckpointError``."""
    return load_model(path)


@torch.no_grad()
def example_guided(x_content, x_style, src, dst, model: DSMAP) -> torch.Tensor:
    return model.translate(x_content, x_style, src, dst)


@torch.no_grad()
def multimodal(x_content, src, dst, n_styles: int, seed: int, model: DSMAP) -> list[torch.Tensor]:
    """One output per prior style code; style ``i`` is drawn with seed ``seed + i``."""
    if n_styles < 1:
        raise ValueError("n_styles must be >= 1")
    b = x_content.shape[0]
    _, c = model.encode_content(x_content, src)
    h = model.map_content(c, dst)
    return [model.generate(h, model.sample_style(b, seed + i), dst) for i in range(n_styles)]


def lerp_codes(a, b, t: float):
    """``(1 - t) * a + t * b``; tagged codes must carry the same tag."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if isinstance(a, ContentCode) or isinstance(b, ContentCode):
        if not (isinstance(a, ContentCode) and isinstance(b, ContentCode)):
            raise TagError("cannot interpolate a tagged code with a raw array")
        if a.tag != b.tag:
            raise TagError(f"cannot interpolate codes from different spaces: {a.tag} vs {b.tag}")
        return ContentCode(_lerp(a.data, b.data, t), a.kind, a.domain)
    return _lerp(a, b, t)


def _lerp(a, b, t):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    # exact endpoints regardless of floating point
    if t == 0.0:
        return a.clone() if isinstance(a, torch.Tensor) else np.array(a, copy=True)
    if t == 1.0:
        return b.clone() if isinstance(b, torch.Tensor) else np.array(b, copy=True)
    return (1.0 - t) * a + t * b


def grid(steps: int) -> list[float]:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    return [i / (steps - 1) for i in range(steps)]


@torch.no_grad()
def interpolate_style(x_content, s_1, s_2, steps: int, dst, model: DSMAP, src=None) -> list[torch.Tensor]:
    """Fixed content, style codes swept from ``s_1`` to ``s_2``.

    ``src`` is the content image's domain (defaults to the other domain).
    """
    dst = as_domain(dst)
    src = dst.other if src is None else as_domain(src)
    ts = grid(steps)
    _, c = model.encode_content(x_content, src)
    h = model.map_content(c, dst)
    return [model.generate(h, lerp_codes(s_1, s_2, t), dst) for t in ts]


@torch.no_grad()
def interpolate_content(x_1, x_2, x_style, domain, steps: int, model: DSMAP) -> list[torch.Tensor]:
    """Two contents from the same domain, interpolated in that domain's content space."""
    domain = as_domain(domain)
    ts = grid(steps)
    s = model.encode_style(x_style, domain)
    h_1 = model.map_content(model.encode_content(x_1, domain)[1], domain)
    h_2 = model.map_content(model.encode_content(x_2, domain)[1], domain)
    return [model.generate(lerp_codes(h_1, h_2, t), s, domain) for t in ts]


@torch.no_grad()
def interpolate_content_cross_domain(x_src_A, x_src_B, x_style, style_domain, steps: int,
                                     model: DSMAP) -> list[torch.Tensor]:
    """Interpolate shared codes of an A and a B image, then remap into the style's domain."""
    style_domain = as_domain(style_domain)
    ts = grid(steps)
    s = model.encode_style(x_style, style_domain)
    _, c_A = model.encode_content(x_src_A, "A")
    _, c_B = model.encode_content(x_src_B, "B")
    return [model.generate(model.map_content(lerp_codes(c_A, c_B, t), style_domain), s, style_domain)
            for t in ts]


def frame_name(mode: str, t_index: int, seed: int, ext: str = "png") -> str:
    return f"{mode}_t{t_index:03d}_seed{seed}.{ext}"


def save_image(x, path):
    Image.fromarray(denormalize(x)).save(path)


def save_grid(rows: Sequence[Sequence[torch.Tensor]], path, pad: int = 2):
    """Tile images (each 3xHxW in [-1, 1]) row by row into one PNG."""
    rows = [[denormalize(x) for x in row] for row in rows]
    h, w = rows[0][0].shape[:2]
    n_cols = max(len(r) for r in rows)
    canvas = np.full((len(rows) * (h + pad) + pad, n_cols * (w + pad) + pad, 3), 255, np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            canvas[y:y + h, x:x + w] = img
    Image.fromarray(canvas).save(path)


def write_sequence(frames: Sequence[torch.Tensor], out_dir, mode: str, seed: int) -> Path:
    """Write each frame (batch of images) and a grid with one row per batch element."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = frames[0].shape[0]
    for t_index, frame in enumerate(frames):
        for b in range(batch):
            name = frame_name(mode, t_index, seed) if batch == 1 else frame_name(f"{mode}_b{b}", t_index, seed)
            save_image(frame[b], out_dir / name)
    grid_path = out_dir / f"{mode}_grid_seed{seed}.png"
    save_grid([[f[b] for f in frames] for b in range(batch)], grid_path)
    return grid_path
