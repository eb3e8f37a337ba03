"""Quality (Fréchet distance over activation statistics) and diversity metrics.

The default feature extractor is a fixed-seed random convolutional network,
so scores are reproducible without downloads but only comparable within this
package. Any callable ``images -> (n, d) features`` can be swapped in.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .model import DSMAP, as_domain

log = logging.getLogger(__name__)

EPS = 1e-6


class SmallSampleWarning(UserWarning):
    pass


@dataclass
class ActivationStats:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError("covariance must be d x d")
        if self.n < 2:
            raise ValueError("need n >= 2 samples")
        if np.abs(self.covariance - self.covariance.T).max(initial=0.0) > 1e-8:
            raise ValueError("covariance is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def merge(self, other: "ActivationStats") -> "ActivationStats":
        """Stats of the union of both samples (pooled, unbiased)."""
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        scatter = ((self.n - 1) * self.covariance + (other.n - 1) * other.covariance
                   + np.outer(delta, delta) * self.n * other.n / n)
        return ActivationStats(mean, scatter / (n - 1), n)


def activation_stats(features) -> ActivationStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("features must be an n x d array")
    if f.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    mean = f.mean(axis=0)
    centred = f - mean
    cov = centred.T @ centred / (f.shape[0] - 1)
    cov = (cov + cov.T) / 2
    return ActivationStats(mean, cov, f.shape[0])


def _psd_eigvals(w: np.ndarray) -> np.ndarray:
    # eigenvalues below the rounding floor are zero; their square roots would not be
    floor = len(w) * np.finfo(np.float64).eps * max(float(np.abs(w).max(initial=0.0)), 1e-300)
    return np.where(w > floor, w, 0.0)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(_psd_eigvals(w))) @ v.T


def _trace_sqrt_product(cov_p: np.ndarray, cov_q: np.ndarray) -> float:
    # Tr((P Q)^1/2) = Tr((P^1/2 Q P^1/2)^1/2); the inner matrix is symmetric PSD
    root_p = _psd_sqrt(cov_p)
    inner = root_p @ cov_q @ root_p
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    return float(np.sqrt(_psd_eigvals(w)).sum())


def frechet_distance(p: ActivationStats, q: ActivationStats) -> float:
    """Squared Fréchet distance between two Gaussians, clamped at zero."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = p.mean - q.mean
    try:
        tr = _trace_sqrt_product(p.covariance, q.covariance)
    except np.linalg.LinAlgError:
        eye = EPS * np.eye(p.dim)
        try:
            tr = _trace_sqrt_product(p.covariance + eye, q.covariance + eye)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError("matrix square root failed after regularization") from exc
    d2 = float(diff @ diff) + float(np.trace(p.covariance) + np.trace(q.covariance)) - 2.0 * tr
    return max(d2, 0.0)


# ---------------------------------------------------------------------------
# features


class RandomConvFeatures(nn.Module):
    """Frozen random conv net: a few strided conv+ReLU layers, then global pooling."""

    def __init__(self, dim: int = 64, seed: int = 0, width: int = 32, n_layers: int = 3):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        convs, ch = [], 3
        for i in range(n_layers):
            out = width if i < n_layers - 1 else dim
            conv = nn.Conv2d(ch, out, 3, 2, 1)
            with torch.no_grad():
                conv.weight.normal_(0.0, (2.0 / (ch * 9)) ** 0.5, generator=g)
                conv.bias.zero_()
            convs.append(conv)
            ch = out
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)
        self.dim = dim
        self.seed = seed
        self.identifier = f"random-conv(dim={dim},width={width},layers={n_layers},seed={seed})"

    @torch.no_grad()
    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        return x.mean(dim=(2, 3))

    def __call__(self, x) -> np.ndarray:
        return super().__call__(x).double().numpy()


class PrecomputedFeatures:
    """Adapter for externally supplied feature functions (e.g. a pretrained classifier)."""

    def __init__(self, fn: Callable, identifier: str):
        self.fn = fn
        self.identifier = identifier

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(x), dtype=np.float64)


def extract(extractor, images: torch.Tensor, chunk: int = 256) -> np.ndarray:
    parts = [extractor(images[i:i + chunk]) for i in range(0, images.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def default_extractor() -> RandomConvFeatures:
    return RandomConvFeatures()


# ---------------------------------------------------------------------------
# protocols


def _sample(n_avail: int, n: int, rng: np.random.Generator, what: str) -> np.ndarray:
    if n_avail < n:
        warnings.warn(f"{what}: only {n_avail} images for {n} samples; sampling with replacement",
                      SmallSampleWarning, stacklevel=3)
        return rng.integers(0, n_avail, size=n)
    return rng.choice(n_avail, size=n, replace=False)


@torch.no_grad()
def fid_protocol(model: DSMAP, content_images: torch.Tensor, style_images: torch.Tensor,
                 real_images: torch.Tensor, src, dst, n_content: int = 100, n_styles: int = 10,
                 repeats: int = 10, seed: int = 0, extractor=None, batch: int = 100) -> dict:
    """Example-guided FID of ``src -> dst`` translations against ``real_images``.

    Each repeat draws ``n_content`` content images and, for each, ``n_styles``
    style images from the target domain; both draws are reseeded per repeat.
    """
    src, dst = as_domain(src), as_domain(dst)
    extractor = extractor or default_extractor()
    real_stats = activation_stats(extract(extractor, real_images))
    scores = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        ci = _sample(content_images.shape[0], n_content, rng, "content set")
        si = rng.integers(0, style_images.shape[0], size=(n_content, n_styles))
        pairs_c = np.repeat(ci, n_styles)
        pairs_s = si.reshape(-1)
        feats = []
        for k in range(0, len(pairs_c), batch):
            y = model.translate(content_images[pairs_c[k:k + batch]], style_images[pairs_s[k:k + batch]], src, dst)
            feats.append(extractor(y))
        scores.append(frechet_distance(activation_stats(np.concatenate(feats)), real_stats))
    return {
        "metric": "fid",
        "direction": f"{src.value}->{dst.value}",
        "scores": scores,
        "mean": float(np.mean(scores)),
        "std": float(np.std(scores)),
        "n_content": n_content,
        "n_styles": n_styles,
        "repeats": repeats,
        "seed": seed,
        "extractor": getattr(extractor, "identifier", repr(extractor)),
    }


def real_baseline_fid(images: torch.Tensor, seed: int = 0, extractor=None) -> float:
    """FID between two random halves of one real set: the small-sample floor."""
    extractor = extractor or default_extractor()
    rng = np.random.default_rng(seed)
    perm = rng.permutation(images.shape[0])
    half = images.shape[0] // 2
    f = extract(extractor, images)
    return frechet_distance(activation_stats(f[perm[:half]]), activation_stats(f[perm[half:2 * half]]))


def feature_distance(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Row-wise squared distance between unit-normalized feature vectors."""
    def unit(f):
        norm = np.linalg.norm(f, axis=1, keepdims=True)
        return f / np.where(norm > 0, norm, 1.0)
    return ((unit(f1) - unit(f2)) ** 2).sum(axis=1)


@torch.no_grad()
def diversity_pairs(model: DSMAP, x_content, src, dst, n_pairs: int, seed: int):
    """The output pairs scored by :func:`diversity_score`, as (first, second) batches."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    src, dst = as_domain(src), as_domain(dst)
    b = x_content.shape[0]
    _, c = model.encode_content(x_content, src)
    h = model.map_content(c, dst)
    seeds = np.random.SeedSequence(seed).generate_state(2 * n_pairs)
    out = []
    for k in range(n_pairs):
        y1 = model.generate(h, model.sample_style(b, int(seeds[2 * k])), dst)
        y2 = model.generate(h, model.sample_style(b, int(seeds[2 * k + 1])), dst)
        out.append((y1, y2))
    return out


def diversity_score(model: DSMAP, x_content, src, dst, n_pairs: int = 15, extractor=None,
                    seed: int = 0) -> float:
    """Mean feature distance between output pairs sharing content but not style."""
    extractor = extractor or default_extractor()
    dists = [feature_distance(extractor(y1), extractor(y2)) for y1, y2 in
             diversity_pairs(model, x_content, src, dst, n_pairs, seed)]
    return float(np.mean(np.concatenate(dists)))


# ---------------------------------------------------------------------------
# toy-task measurements


@torch.no_grad()
def toy_translation_scores(model: DSMAP, content: torch.Tensor, styles: torch.Tensor, centroids,
                           src, dst, tolerance: float = 8.0, seed: int = 0) -> dict:
    """Fraction of translations the hue classifier assigns to ``dst``, and fraction
    whose shape centroid lies within ``tolerance`` px of the source centroid."""
    from .data import classify_domain, shape_centroid

    src, dst = as_domain(src), as_domain(dst)
    rng = np.random.default_rng(seed)
    si = rng.integers(0, styles.shape[0], size=content.shape[0])
    y = model.translate(content, styles[si], src, dst)
    hits_cls = hits_pos = 0
    errors = []
    for i in range(y.shape[0]):
        hits_cls += classify_domain(y[i]) is dst
        c = shape_centroid(y[i])
        err = float("inf") if c is None else float(np.hypot(c[0] - centroids[i][0], c[1] - centroids[i][1]))
        errors.append(err)
        hits_pos += err <= tolerance
    n = y.shape[0]
    return {"domain_rate": hits_cls / n, "content_rate": hits_pos / n,
            "median_centroid_error": float(np.median(errors)), "n": n}
