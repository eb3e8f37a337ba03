"""Training objectives as pure differentiable functions of network outputs.

Every L1 term uses the mean absolute difference over elements, so the loss
weights do not depend on image or feature-map resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch

from .model import SPECIFIC, ContentCode, TagError


@dataclass
class LossWeights:
    lambda_cc: float = 10.0
    lambda_x: float = 10.0
    lambda_dsc: float = 1.0
    lambda_dic: float = 1.0
    lambda_s: float = 1.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not v >= 0:
                raise ValueError(f"{f.name} must be nonnegative, got {v}")
            setattr(self, f.name, v)

    def to_dict(self) -> dict:
        return asdict(self)


# component name -> weight name, in the order of the generator total
G_TERMS = (
    ("cc", "lambda_cc"),
    ("x", "lambda_x"),
    ("dsc", "lambda_dsc"),
    ("dic", "lambda_dic"),
    ("s", "lambda_s"),
    ("adv_g", "lambda_adv"),
)


def _data(a):
    return a.data if isinstance(a, ContentCode) else a


def l1_mean(a, b) -> torch.Tensor:
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def loss_dsc(h: ContentCode, mapped: ContentCode) -> torch.Tensor:
    """Distance between the encoder's domain-specific code and the remapped shared code."""
    if isinstance(h, ContentCode) or isinstance(mapped, ContentCode):
        if not (isinstance(h, ContentCode) and isinstance(mapped, ContentCode)):
            raise TagError("loss_dsc needs two tagged codes or two raw arrays")
        if h.kind != SPECIFIC or mapped.kind != SPECIFIC:
            raise TagError("loss_dsc compares domain-specific codes")
        if h.domain is not mapped.domain:
            raise TagError(f"domain mismatch: {h.domain.value} vs {mapped.domain.value}")
    return l1_mean(h, mapped)


def loss_style(s_sampled: torch.Tensor, s_recovered: torch.Tensor) -> torch.Tensor:
    return l1_mean(s_recovered, s_sampled)


def loss_dic(c_src: ContentCode, c_of_translated: ContentCode) -> torch.Tensor:
    if isinstance(c_src, ContentCode) or isinstance(c_of_translated, ContentCode):
        if not (isinstance(c_src, ContentCode) and isinstance(c_of_translated, ContentCode)):
            raise TagError("loss_dic needs two tagged codes or two raw arrays")
        if not (c_src.is_shared() and c_of_translated.is_shared()):
            raise TagError("loss_dic compares shared content codes")
    return l1_mean(c_of_translated, c_src)


def loss_image_recon(x: torch.Tensor, x_recon: torch.Tensor) -> torch.Tensor:
    return l1_mean(x_recon, x)


def loss_cycle(x: torch.Tensor, x_cycled: torch.Tensor) -> torch.Tensor:
    return l1_mean(x_cycled, x)


def loss_adv_d(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss with targets 1 (real) and 0 (fake)."""
    return 0.5 * ((scores_real - 1.0) ** 2).mean() + 0.5 * (scores_fake ** 2).mean()


def loss_adv_g(scores_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((scores_fake - 1.0) ** 2).mean()


def total_losses(components: dict, w: LossWeights):
    """Weighted generator total and discriminator total.

    ``components`` maps ``cc, x, dsc, dic, s, adv_g, adv_d`` to values that
    already sum both translation directions.
    """
    if not isinstance(w, LossWeights):
        w = LossWeights(**w)
    g_total = 0.0
    for key, lam in G_TERMS:
        g_total = g_total + getattr(w, lam) * components[key]
    d_total = w.lambda_adv * components["adv_d"]
    return g_total, d_total
