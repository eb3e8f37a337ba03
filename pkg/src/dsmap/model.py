"""Networks and the forward composition of the translation pipeline.

Two image domains A and B share one content space. Each domain has a
downsampling content encoder producing a domain-specific code ``h``; a
residual projector turns ``h`` into the shared code ``c``. Per-domain
mappings remap a shared code into a domain's content space before the
style-conditioned generator decodes it.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F


class Domain(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def other(self) -> "Domain":
        return Domain.B if self is Domain.A else Domain.A


def as_domain(d) -> Domain:
    try:
        return Domain(d.value if isinstance(d, Domain) else str(d).upper())
    except ValueError:
        raise ValueError(f"unknown domain {d!r}; expected 'A' or 'B'") from None


class TagError(TypeError):
    """A content code was used in a space it does not belong to."""


class InputError(ValueError):
    """An input array violates the shape or range contract."""


SHARED = "shared"
SPECIFIC = "domain_specific"


@dataclass(frozen=True)
class ContentCode:
    """Spatial content feature map tagged with the space it lives in."""

    data: torch.Tensor
    kind: str = SHARED
    domain: Optional[Domain] = None

    def __post_init__(self):
        if self.kind not in (SHARED, SPECIFIC):
            raise ValueError(f"bad content code kind {self.kind!r}")
        if self.kind == SPECIFIC and self.domain is None:
            raise ValueError("domain-specific code needs a domain")
        if self.kind == SHARED and self.domain is not None:
            raise ValueError("shared code cannot carry a domain")
        if self.data.dim() != 4:
            raise InputError(f"content code must be 4-D, got shape {tuple(self.data.shape)}")

    @classmethod
    def shared(cls, data: torch.Tensor) -> "ContentCode":
        return cls(data, SHARED, None)

    @classmethod
    def specific(cls, data: torch.Tensor, domain) -> "ContentCode":
        return cls(data, SPECIFIC, as_domain(domain))

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def tag(self):
        return (self.kind, self.domain)

    def is_shared(self) -> bool:
        return self.kind == SHARED

    def detach(self) -> "ContentCode":
        return ContentCode(self.data.detach(), self.kind, self.domain)


@dataclass
class ModelConfig:
    image_size: int = 64
    n_downsample: int = 2
    base_channels: int = 64
    n_res_shared: int = 2
    n_res_mapping: int = 2
    style_dim: int = 8
    share_residual_projector: bool = True
    n_gen_res: int = 4
    disc_layers: int = 3
    mlp_dim: int = 256
    # False swaps each mapping for the identity (the "without mapping" ablation).
    use_mapping: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("image_size", "n_downsample", "base_channels", "n_res_shared",
                     "n_res_mapping", "style_dim", "n_gen_res", "disc_layers", "mlp_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"model.{name} must be >= 1")
        if self.image_size % (2 ** self.n_downsample):
            raise ValueError("image_size must be divisible by 2**n_downsample")

    @property
    def c_channels(self) -> int:
        return self.base_channels * 2 ** self.n_downsample

    @property
    def content_size(self) -> int:
        return self.image_size // 2 ** self.n_downsample

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# building blocks


class AdaptiveInstanceNorm(nn.Module):
    """Instance norm whose per-channel scale/shift are set from a style code."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels

    def forward(self, x, scale, shift):
        out = F.instance_norm(x, eps=1e-5)
        return out * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")
        self.norm1 = nn.InstanceNorm2d(channels)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return x + y


class AdaResBlock(nn.Module):
    """Residual block with adaptive instance norm; consumes 4*channels style params."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")
        self.norm1 = AdaptiveInstanceNorm(channels)
        self.norm2 = AdaptiveInstanceNorm(channels)

    @property
    def n_style_params(self) -> int:
        return 4 * self.channels

    def forward(self, x, params):
        s1, b1, s2, b2 = params.split(self.channels, dim=1)
        y = F.relu(self.norm1(self.conv1(x), s1, b1))
        y = self.norm2(self.conv2(y), s2, b2)
        return x + y


class ContentDownsampler(nn.Module):
    """Strided convolutions taking an image to its domain-specific content code."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.base_channels
        layers = [nn.Conv2d(3, ch, 7, 1, 3, padding_mode="reflect")]
        for _ in range(cfg.n_downsample):
            layers.append(nn.Conv2d(ch, ch * 2, 4, 2, 1, padding_mode="reflect"))
            ch *= 2
        self.down = nn.ModuleList(layers)
        self.norms = nn.ModuleList(nn.InstanceNorm2d(layer.out_channels) for layer in layers)

    def forward(self, x):
        for conv, norm in zip(self.down, self.norms):
            x = F.relu(norm(conv(x)))
        return x


class ResidualStack(nn.Module):
    """Shape-preserving stack of residual blocks (the projector and the mappings)."""

    def __init__(self, channels: int, n_blocks: int):
        super().__init__()
        self.res = nn.ModuleList(ResBlock(channels) for _ in range(n_blocks))

    def forward(self, x):
        for block in self.res:
            x = block(x)
        return x


class StyleEncoder(nn.Module):
    """Strided convs, global average pooling, linear head. No normalization."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.base_channels
        layers = [nn.Conv2d(3, ch, 7, 1, 3, padding_mode="reflect")]
        for _ in range(cfg.n_downsample):
            layers.append(nn.Conv2d(ch, ch * 2, 4, 2, 1, padding_mode="reflect"))
            ch *= 2
        # two more halvings at constant width, as far as the image allows
        extra = min(2, max(0, (cfg.image_size // 2 ** cfg.n_downsample).bit_length() - 2))
        for _ in range(extra):
            layers.append(nn.Conv2d(ch, ch, 4, 2, 1, padding_mode="reflect"))
        self.down = nn.ModuleList(layers)
        self.head = nn.Linear(ch, cfg.style_dim)

    def forward(self, x):
        for conv in self.down:
            x = F.relu(conv(x))
        return self.head(x.mean(dim=(2, 3)))


class Generator(nn.Module):
    """Adaptive residual blocks at content resolution, then upsampling to RGB."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.c_channels
        self.res = nn.ModuleList(AdaResBlock(ch) for _ in range(cfg.n_gen_res))
        n_params = sum(b.n_style_params for b in self.res)
        self.mlp = nn.ModuleList([
            nn.Linear(cfg.style_dim, cfg.mlp_dim),
            nn.Linear(cfg.mlp_dim, cfg.mlp_dim),
            nn.Linear(cfg.mlp_dim, n_params),
        ])
        ups, norms = [], []
        for _ in range(cfg.n_downsample):
            ups.append(nn.Conv2d(ch, ch // 2, 5, 1, 2, padding_mode="reflect"))
            norms.append(nn.GroupNorm(1, ch // 2))
            ch //= 2
        self.up = nn.ModuleList(ups)
        self.up_norm = nn.ModuleList(norms)
        self.out = nn.Conv2d(ch, 3, 7, 1, 3, padding_mode="reflect")

    def style_params(self, s):
        y = s
        for i, layer in enumerate(self.mlp):
            y = layer(y)
            if i < len(self.mlp) - 1:
                y = F.relu(y)
        return y

    def forward(self, h, s):
        params = self.style_params(s)
        offset = 0
        x = h
        for block in self.res:
            n = block.n_style_params
            x = block(x, params[:, offset:offset + n])
            offset += n
        for conv, norm in zip(self.up, self.up_norm):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(norm(conv(x)))
        return torch.tanh(self.out(x))


class PatchDiscriminator(nn.Module):
    """Strided 4x4 convs with leaky ReLU and a 1x1 scoring head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch_in, ch = 3, cfg.base_channels
        layers = []
        for i in range(cfg.disc_layers):
            layers.append(nn.Conv2d(ch_in, ch, 4, 2, 1))
            ch_in, ch = ch, ch * 2
        self.down = nn.ModuleList(layers)
        self.head = nn.Conv2d(ch_in, 1, 1)

    def forward(self, x):
        for conv in self.down:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x)


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02):
    """Conv weights ~ N(0, std); linear weights ~ N(0, 2 / fan_in); biases zero."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            with torch.no_grad():
                w_std = std if isinstance(m, nn.Conv2d) else (2.0 / m.in_features) ** 0.5
                m.weight.normal_(0.0, w_std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


# ---------------------------------------------------------------------------
# the full model


COMPONENTS = ("content_A", "content_B", "content_res", "content_res_A", "content_res_B",
              "style_A", "style_B", "mapping_A", "mapping_B", "gen_A", "gen_B",
              "dis_A", "dis_B")


class DSMAP(nn.Module):
    """Both domains' encoders, mappings, generators and discriminators.

    Submodule names double as the first component of every parameter name
    (``content_A.down.0.weight``), which is what checkpoints store.
    """

    def __init__(self, cfg: Optional[ModelConfig] = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        c = cfg.c_channels
        self.content_A = ContentDownsampler(cfg)
        self.content_B = ContentDownsampler(cfg)
        if cfg.share_residual_projector:
            self.content_res = ResidualStack(c, cfg.n_res_shared)
        else:
            self.content_res_A = ResidualStack(c, cfg.n_res_shared)
            self.content_res_B = ResidualStack(c, cfg.n_res_shared)
        self.style_A = StyleEncoder(cfg)
        self.style_B = StyleEncoder(cfg)
        if cfg.use_mapping:
            self.mapping_A = ResidualStack(c, cfg.n_res_mapping)
            self.mapping_B = ResidualStack(c, cfg.n_res_mapping)
        self.gen_A = Generator(cfg)
        self.gen_B = Generator(cfg)
        self.dis_A = PatchDiscriminator(cfg)
        self.dis_B = PatchDiscriminator(cfg)

        g = torch.Generator().manual_seed(int(cfg.seed))
        for name in self.component_names():
            init_weights(getattr(self, name), g)
        self.eval()

    # -- bookkeeping --------------------------------------------------------

    def component_names(self):
        return [n for n in COMPONENTS if hasattr(self, n)]

    def generator_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("dis_")]

    def discriminator_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith("dis_")]

    def _pick(self, prefix: str, d: Domain) -> nn.Module:
        return getattr(self, f"{prefix}_{d.value}")

    def _projector(self, d: Domain) -> nn.Module:
        if self.cfg.share_residual_projector:
            return self.content_res
        return self._pick("content_res", d)

    def check_images(self, x: torch.Tensor, check_range: bool = True):
        if not isinstance(x, torch.Tensor) or x.dim() != 4:
            raise InputError("images must be a 4-D tensor (batch, channels, height, width)")
        if x.shape[1] != 3:
            raise InputError(f"images must have 3 channels, got {x.shape[1]}")
        k = 2 ** self.cfg.n_downsample
        if x.shape[2] % k or x.shape[3] % k:
            raise InputError(f"height/width {tuple(x.shape[2:])} not divisible by {k}")
        if not torch.isfinite(x).all():
            raise InputError("images contain non-finite values")
        if check_range and (x.min() < -1 or x.max() > 1):
            raise InputError("image values must lie in [-1, 1]")

    # -- pipeline operations ------------------------------------------------

    def encode_content(self, x: torch.Tensor, d) -> tuple[ContentCode, ContentCode]:
        """Return ``(h, c)``: the domain-specific code and its shared projection."""
        d = as_domain(d)
        self.check_images(x)
        h = self._pick("content", d)(x)
        c = self._projector(d)(h)
        return ContentCode.specific(h, d), ContentCode.shared(c)

    def encode_style(self, x: torch.Tensor, d) -> torch.Tensor:
        d = as_domain(d)
        self.check_images(x)
        return self._pick("style", d)(x)

    def map_content(self, c: ContentCode, target) -> ContentCode:
        target = as_domain(target)
        if not isinstance(c, ContentCode) or not c.is_shared():
            raise TagError("map_content expects a shared content code")
        if self.cfg.use_mapping:
            out = self._pick("mapping", target)(c.data)
        else:
            out = c.data
        return ContentCode.specific(out, target)

    def generate(self, h: ContentCode, s: torch.Tensor, d) -> torch.Tensor:
        d = as_domain(d)
        if not isinstance(h, ContentCode) or h.kind != SPECIFIC:
            raise TagError("generate expects a domain-specific content code")
        if h.domain is not d:
            raise TagError(f"content code belongs to domain {h.domain.value}, generator is {d.value}")
        if s.dim() != 2 or s.shape[1] != self.cfg.style_dim:
            raise InputError(f"style code must be (batch, {self.cfg.style_dim}), got {tuple(s.shape)}")
        if h.data.shape[0] != s.shape[0]:
            raise InputError(f"batch mismatch: content {h.data.shape[0]} vs style {s.shape[0]}")
        return self._pick("gen", d)(h.data, s)

    def discriminate(self, x: torch.Tensor, d) -> torch.Tensor:
        d = as_domain(d)
        self.check_images(x)
        return self._pick("dis", d)(x)

    def translate(self, x_src, x_style, src, dst) -> torch.Tensor:
        """Content from ``x_src`` (domain ``src``) rendered with the style of ``x_style`` (domain ``dst``)."""
        src, dst = as_domain(src), as_domain(dst)
        _, c = self.encode_content(x_src, src)
        s = self.encode_style(x_style, dst)
        return self.generate(self.map_content(c, dst), s, dst)

    def translate_with_style(self, x_src, s, src, dst) -> torch.Tensor:
        src, dst = as_domain(src), as_domain(dst)
        _, c = self.encode_content(x_src, src)
        return self.generate(self.map_content(c, dst), s, dst)

    def sample_style(self, batch: int, seed: int) -> torch.Tensor:
        return sample_style(batch, seed, self.cfg.style_dim)


def sample_style(batch: int, seed: int, style_dim: int = 8) -> torch.Tensor:
    """Standard-normal style codes, reproducible under ``seed``."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    g = torch.Generator().manual_seed(int(seed))
    return torch.randn(int(batch), style_dim, generator=g)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
