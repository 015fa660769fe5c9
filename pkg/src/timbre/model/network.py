"""Residual encoder, dictionary-encoding pooling, heads and the assembled model."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from timbre.errors import ConfigError
from timbre.model.sinc import SincFrontend, SincFrontendConfig

HEAD_KINDS = ("softmax_ce", "sigmoid_bce")


@dataclass(frozen=True)
class EncoderConfig:
    depths: tuple[int, int, int, int] = (3, 4, 6, 3)
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    shared_blocks: bool = False

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.widths) != 4:
            raise ValueError("depths and widths need four stages")
        if min(self.depths) < 1 or min(self.widths) < 1:
            raise ValueError("depths and widths must be positive")


@dataclass(frozen=True)
class LDEConfig:
    n_components: int = 8

    def validate(self) -> None:
        if self.n_components < 2:
            raise ValueError("n_components must be at least 2")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "softmax_ce"
    n_out: int = 2

    def validate(self) -> None:
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"head kind must be one of {HEAD_KINDS}")
        if self.n_out < 2:
            raise ValueError("head needs at least two outputs")


@dataclass(frozen=True)
class ModelConfig:
    frontend: SincFrontendConfig = field(default_factory=SincFrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lde: LDEConfig = field(default_factory=LDEConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def validate(self) -> None:
        self.frontend.validate()
        self.encoder.validate()
        self.lde.validate()
        self.head.validate()

    @property
    def embedding_dim(self) -> int:
        return self.lde.n_components * self.encoder.widths[-1]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        return _build(cls, d, "model")

    def with_head(self, kind: str, n_out: int) -> "ModelConfig":
        return ModelConfig(self.frontend, self.encoder, self.lde, HeadConfig(kind, n_out))

    def fingerprint(self, body_only: bool = False) -> str:
        d = self.to_dict()
        if body_only:
            d.pop("head")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, d: Mapping[str, Any], where: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, value in d.items():
        default = getattr(cls(), name) if name in names else None
        if is_dataclass(default):
            kw[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# -- residual encoder ----------------------------------------------------------

def conv3x3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with batch norm and an identity (or projection) shortcut.

    ``conv2`` is omitted when the owning stage supplies a shared one.
    """

    def __init__(self, cin: int, cout: int, stride: int, own_conv2: bool) -> None:
        super().__init__()
        self.conv1 = conv3x3(cin, cout, stride)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = conv3x3(cout, cout) if own_conv2 else None
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                                          nn.BatchNorm2d(cout))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor, conv2: nn.Conv2d | None = None) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2((conv2 if conv2 is not None else self.conv2)(out))
        return F.relu(out + self.shortcut(x))


class ResidualStage(nn.Module):
    """``depth`` basic blocks; the first one changes width/resolution.

    With ``shared`` every block's second convolution is the stage's single
    ``shared_conv`` (all second convolutions map ``cout -> cout`` at the stage's
    resolution, so one weight tensor fits them all).
    """

    def __init__(self, cin: int, cout: int, depth: int, stride: int, shared: bool) -> None:
        super().__init__()
        self.shared_conv = conv3x3(cout, cout) if shared else None
        self.blocks = nn.ModuleList(
            BasicBlock(cin if i == 0 else cout, cout, stride if i == 0 else 1, not shared)
            for i in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, self.shared_conv)
        return x


class ResNetEncoder(nn.Module):
    """Stem plus four stages; frequency axis averaged away at the end.

    Input ``(batch, 1, filters, frames)``; output ``(batch, frames', width[-1])``.
    """

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w = cfg.widths
        self.stem = nn.Sequential(conv3x3(1, w[0]), nn.BatchNorm2d(w[0]), nn.ReLU())
        cins = (w[0],) + tuple(w[:-1])
        self.stages = nn.ModuleList(
            ResidualStage(cins[i], w[i], cfg.depths[i], 1 if i == 0 else 2, cfg.shared_blocks)
            for i in range(4))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x.mean(dim=2).transpose(1, 2)


# -- pooling -------------------------------------------------------------------

def lde_pool(x: torch.Tensor, centers: torch.Tensor, smoothing_raw: torch.Tensor,
             *, return_weights: bool = False):
    """Learnable dictionary encoding.

    ``w[t, c] = softmax_c(-s_c ||x_t - mu_c||^2)`` and
    ``e_c = sum_t w[t, c] (x_t - mu_c) / sum_t w[t, c]``; the concatenated ``e_c``
    are scaled to unit Euclidean norm. ``s = softplus(smoothing_raw)``.

    Args:
        x: ``(batch, frames, dim)`` frame features.
        centers: ``(components, dim)``.
        smoothing_raw: ``(components,)`` unconstrained smoothing parameters.
    """
    s = F.softplus(smoothing_raw)
    resid = x[:, :, None, :] - centers[None, None, :, :]
    dist = (resid * resid).sum(-1)
    w = torch.softmax(-s[None, None, :] * dist, dim=-1)
    agg = (w[..., None] * resid).sum(1) / w.sum(1).clamp_min(1e-12)[..., None]
    e = agg.flatten(1)
    e = e / e.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return (e, w) if return_weights else e


class LDEPool(nn.Module):
    def __init__(self, cfg: LDEConfig, dim: int) -> None:
        super().__init__()
        cfg.validate()
        self.centers = nn.Parameter(torch.empty(cfg.n_components, dim))
        self.smoothing = nn.Parameter(torch.full((cfg.n_components,), math.log(math.e - 1.0)))
        nn.init.uniform_(self.centers, 0.0, 1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return lde_pool(x, self.centers, self.smoothing)


# -- model ---------------------------------------------------------------------

def init_head(linear: nn.Linear, generator: torch.Generator | None = None) -> None:
    """Zero bias; weights uniform on +/- 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(linear.in_features)
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound, generator=generator)
        linear.bias.zero_()


class InstrumentModel(nn.Module):
    """Front-end, encoder, pooling and an affine head producing logits."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.frontend = SincFrontend(cfg.frontend)
        self.encoder = ResNetEncoder(cfg.encoder)
        self.lde = LDEPool(cfg.lde, cfg.encoder.widths[-1])
        self.head = nn.Linear(cfg.embedding_dim, cfg.head.n_out)
        init_head(self.head)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.lde(self.encoder(self.frontend(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


def build_model(cfg: ModelConfig, seed: int = 0) -> InstrumentModel:
    """Construct a model with parameters drawn from a private seeded generator."""
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = InstrumentModel(cfg)
    finally:
        torch.random.set_rng_state(state)
    return model


# -- parameter accounting ----------------------------------------------------------

def count_params(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form trainable-parameter counts per component.

    Shared convolutions are counted once. Batch-norm running statistics are
    buffers, not parameters, and are excluded.
    """
    e = cfg.encoder
    w = e.widths
    conv = 9 * 1 * w[0]
    bn = 2 * w[0]
    cin = w[0]
    for i, (depth, cout) in enumerate(zip(e.depths, w)):
        stride = 1 if i == 0 else 2
        for b in range(depth):
            block_in = cin if b == 0 else cout
            conv += 9 * block_in * cout
            bn += 2 * cout * 2
            if not e.shared_blocks:
                conv += 9 * cout * cout
            if b == 0 and (stride != 1 or block_in != cout):
                conv += block_in * cout
                bn += 2 * cout
        if e.shared_blocks:
            conv += 9 * cout * cout
        cin = cout
    counts = {
        "frontend": 2 * cfg.frontend.n_filters,
        "encoder_conv": conv,
        "encoder_bn": bn,
        "lde": cfg.lde.n_components * w[-1] + cfg.lde.n_components,
        "head": cfg.embedding_dim * cfg.head.n_out + cfg.head.n_out,
    }
    counts["encoder"] = counts["encoder_conv"] + counts["encoder_bn"]
    counts["total"] = (counts["frontend"] + counts["encoder"] + counts["lde"] + counts["head"])
    return counts


def enumerate_params(model: nn.Module) -> dict[str, int]:
    """Counts from the instantiated module (each shared tensor once)."""
    out = {"frontend": 0, "encoder_conv": 0, "encoder_bn": 0, "lde": 0, "head": 0}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        if top == "encoder":
            out["encoder_conv" if p.dim() == 4 else "encoder_bn"] += p.numel()
        else:
            out[top] += p.numel()
    out["encoder"] = out["encoder_conv"] + out["encoder_bn"]
    out["total"] = sum(p.numel() for p in model.parameters())
    return out
