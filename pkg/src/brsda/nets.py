"""Learnable parts: backbone/classifier, magnitude estimator, reconstructor."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .core import MagnitudeSample
from .errors import ConfigError, ShapeError


class FeatureMLP(nn.Module):
    """``Linear(k, h) -> BatchNorm -> GELU -> Linear(h, k)``.

    The output layer is left unconstrained so the same block serves as the
    log-variance estimator and as the reconstruction network.
    """

    def __init__(self, feature_dim: int, hidden_dim: int | None = None):
        super().__init__()
        if feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
        hidden_dim = hidden_dim or feature_dim
        self.feature_dim = feature_dim
        self.fc1 = nn.Linear(feature_dim, hidden_dim)
        self.norm = nn.BatchNorm1d(hidden_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.feature_dim:
            raise ShapeError(
                f"expected input of shape (batch, {self.feature_dim}), got {tuple(x.shape)}"
            )
        return self.fc2(self.act(self.norm(self.fc1(x))))


def estimate_log_variance(features: torch.Tensor, estimator: FeatureMLP) -> torch.Tensor:
    return estimator(features)


def reconstruct(sample: MagnitudeSample | torch.Tensor, reconstructor: FeatureMLP) -> torch.Tensor:
    m = sample.magnitudes if isinstance(sample, MagnitudeSample) else sample
    return reconstructor(m)


class CompactCNN(nn.Module):
    """Three ``conv -> BatchNorm -> ReLU -> max-pool`` blocks and global average pooling.

    ``spatial_dims=3`` swaps in the volumetric layer types for rank-5 inputs.
    The last block width is the feature dimension.
    """

    def __init__(
        self,
        in_channels: int = 1,
        widths: Sequence[int] = (16, 32, 64),
        spatial_dims: int = 2,
    ):
        super().__init__()
        if spatial_dims not in (2, 3):
            raise ConfigError(f"spatial_dims must be 2 or 3, got {spatial_dims}")
        conv = nn.Conv2d if spatial_dims == 2 else nn.Conv3d
        norm = nn.BatchNorm2d if spatial_dims == 2 else nn.BatchNorm3d
        pool = nn.MaxPool2d if spatial_dims == 2 else nn.MaxPool3d
        layers = []
        prev = in_channels
        for w in widths:
            layers += [conv(prev, w, 3, padding=1), norm(w), nn.ReLU(), pool(2)]
            prev = w
        self.blocks = nn.Sequential(*layers)
        self.in_channels = in_channels
        self.spatial_dims = spatial_dims
        self.feature_dim = prev

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != self.spatial_dims + 2 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (batch, {self.in_channels}, *spatial) with "
                f"{self.spatial_dims} spatial dims, got {tuple(x.shape)}"
            )
        h = self.blocks(x)
        return h.flatten(2).mean(dim=2)


class MLPBackbone(nn.Module):
    """Feature extractor for vector datasets."""

    def __init__(self, in_features: int, feature_dim: int = 64, hidden: Sequence[int] = (128,)):
        super().__init__()
        layers = []
        prev = in_features
        for h in (*hidden, feature_dim):
            layers += [nn.Linear(prev, h), nn.BatchNorm1d(h), nn.ReLU()]
            prev = h
        self.net = nn.Sequential(*layers)
        self.in_features = in_features
        self.feature_dim = feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"expected (batch, {self.in_features}), got {tuple(x.shape)}")
        return self.net(x)


TORCHVISION_BACKBONES = ("resnet18", "resnet50", "efficientnet_b0", "densenet121")


class TorchvisionBackbone(nn.Module):
    """Randomly initialised torchvision trunk with its classification head removed.

    Single-channel inputs are repeated to three channels.
    """

    def __init__(self, name: str, in_channels: int = 3):
        super().__init__()
        try:
            from torchvision import models
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise ConfigError(f"backbone {name!r} needs torchvision (pip install 'brsda[torchvision]')") from exc
        if in_channels not in (1, 3):
            raise ConfigError(f"{name} backbone supports 1 or 3 input channels, got {in_channels}")
        net = getattr(models, name)(weights=None)
        if name.startswith("resnet"):
            self.feature_dim = net.fc.in_features
            net.fc = nn.Identity()
        else:
            self.feature_dim = net.classifier[-1].in_features if name.startswith("efficient") \
                else net.classifier.in_features
            net.classifier = nn.Identity()
        self.net = net
        self.in_channels = in_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected (batch, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if self.in_channels == 1:
            x = x.expand(-1, 3, -1, -1)
        return self.net(x)


class BrsdaNets(nn.Module):
    """Container for the backbone ``f1``, classifier ``f2``, estimator and reconstructor.

    Submodules are built in that order, so for a fixed torch seed the backbone
    and classifier initialisation does not depend on whether augmentation is
    used later.
    """

    def __init__(self, backbone: nn.Module, num_classes: int, hidden_dim: int | None = None):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        k = backbone.feature_dim
        self.backbone = backbone
        self.classifier = nn.Linear(k, num_classes)
        self.estimator = FeatureMLP(k, hidden_dim)
        self.reconstructor = FeatureMLP(k, hidden_dim)
        self.num_classes = num_classes
        self.feature_dim = k

    def task_parameters(self):
        return [*self.backbone.parameters(), *self.classifier.parameters()]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return backbone_forward(x, self)


def backbone_forward(x: torch.Tensor, nets: BrsdaNets) -> tuple[torch.Tensor, torch.Tensor]:
    """Return the penultimate features ``a = f1(x)`` and logits ``f2(a)``."""
    features = nets.backbone(x)
    return features, nets.classifier(features)


def build_backbone(name: str, input_shape: Sequence[int], feature_dim: int = 64,
                   widths: Sequence[int] | None = None) -> nn.Module:
    """Construct a backbone for samples of shape ``input_shape`` (channels first).

    Args:
        name: ``"cnn"``, ``"mlp"`` or a torchvision architecture name.
        input_shape: per-sample shape without the batch axis, e.g. ``(1, 28, 28)``.
        feature_dim: output size ``k`` (the last CNN width is forced to this).
        widths: CNN block widths before the last one, or MLP hidden sizes.
    """
    input_shape = tuple(input_shape)
    if name == "cnn":
        if len(input_shape) not in (3, 4):
            raise ConfigError(f"cnn backbone needs image or volume inputs, got {input_shape}")
        head = tuple(widths) if widths is not None else (16, 32)
        return CompactCNN(input_shape[0], (*head, feature_dim), spatial_dims=len(input_shape) - 1)
    if name == "mlp":
        in_features = 1
        for s in input_shape:
            in_features *= s
        if len(input_shape) != 1:
            raise ConfigError(f"mlp backbone needs vector inputs, got {input_shape}")
        hidden = tuple(widths) if widths is not None else (128,)
        return MLPBackbone(in_features, feature_dim, hidden)
    if name in TORCHVISION_BACKBONES:
        if len(input_shape) != 3:
            raise ConfigError(f"{name} backbone needs 2D image inputs, got {input_shape}")
        return TorchvisionBackbone(name, input_shape[0])
    raise ConfigError(
        f"unknown backbone {name!r} (expected cnn, mlp or one of {', '.join(TORCHVISION_BACKBONES)})"
    )
