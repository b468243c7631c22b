"""Feature-space augmentation math and the augmentation loss.

Everything here is a pure function of tensors plus an explicit
``torch.Generator``; no module state. Shapes follow ``(batch, k)`` where ``k``
is the feature dimension, but any shape works as long as the arguments agree.
"""

from __future__ import annotations

from typing import NamedTuple

import torch

from .errors import InvalidDistributionError, ParameterError, ShapeError

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


class MagnitudeSample(NamedTuple):
    """Reparameterized draw ``magnitudes = exp(0.5 * log_variance) * noise``."""

    magnitudes: torch.Tensor
    noise: torch.Tensor


def _check_same_shape(**tensors: torch.Tensor) -> None:
    shapes = {name: tuple(t.shape) for name, t in tensors.items()}
    if len(set(shapes.values())) > 1:
        desc = ", ".join(f"{n}={s}" for n, s in shapes.items())
        raise ShapeError(f"shape mismatch: {desc}")


def sample_direction_mask(
    features: torch.Tensor, lam: float, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Sample the semantic-direction mask for a feature batch.

    Every coordinate is kept independently with probability ``1 - lam``; the
    result is then zeroed wherever ``features`` is exactly zero.

    Args:
        features: feature batch ``a``.
        lam: drop probability in ``[0, 1]``.
        generator: random stream the Bernoulli draws come from.

    Returns:
        A tensor of 0/1 values with the dtype and shape of ``features``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    u = torch.rand(features.shape, generator=generator, device=features.device)
    keep = (u >= lam) & (features != 0)
    return keep.to(features.dtype)


def clamp_log_variance(log_variance: torch.Tensor) -> torch.Tensor:
    return log_variance.clamp(LOG_VAR_MIN, LOG_VAR_MAX)


def sample_magnitudes(
    log_variance: torch.Tensor,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> MagnitudeSample:
    """Draw semantic magnitudes with the reparameterization trick.

    ``noise`` may be supplied to make the draw deterministic; otherwise it is
    sampled from ``generator``. Gradients reach ``log_variance`` only.
    """
    if not torch.isfinite(log_variance).all():
        raise InvalidDistributionError("log_variance contains non-finite entries")
    if noise is None:
        noise = torch.randn(
            log_variance.shape,
            generator=generator,
            dtype=log_variance.dtype,
            device=log_variance.device,
        )
    else:
        _check_same_shape(log_variance=log_variance, noise=noise)
    std = torch.exp(0.5 * clamp_log_variance(log_variance))
    return MagnitudeSample(std * noise, noise)


def augment(
    features: torch.Tensor, mask: torch.Tensor, sample: MagnitudeSample | torch.Tensor
) -> torch.Tensor:
    """Return ``features + mask * magnitudes``.

    Coordinates that are masked out, or where the feature is zero (the mask is
    zero there by construction), come back bit-identical.
    """
    m = sample.magnitudes if isinstance(sample, MagnitudeSample) else sample
    _check_same_shape(features=features, mask=mask, magnitudes=m)
    return features + mask * m


def kl_loss(log_variance: torch.Tensor) -> torch.Tensor:
    """KL(N(0, sigma^2) || N(0, 1)) summed over coordinates, averaged over rows.

    Per coordinate this is ``0.5 * (sigma^2 - log sigma^2 - 1)``, which is
    non-negative and zero only at ``log_variance == 0``.
    """
    lv = clamp_log_variance(log_variance)
    per_coord = 0.5 * (torch.exp(lv) - lv - 1.0)
    return per_coord.reshape(per_coord.shape[0], -1).sum(dim=1).mean()


def recon_loss(reconstructed: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    """Half squared error, summed over coordinates and averaged over rows."""
    _check_same_shape(reconstructed=reconstructed, original=original)
    sq = (reconstructed - original) ** 2
    return 0.5 * sq.reshape(sq.shape[0], -1).sum(dim=1).mean()


def brsda_loss(
    log_variance: torch.Tensor, reconstructed: torch.Tensor, original: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(kl_term, recon_term)``; the caller weights and adds them."""
    return kl_loss(log_variance), recon_loss(reconstructed, original)
