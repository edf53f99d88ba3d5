"""Loss terms of the generator, the discriminator and the decomposition.

Images are ``N x C x H x W`` tensors in (-1, 1). Every image loss reduces
per image first (mean over pixels), then over the batch, so magnitudes do
not depend on the resolution. Pass ``reduce=False`` to get the per-image
values instead.
"""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F  # noqa: N812

from scgn.core.data import (
    CANONICAL_BLOCK_SIZE,
    CANONICAL_RESOLUTION,
    MIN_BLOCK_SIZE,
    PROBABILITY_EPS,
    Ablation,
    LossReport,
    LossWeights,
    SharpnessConfig,
)

if TYPE_CHECKING:
    from collections.abc import Mapping

_logger = logging.getLogger("scgn.losses")

GENERATOR_COMPONENTS = ("l_p", "l_vc", "l_adv", "l_sharp")


def _check_pair(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        error_message = (
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
        raise ValueError(error_message)
    if pred.dim() == 0 or pred.shape[0] == 0:
        error_message = "empty batch"
        raise ValueError(error_message)


def _reduce(per_image: torch.Tensor, *, reduce: bool) -> torch.Tensor:
    return per_image.mean() if reduce else per_image


def pixel_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    *,
    reduce: bool = True,
) -> torch.Tensor:
    """Mean over images of the per-image mean absolute difference.

    Raises
    ------
    ValueError
        On a shape mismatch or an empty batch.

    """
    _check_pair(pred, target)
    per_image = (pred - target).abs().flatten(start_dim=1).mean(dim=1)
    return _reduce(per_image, reduce=reduce)


def sharpness_config_for(resolution: int) -> SharpnessConfig:
    """Q_S settings with the block size scaled from 16 px at 224 px."""
    block = round(CANONICAL_BLOCK_SIZE * resolution / CANONICAL_RESOLUTION)
    return SharpnessConfig(block_size=max(MIN_BLOCK_SIZE, block))


def gaussian_kernel(
    size: int,
    sigma: float,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Normalized ``size x size`` Gaussian."""
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def reblur(image: torch.Tensor, cfg: SharpnessConfig) -> torch.Tensor:
    """Per-channel Gaussian smoothing with reflected borders."""
    pad = cfg.gaussian_kernel // 2
    _, channels, height, width = image.shape
    mode = "reflect" if min(height, width) > pad else "replicate"
    padded = F.pad(image, (pad, pad, pad, pad), mode=mode)
    kernel = gaussian_kernel(
        cfg.gaussian_kernel, cfg.gaussian_sigma, image.dtype
    ).to(image.device)
    weight = kernel.expand(channels, 1, *kernel.shape)
    return F.conv2d(padded, weight, groups=channels)


def _block_variance(image: torch.Tensor, block: int) -> torch.Tensor:
    n, c, height, width = image.shape
    rows, cols = height // block, width // block
    cropped = image[:, :, : rows * block, : cols * block]
    blocks = cropped.reshape(n, c, rows, block, cols, block)
    blocks = blocks.permute(0, 1, 2, 4, 3, 5).reshape(n, c, rows, cols, -1)
    return blocks.var(dim=-1, correction=0)


def block_variances(
    image: torch.Tensor,
    cfg: SharpnessConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-block variances of an image and of its reblurred copy.

    The image is mapped from (-1, 1) to [0, 1] first. Trailing rows and
    columns that do not fill a block are ignored.

    Returns
    -------
    tuple
        Two ``N x C x rows x cols`` tensors.

    Raises
    ------
    ValueError
        If the image is smaller than one block.

    """
    height, width = image.shape[-2:]
    if min(height, width) < cfg.block_size:
        error_message = (
            f"image {height}x{width} is smaller than one "
            f"{cfg.block_size}x{cfg.block_size} block"
        )
        raise ValueError(error_message)
    unit = (image + 1) / 2
    return (
        _block_variance(unit, cfg.block_size),
        _block_variance(reblur(unit, cfg), cfg.block_size),
    )


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # Subgradient 0 where x == 0.
    tiny = torch.finfo(x.dtype).tiny
    return torch.where(x > 0, x.clamp_min(tiny).sqrt(), torch.zeros_like(x))


def sharpness_Q(  # noqa: N802
    image: torch.Tensor,
    cfg: SharpnessConfig,
) -> torch.Tensor:
    """Block-wise sharpness of each image.

    Mean over blocks and channels of ``sqrt(|var_orig - var_reblurred|)``.
    Returns a 0-d tensor for a ``C x H x W`` image and one value per
    image for a batch.
    """
    single = image.dim() == 3  # noqa: PLR2004
    batch = image.unsqueeze(0) if single else image
    var_orig, var_blur = block_variances(batch, cfg)
    per_image = _safe_sqrt((var_orig - var_blur).abs()).flatten(1).mean(1)
    return per_image[0] if single else per_image


def sharpness_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    cfg: SharpnessConfig,
    *,
    reduce: bool = True,
) -> torch.Tensor:
    """Mean over the batch of ``|Q_S(target) - Q_S(pred)|``."""
    _check_pair(pred, target)
    per_image = (sharpness_Q(target, cfg) - sharpness_Q(pred, cfg)).abs()
    return _reduce(per_image, reduce=reduce)


def _check_probabilities(name: str, d: torch.Tensor) -> torch.Tensor:
    if d.numel() == 0:
        error_message = f"{name} is empty"
        raise ValueError(error_message)
    if bool(((d < 0) | (d > 1) | ~torch.isfinite(d)).any()):
        error_message = f"{name} must hold probabilities in [0, 1]"
        raise ValueError(error_message)
    return d.clamp(PROBABILITY_EPS, 1 - PROBABILITY_EPS)


def disc_loss(
    d_real: torch.Tensor,
    d_fake: torch.Tensor,
    *,
    reduce: bool = True,
) -> torch.Tensor:
    """``mean(-log d_real - log(1 - d_fake))``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logs.

    Raises
    ------
    ValueError
        On batches of different size or values outside [0, 1].

    """
    if d_real.shape != d_fake.shape:
        error_message = (
            f"batch mismatch: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}"
        )
        raise ValueError(error_message)
    real = _check_probabilities("d_real", d_real)
    fake = _check_probabilities("d_fake", d_fake)
    per_image = -torch.log(real) - torch.log1p(-fake)
    return _reduce(per_image, reduce=reduce)


def adv_loss(d_fake: torch.Tensor, *, reduce: bool = True) -> torch.Tensor:
    """Non-saturating generator loss ``mean(-log d_fake)``."""
    per_image = -torch.log(_check_probabilities("d_fake", d_fake))
    return _reduce(per_image, reduce=reduce)


def view_consistency_loss(
    dec_left: torch.Tensor,
    dec_right: torch.Tensor,
    left: torch.Tensor,
    right: torch.Tensor,
    *,
    reduce: bool = True,
) -> torch.Tensor:
    """Sum of the left and right reconstruction errors, per image."""
    per_image = pixel_loss(dec_left, left, reduce=False) + pixel_loss(
        dec_right, right, reduce=False
    )
    return _reduce(per_image, reduce=reduce)


def weighted_generator_loss(
    l_p: torch.Tensor,
    weights: LossWeights,
    ablation: Ablation,
    l_vc: torch.Tensor | None = None,
    l_adv: torch.Tensor | None = None,
    l_sharp: torch.Tensor | None = None,
) -> torch.Tensor:
    """Differentiable ``L_p + l1 L_vc + l2 L_adv + l3 L_sharp``.

    An ablated or missing term is left out of the graph entirely.
    """
    total = l_p
    if ablation.use_vdn and l_vc is not None:
        total = total + weights.lambda1 * l_vc
    if ablation.use_adv and l_adv is not None:
        total = total + weights.lambda2 * l_adv
    if ablation.use_sharp and l_sharp is not None:
        total = total + weights.lambda3 * l_sharp
    return total


def generator_total(
    components: Mapping[str, float],
    weights: LossWeights,
    ablation: Ablation,
) -> LossReport:
    """Weighted generator loss with its breakdown.

    Parameters
    ----------
    components:
        ``l_p``, ``l_vc``, ``l_adv`` and ``l_sharp`` (missing ones are 0),
        optionally ``l_disc``.
    weights:
        The three balancing weights.
    ablation:
        Ablated components are set to 0 before weighting.

    Raises
    ------
    ValueError
        If a component is not finite.

    """
    values = {}
    for name in (*GENERATOR_COMPONENTS, "l_disc"):
        value = float(components.get(name, 0.0))
        if not math.isfinite(value):
            error_message = f"{name} is not finite: {value}"
            raise ValueError(error_message)
        values[name] = value
    if not ablation.use_vdn:
        values["l_vc"] = 0.0
    if not ablation.use_adv:
        values["l_adv"] = 0.0
        values["l_disc"] = 0.0
    if not ablation.use_sharp:
        values["l_sharp"] = 0.0
    values["l_g_total"] = (
        values["l_p"]
        + weights.lambda1 * values["l_vc"]
        + weights.lambda2 * values["l_adv"]
        + weights.lambda3 * values["l_sharp"]
    )
    return LossReport(**values)
