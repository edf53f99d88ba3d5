"""PNG I/O and the crop/resize/normalize preprocessing.

Images here are ``H x W x C`` float32 numpy arrays, either raw in
[0, 255] or normalized to (-1, 1). The networks read ``C x H x W`` torch
tensors; ``to_tensor`` and ``to_image`` convert.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from PIL import Image

_logger = logging.getLogger("scgn.pipeline")

#: Interpolations accepted by ``preprocess``.
INTERPOLATIONS = ("bilinear", "bicubic", "nearest", "area")

RGB_CHANNELS = 3


def read_image(path: Path | str) -> np.ndarray:
    """8-bit image as an ``H x W x 3`` float32 array in [0, 255].

    Raises
    ------
    OSError
        If the file cannot be read as an image.

    """
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32)


def write_image(path: Path | str, image: np.ndarray) -> Path:
    """Write an ``H x W x 3`` array in [0, 255] as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")
    return path


def center_crop(image: np.ndarray) -> np.ndarray:
    """Largest centered square."""
    height, width = image.shape[:2]
    side = min(height, width)
    top = (height - side) // 2
    left = (width - side) // 2
    return image[top : top + side, left : left + side]


def resize(
    image: np.ndarray,
    resolution: int,
    interpolation: str = "bilinear",
) -> np.ndarray:
    """Resize a square ``H x W x C`` array to ``resolution`` pixels."""
    if interpolation not in INTERPOLATIONS:
        error_message = (
            f"unknown interpolation {interpolation!r}, valid: {INTERPOLATIONS}"
        )
        raise ValueError(error_message)
    tensor = torch.from_numpy(np.ascontiguousarray(image, np.float32))
    tensor = tensor.permute(2, 0, 1).unsqueeze(0)
    kwargs = {}
    if interpolation in ("bilinear", "bicubic"):
        kwargs = {"align_corners": False, "antialias": True}
    out = F.interpolate(
        tensor,
        size=(resolution, resolution),
        mode=interpolation,
        **kwargs,
    )
    return out[0].permute(1, 2, 0).numpy()


def preprocess(
    raw: np.ndarray,
    resolution: int = 224,
    interpolation: str = "bilinear",
) -> np.ndarray:
    """Center-crop, resize and map [0, 255] to (-1, 1).

    Parameters
    ----------
    raw:
        ``H x W x 3`` array in [0, 255].
    resolution:
        Output side length.
    interpolation:
        Resize mode; skipped when the crop already has the right size.

    Raises
    ------
    ValueError
        On a zero-size input or one without three channels.

    """
    if raw.ndim != 3 or raw.shape[2] != RGB_CHANNELS:  # noqa: PLR2004
        error_message = f"expected an H x W x 3 image, got {raw.shape}"
        raise ValueError(error_message)
    if raw.shape[0] == 0 or raw.shape[1] == 0:
        error_message = f"degenerate image of shape {raw.shape}"
        raise ValueError(error_message)
    square = center_crop(raw.astype(np.float32, copy=False))
    if square.shape[0] != resolution:
        square = resize(square, resolution, interpolation)
    return (square / 127.5 - 1.0).astype(np.float32)


def denormalize(img: np.ndarray) -> np.ndarray:
    """Map (-1, 1) back to [0, 255].

    Values that fall outside [0, 255] are clamped and counted in a
    warning.
    """
    raw = (np.asarray(img, dtype=np.float64) + 1.0) * 127.5
    clamped = int(np.count_nonzero((raw < 0) | (raw > 255)))  # noqa: PLR2004
    if clamped:
        _logger.warning("Clamped %d out-of-range values", clamped)
    return np.clip(raw, 0.0, 255.0)


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """``H x W x C`` array to a ``C x H x W`` float32 tensor."""
    chw = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)
    return torch.from_numpy(chw)


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """``C x H x W`` (or ``1 x C x H x W``) tensor to ``H x W x C``."""
    if tensor.dim() == 4:  # noqa: PLR2004
        tensor = tensor[0]
    return tensor.detach().cpu().permute(1, 2, 0).numpy()


def side_by_side(*images: np.ndarray) -> np.ndarray:
    """Concatenate equally tall images left to right."""
    return np.concatenate(images, axis=1)
