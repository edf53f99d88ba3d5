"""Full-reference quality metrics and dataset evaluation.

``psnr``, ``ms_ssim`` and ``mmse`` work on ``H x W x C`` arrays on the
0-255 scale; ``l1_error`` works on normalized tensors and is the
pixel loss itself. ``evaluate_dataset`` synthesizes every middle view of
a dataset and aggregates the per-image values into a MetricReport.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import torch
from scipy.signal import convolve2d

from scgn.core.losses import pixel_loss, sharpness_config_for, sharpness_Q
from scgn.core.models import synthesize
from scgn.pipeline.dataset import stack_triplets
from scgn.pipeline.images import denormalize, to_image
from scgn.reports import write_metric_reports

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

    from scgn.core.models import ModelBundle
    from scgn.pipeline.dataset import ViewTriplet

_logger = logging.getLogger("scgn.metrics")

#: Dynamic range of 8-bit images.
PEAK = 255.0

#: Scale weights of the five-scale MS-SSIM.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

#: Gaussian window of the SSIM statistics.
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

#: JSON spelling of an infinite PSNR.
INF_MARKER = "inf"

#: Numeric columns of a MetricRow.
METRIC_COLUMNS = ("psnr", "ms_ssim", "mmse", "l1", "q_s_pred", "q_s_ref")

MMSE_DEFINITION = (
    "mMSE (this toolkit's definition): mean over images of the per-image "
    "mean squared pixel error on the 0-255 scale"
)


def _check_shapes(pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape:
        error_message = f"shape mismatch: {pred.shape} vs {ref.shape}"
        raise ValueError(error_message)
    if pred.size == 0:
        error_message = "empty image"
        raise ValueError(error_message)


def psnr(pred: np.ndarray, ref: np.ndarray, peak: float = PEAK) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``math.inf`` for equal images.

    Raises
    ------
    ValueError
        On a shape mismatch or a non-positive peak.

    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_shapes(pred, ref)
    if peak <= 0:
        error_message = f"peak must be positive, got {peak}"
        raise ValueError(error_message)
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak**2 / mse)


def ssim_window() -> np.ndarray:
    """Normalized 11 x 11 Gaussian with sigma 1.5."""
    coords = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(coords**2) / (2 * SSIM_SIGMA**2))
    window = np.outer(g, g)
    return window / window.sum()


def _halve(plane: np.ndarray) -> np.ndarray:
    """2 x 2 mean, padding an odd edge by repetition."""
    height, width = plane.shape
    padded = np.pad(plane, ((0, height % 2), (0, width % 2)), mode="edge")
    return 0.25 * (
        padded[0::2, 0::2]
        + padded[1::2, 0::2]
        + padded[0::2, 1::2]
        + padded[1::2, 1::2]
    )


def ms_ssim_scales(size: int) -> int:
    """Largest scale count, at most five, whose coarsest side is >= 11.

    Raises
    ------
    ValueError
        If ``size`` is below the window size.

    """
    if size < SSIM_WINDOW:
        error_message = (
            f"MS-SSIM needs images of at least {SSIM_WINDOW} px, got {size}"
        )
        raise ValueError(error_message)
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS):
        size = math.ceil(size / 2)
        if size < SSIM_WINDOW:
            break
        scales += 1
    return scales


def _ssim_terms(
    x: np.ndarray,
    y: np.ndarray,
    window: np.ndarray,
    peak: float,
) -> tuple[float, float]:
    """Mean luminance and contrast-structure terms of one plane."""
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def blur(a: np.ndarray) -> np.ndarray:
        return convolve2d(a, window, mode="valid")

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    luminance = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    return float(np.mean(luminance * cs)), float(np.mean(cs))


def ms_ssim(pred: np.ndarray, ref: np.ndarray, peak: float = PEAK) -> float:
    """Multi-scale structural similarity in [0, 1].

    Contrast-structure terms are taken at every scale and luminance at
    the coarsest one; channels are scored separately and averaged.
    Images smaller than 161 px use fewer scales with renormalized
    weights (see ``ms_ssim_scales``). Negative terms are clamped to 0.

    Raises
    ------
    ValueError
        On a shape mismatch or an image under 11 px.

    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_shapes(pred, ref)
    if pred.ndim == 2:  # noqa: PLR2004
        pred, ref = pred[..., None], ref[..., None]
    scales = ms_ssim_scales(min(pred.shape[:2]))
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    window = ssim_window()

    scores = []
    for channel in range(pred.shape[2]):
        x, y = pred[..., channel], ref[..., channel]
        score = 1.0
        for scale, weight in enumerate(weights):
            full, cs = _ssim_terms(x, y, window, peak)
            term = full if scale == scales - 1 else cs
            score *= max(term, 0.0) ** weight
            x, y = _halve(x), _halve(y)
        scores.append(score)
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def mmse(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean over images of the per-image MSE, on the 0-255 scale.

    ``pred`` and ``ref`` are ``N x H x W x C`` batches (a single image
    counts as a batch of one).

    Raises
    ------
    ValueError
        On a shape mismatch.

    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_shapes(pred, ref)
    if pred.ndim < 4:  # noqa: PLR2004
        pred, ref = pred[None], ref[None]
    per_image = ((pred - ref) ** 2).reshape(pred.shape[0], -1).mean(axis=1)
    return float(per_image.mean())


def l1_error(pred: torch.Tensor, ref: torch.Tensor) -> float:
    """Mean over images of the mean absolute error, normalized scale."""
    return float(pixel_loss(pred, ref))


def _inception_score(*_: object) -> float:
    error_message = (
        "inception_score needs a pretrained classifier and is not "
        "available"
    )
    raise NotImplementedError(error_message)


#: Metrics by report name.
METRIC_REGISTRY: dict[str, Callable[..., float]] = {
    "psnr": psnr,
    "ms_ssim": ms_ssim,
    "mmse": mmse,
    "l1": l1_error,
    "inception_score": _inception_score,
}


def get_metric(name: str) -> Callable[..., float]:
    """Look a metric up by name.

    Raises
    ------
    KeyError
        On an unknown name.

    """
    try:
        return METRIC_REGISTRY[name]
    except KeyError as err:
        error_message = (
            f"unknown metric {name!r} (known: {sorted(METRIC_REGISTRY)})"
        )
        raise KeyError(error_message) from err


@dataclass
class MetricRow:
    """Metrics of one synthesized middle view."""

    id: str
    psnr: float
    ms_ssim: float
    mmse: float
    l1: float
    q_s_pred: float
    q_s_ref: float


def _encode(value: float) -> float | str:
    return INF_MARKER if value == math.inf else value


def _decode(value: float | str) -> float:
    return math.inf if value == INF_MARKER else float(value)


@dataclass
class MetricReport:
    """Per-image rows plus dataset means.

    The PSNR mean skips infinite values; ``inf_excluded`` counts them.
    A dataset where every PSNR is infinite has an infinite mean.
    """

    rows: list[MetricRow] = field(default_factory=list)
    ablation: list[str] = field(default_factory=list)
    checkpoint: str | None = None
    iteration: int | None = None

    @property
    def inf_excluded(self) -> int:
        return sum(1 for row in self.rows if row.psnr == math.inf)

    def mean(self, name: str) -> float:
        """Dataset mean of one column.

        Raises
        ------
        ValueError
            If the report has no rows.

        """
        if not self.rows:
            error_message = "empty metric report"
            raise ValueError(error_message)
        values = [getattr(row, name) for row in self.rows]
        if name == "psnr":
            finite = [v for v in values if v != math.inf]
            return float(np.mean(finite)) if finite else math.inf
        return float(np.mean(values))

    def means(self) -> dict[str, float]:
        return {name: self.mean(name) for name in METRIC_COLUMNS}

    @property
    def ablation_tag(self) -> str:
        return ",".join(self.ablation) or "full"

    def to_json(self) -> str:
        """JSON document; an infinite PSNR is written as ``"inf"``."""
        payload = {
            "ablation": self.ablation_tag,
            "checkpoint": self.checkpoint,
            "iteration": self.iteration,
            "mmse_definition": MMSE_DEFINITION,
            "inf_excluded": self.inf_excluded,
            "means": {k: _encode(v) for k, v in self.means().items()},
            "rows": [
                {**asdict(row), "psnr": _encode(row.psnr)} for row in self.rows
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        """Parse the output of ``to_json``; means are recomputed."""
        raw = json.loads(text)
        rows = [
            MetricRow(**{**row, "psnr": _decode(row["psnr"])})
            for row in raw["rows"]
        ]
        tag = raw["ablation"]
        return cls(
            rows=rows,
            ablation=[] if tag == "full" else tag.split(","),
            checkpoint=raw["checkpoint"],
            iteration=raw["iteration"],
        )


def evaluate_dataset(
    bundle: ModelBundle,
    dataset: Sequence[ViewTriplet],
    batch_size: int = 4,
    checkpoint: str | None = None,
    iteration: int | None = None,
    out_dir: Path | None = None,
    stem: str = "metrics",
) -> MetricReport:
    """Synthesize every middle view and score it against the ground truth.

    Parameters
    ----------
    bundle:
        Trained model.
    dataset:
        Triplets at the bundle resolution, scored in order.
    batch_size:
        Triplets per forward pass; does not change the values.
    checkpoint, iteration:
        Recorded on the report.
    out_dir:
        If given, ``<stem>.json`` and ``<stem>.csv`` are written there.
    stem:
        Report file name stem.

    Raises
    ------
    ValueError
        On an empty dataset.
    ShapeError
        If the triplets are not at the bundle resolution.

    """
    if not dataset:
        error_message = "cannot evaluate an empty dataset"
        raise ValueError(error_message)
    sharp = sharpness_config_for(bundle.resolution)
    report = MetricReport(
        ablation=bundle.ablation.names(),
        checkpoint=checkpoint,
        iteration=iteration,
    )
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        chunk = [dataset[i] for i in range(start, stop)]
        batch = stack_triplets(chunk, bundle.dtype)
        with bundle.eval_mode():
            synth = synthesize(bundle, batch.left, batch.right)
            l1 = pixel_loss(synth, batch.middle, reduce=False)
            q_pred = sharpness_Q(synth, sharp)
            q_ref = sharpness_Q(batch.middle, sharp)
        for k, triplet in enumerate(chunk):
            pred = denormalize(to_image(synth[k]))
            ref = denormalize(triplet.middle)
            report.rows.append(
                MetricRow(
                    id=triplet.id,
                    psnr=psnr(pred, ref),
                    ms_ssim=ms_ssim(pred, ref),
                    mmse=mmse(pred, ref),
                    l1=float(l1[k]),
                    q_s_pred=float(q_pred[k]),
                    q_s_ref=float(q_ref[k]),
                ),
            )
    _logger.info(
        "Evaluated %d triplets: PSNR %.3f dB (%d infinite), MS-SSIM %.4f",
        len(report.rows),
        report.mean("psnr"),
        report.inf_excluded,
        report.mean("ms_ssim"),
    )
    if out_dir is not None:
        write_metric_reports(report, out_dir, stem)
    return report
