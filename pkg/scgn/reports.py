"""Write loss and metric tables, JSON documents and static plots."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any

import polars as pl
from matplotlib.figure import Figure

from scgn.core.data import LOSS_COLUMNS

if TYPE_CHECKING:
    from collections.abc import Callable

    from scgn.core.data import LossReport
    from scgn.core.metrics import MetricReport

_logger = logging.getLogger("scgn.reports")

LOSS_SCHEMA = {
    name: pl.Int64 if name == "iteration" else pl.Float64
    for name in LOSS_COLUMNS
}

METRIC_SCHEMA = {
    "id": pl.String,
    "psnr": pl.Float64,
    "ms_ssim": pl.Float64,
    "mmse": pl.Float64,
    "l1": pl.Float64,
    "q_s_pred": pl.Float64,
    "q_s_ref": pl.Float64,
}


def _replace_atomically(path: Path, write: Callable[[Path], object]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)
    return path


def losses_to_polars(history: list[LossReport]) -> pl.DataFrame:
    """One row per iteration, columns in ``LOSS_COLUMNS`` order.

    The schema is fixed, so an empty history still has the columns.
    """
    rows = [report.to_row() for report in history]
    return pl.DataFrame(rows, schema=LOSS_SCHEMA, orient="row")


def write_loss_csv(path: Path | str, history: list[LossReport]) -> Path:
    """Rewrite the whole loss csv from ``history``."""
    frame = losses_to_polars(history)
    return _replace_atomically(Path(path), frame.write_csv)


def read_loss_csv(path: Path | str) -> pl.DataFrame:
    """Read a loss csv back with its schema."""
    return pl.read_csv(path, schema=LOSS_SCHEMA)


def write_json(path: Path | str, payload: dict[str, Any]) -> Path:
    """Pretty-printed JSON, written atomically."""
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    return _replace_atomically(
        Path(path),
        lambda tmp: tmp.write_text(text, encoding="utf-8"),
    )


def metrics_to_polars(report: MetricReport) -> pl.DataFrame:
    """Per-image metric rows; an infinite PSNR stays ``inf``."""
    rows = [
        (
            row.id,
            row.psnr,
            row.ms_ssim,
            row.mmse,
            row.l1,
            row.q_s_pred,
            row.q_s_ref,
        )
        for row in report.rows
    ]
    return pl.DataFrame(rows, schema=METRIC_SCHEMA, orient="row")


def write_metric_reports(
    report: MetricReport,
    directory: Path | str,
    stem: str,
) -> tuple[Path, Path]:
    """``<stem>.json`` and ``<stem>.csv`` in ``directory``."""
    directory = Path(directory)
    json_path = _replace_atomically(
        directory / f"{stem}.json",
        lambda tmp: tmp.write_text(report.to_json(), encoding="utf-8"),
    )
    csv_path = _replace_atomically(
        directory / f"{stem}.csv",
        metrics_to_polars(report).write_csv,
    )
    _logger.info("Wrote %s and %s", json_path, csv_path)
    return json_path, csv_path


def plot_psnr_curve(
    points: list[tuple[int, float]],
    path: Path | str,
) -> Path:
    """Mean PSNR against checkpoint iteration, sorted by iteration."""
    points = sorted(points)
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.plot([p[0] for p in points], [p[1] for p in points], marker="o")
    ax.set_title("Test PSNR")
    ax.set_xlabel("Iteration")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(visible=True, alpha=0.3)
    fig.tight_layout()
    return _replace_atomically(
        Path(path),
        lambda tmp: fig.savefig(tmp, format="png"),
    )


def plot_loss_curves(history: list[LossReport], path: Path | str) -> Path:
    """Generator terms and the discriminator loss against iteration."""
    frame = losses_to_polars(history)
    x = frame["iteration"].to_numpy()
    fig = Figure(figsize=(10, 4))
    ax_g, ax_d = fig.subplots(1, 2)
    for name in ("l_p", "l_vc", "l_sharp", "l_g_total"):
        ax_g.plot(x, frame[name].to_numpy(), label=name)
    ax_g.set_title("Generator")
    ax_g.set_xlabel("Iteration")
    ax_g.set_yscale("symlog", linthresh=1e-3)
    ax_g.legend(loc="upper right")
    for name in ("l_adv", "l_disc"):
        ax_d.plot(x, frame[name].to_numpy(), label=name)
    ax_d.set_title("Adversarial")
    ax_d.set_xlabel("Iteration")
    ax_d.legend(loc="upper right")
    fig.tight_layout()
    return _replace_atomically(
        Path(path),
        lambda tmp: fig.savefig(tmp, format="png"),
    )
