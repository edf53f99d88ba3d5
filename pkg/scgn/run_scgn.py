"""Command line tool: train, synthesize, decompose, evaluate, check.

``scgn <command> [--config run.json] [overrides]``. Exit status is 0 on
success, 1 when the configuration or the inputs are invalid and 2 when a
run aborts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from scgn.arch_info import SPEC_DIR, SPEC_FILES, TABLES
from scgn.config import ConfigError, RunConfig, load_run_config
from scgn.core.checkpoint import CheckpointError, load_checkpoint
from scgn.core.data import CANONICAL_RESOLUTION
from scgn.core.layers import (
    ShapeError,
    count_params,
    load_spec,
    scale_spec,
    validate_against_table,
)
from scgn.core.metrics import MMSE_DEFINITION, evaluate_dataset
from scgn.core.models import (
    GRADCHECK_CONFIG,
    build_bundle,
    decompose,
    synthesize,
)
from scgn.core.trainer import (
    TrainingAborted,
    TrainState,
    fit,
    gradient_check,
)
from scgn.pipeline.dataset import (
    DatasetError,
    TripletDataset,
    load_manifest,
    stack_triplets,
)
from scgn.pipeline.images import (
    denormalize,
    read_image,
    side_by_side,
    to_image,
    to_tensor,
    write_image,
)
from scgn.pipeline.synthetic import synth_triplets
from scgn.reports import plot_loss_curves, plot_psnr_curve, write_json

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from scgn.pipeline.dataset import ViewTriplet

_logger = logging.getLogger("scgn")

EXIT_OK, EXIT_INVALID, EXIT_ABORTED = 0, 1, 2

#: Largest relative error ``gradcheck`` accepts.
GRADCHECK_TOLERANCE = 1e-4


def setup_logging(verbose: bool = False, out_dir: Path | None = None) -> None:
    """Attach the stream handler and, given a directory, the file handler."""
    for handler in _logger.handlers:
        handler.close()
    _logger.handlers.clear()
    _logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    formatter = logging.Formatter(
        "%(name)s: %(asctime)s %(levelname)s - %(message)s",
    )

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(out_dir / "scgn.log")
        file_handler.setFormatter(formatter)
        file_handler.setLevel(logging.INFO)
        _logger.addHandler(file_handler)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    stream_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    _logger.addHandler(stream_handler)


def load_triplets(
    config: RunConfig,
    resolution: int,
    split: str,
    seed: int | None = None,
) -> Sequence[ViewTriplet]:
    """Synthetic triplets, or the ``split`` of the dataset on disk.

    ``seed`` defaults to the run seed.
    """
    seed = config.effective_seed if seed is None else seed
    if config.synthetic:
        return synth_triplets(config.synthetic, resolution, seed=seed)
    manifest = load_manifest(
        config.dataset_root,
        config.split or split,
        resolution,
        config.layout,
        seed,
    )
    return TripletDataset(manifest, config.interpolation)


def _read_view(path: str, resolution: int) -> torch.Tensor:
    """Normalized ``1 x 3 x H x W`` tensor of an image at ``resolution``."""
    raw = read_image(path)
    if raw.shape[:2] != (resolution, resolution):
        error_message = (
            f"{path} is {raw.shape[1]}x{raw.shape[0]}, the checkpoint "
            f"expects {resolution}x{resolution} images"
        )
        raise ShapeError(error_message)
    return to_tensor(raw / 127.5 - 1.0).unsqueeze(0)


def _as_pixels(image: torch.Tensor) -> np.ndarray:
    return denormalize(to_image(image))


def cmd_train(config: RunConfig) -> int:
    """Fit a fresh or resumed bundle and write its checkpoints."""
    out_dir = config.output_dir
    manifest = config.to_manifest()
    if config.resume is not None:
        checkpoint = load_checkpoint(config.resume)
        bundle = checkpoint.bundle
        if config.ablation and config.ablation_flags() != bundle.ablation:
            error_message = (
                f"{config.resume} was trained with ablation "
                f"{bundle.ablation.names() or 'none'}, not {config.ablation}"
            )
            raise ConfigError(error_message)
        seed = checkpoint.seed
        train_cfg = replace(
            config.train_config(bundle.ablation), seed=seed
        )
        state = TrainState.restore(checkpoint, train_cfg)
        model = asdict(bundle.config)
        model["vdn_input"] = str(bundle.config.vdn_input)
        manifest["effective"]["model"] = model
        manifest["effective"]["train"] = asdict(train_cfg)
        manifest["effective"]["seed"] = seed
    else:
        spec_dir = config.spec_dir and Path(config.spec_dir)
        bundle = build_bundle(
            config.model_config(),
            config.ablation_flags(),
            seed=config.effective_seed,
            spec_dir=spec_dir,
        )
        seed = config.effective_seed
        train_cfg = config.train_config()
        state = None
    dataset = load_triplets(config, bundle.resolution, "train", seed)
    write_json(out_dir / "run.json", manifest)

    try:
        result = fit(bundle, dataset, train_cfg, out_dir, state)
    except (TrainingAborted, CheckpointError):
        _logger.exception("Training aborted")
        return EXIT_ABORTED
    plot_loss_curves(result.history, out_dir / "losses.png")
    _logger.info("Finished: %s", result.checkpoints[-1])
    return EXIT_OK


def cmd_synthesize(config: RunConfig) -> int:
    """Write the middle view of one left/right pair."""
    bundle = load_checkpoint(config.checkpoint).bundle
    left = _read_view(config.left, bundle.resolution).to(bundle.dtype)
    right = _read_view(config.right, bundle.resolution).to(bundle.dtype)
    with bundle.eval_mode():
        middle = synthesize(bundle, left, right)

    out_dir = config.output_dir
    path = write_image(out_dir / "middle.png", _as_pixels(middle))
    _logger.info("Wrote %s", path)
    if config.grid:
        panels = [_as_pixels(x) for x in (left, middle, right)]
        path = write_image(out_dir / "grid.png", side_by_side(*panels))
        _logger.info("Wrote %s", path)
    return EXIT_OK


def cmd_decompose(config: RunConfig) -> int:
    """Write the left and right views recovered from a middle view."""
    bundle = load_checkpoint(config.checkpoint).bundle
    middle = _read_view(config.middle, bundle.resolution).to(bundle.dtype)
    with bundle.eval_mode():
        left, right = decompose(bundle, middle)

    out_dir = config.output_dir
    for name, view in (("left", left), ("right", right)):
        path = write_image(out_dir / f"{name}.png", _as_pixels(view))
        _logger.info("Wrote %s", path)
    if config.grid:
        panels = [_as_pixels(x) for x in (left, middle, right)]
        write_image(out_dir / "grid.png", side_by_side(*panels))
    return EXIT_OK


def cmd_evaluate(config: RunConfig) -> int:
    """Score one or more checkpoints on the test split."""
    paths = config.checkpoints or [config.checkpoint]
    wanted = config.ablation_flags() if config.ablation else None
    out_dir = config.output_dir
    dataset = None
    points = []
    for path in paths:
        checkpoint = load_checkpoint(path)
        bundle = checkpoint.bundle
        if wanted is not None and bundle.ablation != wanted:
            error_message = (
                f"{path} was trained with ablation "
                f"{bundle.ablation.names() or 'none'}, not {config.ablation}"
            )
            raise ConfigError(error_message)
        if dataset is None:
            dataset = load_triplets(config, bundle.resolution, "test")
        stem = (
            f"metrics_{checkpoint.iteration}" if len(paths) > 1 else "metrics"
        )
        report = evaluate_dataset(
            bundle,
            dataset,
            batch_size=config.batch_size,
            checkpoint=str(path),
            iteration=checkpoint.iteration,
            out_dir=out_dir,
            stem=stem,
        )
        means = report.means()
        print(
            f"{path}: PSNR {means['psnr']:.3f} dB, "
            f"MS-SSIM {means['ms_ssim']:.4f}, mMSE {means['mmse']:.3f}, "
            f"L1 {means['l1']:.5f} [{report.ablation_tag}]",
        )
        points.append((checkpoint.iteration, means["psnr"]))
    _logger.info("%s", MMSE_DEFINITION)
    if len(points) > 1:
        plot_psnr_curve(points, out_dir / "psnr_curve.png")
    return EXIT_OK


def cmd_validate_arch(config: RunConfig) -> int:
    """Compare the spec documents with the structure tables."""
    spec_dir = SPEC_DIR if config.spec_dir is None else Path(config.spec_dir)
    canonical = config.resolution == CANONICAL_RESOLUTION
    passed = True
    for name, table in TABLES.items():
        try:
            spec = load_spec(spec_dir / SPEC_FILES[name])
            if canonical:
                report = validate_against_table(spec, table)
            else:
                spec = scale_spec(spec, config.resolution)
                shapes = spec.infer_shapes()
        except (OSError, ValueError) as err:
            print(f"{name}: {err}")
            return EXIT_INVALID
        print(f"{name}: {count_params(spec)} parameters")
        if canonical:
            for line in report.lines():
                print(f"  {line}")
            if not report.passed:
                print(f"  first failing layer: {report.first_failure.name}")
                passed = False
        else:
            for layer, shape in shapes.items():
                print(f"  {name}/{layer}: {shape}")
            print("  table comparison skipped (non-canonical resolution)")
    return EXIT_OK if passed else EXIT_INVALID


def cmd_gradcheck(config: RunConfig) -> int:
    """Finite-difference check of all three updates on a tiny bundle."""
    model = replace(GRADCHECK_CONFIG, vdn_input=config.vdn_input)
    ablation = config.ablation_flags()
    bundle = build_bundle(model, ablation, seed=config.effective_seed)
    train_cfg = config.train_config()
    triplets = synth_triplets(
        train_cfg.batch_size, model.resolution, seed=config.effective_seed
    )
    report = gradient_check(
        bundle,
        stack_triplets(triplets),
        train_cfg,
        samples=config.samples,
        step=config.step,
    )
    for which, result in report.partitions.items():
        print(
            f"{which}: max relative error {result.max_rel_error:.3g} over "
            f"{result.checked} scalars ({result.excluded} at a kink)",
        )
    return (
        EXIT_OK
        if report.max_rel_error < GRADCHECK_TOLERANCE
        else EXIT_INVALID
    )


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "decompose": cmd_decompose,
    "evaluate": cmd_evaluate,
    "validate-arch": cmd_validate_arch,
    "gradcheck": cmd_gradcheck,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON run config")
    parser.add_argument("--output", help="Output directory")
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--width", type=float, help="Channel multiplier")
    parser.add_argument("--max-kernel", type=int)
    parser.add_argument(
        "--ablation",
        nargs="+",
        choices=["no-vdn", "mvdn", "no-adv", "no-sharp", "mvsn"],
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--verbose", action="store_true")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset-root")
    parser.add_argument("--split")
    parser.add_argument("--layout", choices=["triplet", "sequence"])
    parser.add_argument(
        "--synthetic",
        type=int,
        metavar="N",
        help="Use N procedural triplets instead of a dataset",
    )
    parser.add_argument(
        "--interpolation",
        choices=["bilinear", "bicubic", "nearest", "area"],
    )


def build_parser() -> argparse.ArgumentParser:
    """Parser of every subcommand and its overrides."""
    parser = argparse.ArgumentParser(
        prog="scgn",
        description="Middle-view synthesis with self-consistency",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a bundle")
    _add_common(train)
    _add_data(train)
    train.add_argument("--iterations", type=int)
    train.add_argument("--batch-size", type=int)
    for name in ("lambda1", "lambda2", "lambda3"):
        train.add_argument(f"--{name}", type=float)
    train.add_argument("--lr-generator", type=float)
    train.add_argument("--lr-discriminator", type=float)
    train.add_argument("--decay-at-iteration", type=int)
    train.add_argument("--decay-factor", type=float)
    train.add_argument("--checkpoint-interval", type=int)
    train.add_argument("--log-interval", type=int)
    train.add_argument("--clip-grad-norm", type=float)
    train.add_argument(
        "--vdn-input", choices=["synthesized", "ground_truth"]
    )
    train.add_argument("--resume", help="Checkpoint to continue from")

    synth = commands.add_parser("synthesize", help="Synthesize a middle view")
    _add_common(synth)
    synth.add_argument("--checkpoint")
    synth.add_argument("--left")
    synth.add_argument("--right")
    synth.add_argument(
        "--grid",
        action="store_true",
        default=None,
        help="Also write a left | synthesized | right panel",
    )

    dec = commands.add_parser("decompose", help="Recover the side views")
    _add_common(dec)
    dec.add_argument("--checkpoint")
    dec.add_argument("--middle")
    dec.add_argument("--grid", action="store_true", default=None)

    ev = commands.add_parser("evaluate", help="Score checkpoints")
    _add_common(ev)
    _add_data(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--checkpoints", nargs="+")
    ev.add_argument("--batch-size", type=int)

    arch = commands.add_parser(
        "validate-arch", help="Check the specs against the tables"
    )
    _add_common(arch)
    arch.add_argument("--spec-dir")

    grad = commands.add_parser("gradcheck", help="Check the gradients")
    _add_common(grad)
    grad.add_argument("--samples", type=int)
    grad.add_argument("--step", type=float)
    grad.add_argument("--batch-size", type=int)
    return parser


_NOT_CONFIG = frozenset({"command", "config", "verbose"})

#: Commands with an output directory, which also receives the log file.
_WRITES_OUTPUT = frozenset({"train", "synthesize", "decompose", "evaluate"})


def main(argv: list[str] | None = None) -> int:
    """Run one command and return its exit status."""
    args = build_parser().parse_args(argv)
    overrides = {
        k: v for k, v in vars(args).items() if k not in _NOT_CONFIG
    }
    try:
        config = load_run_config(args.command, args.config, overrides)
    except ConfigError as err:
        print(f"scgn {args.command}: {err}", file=sys.stderr)
        return EXIT_INVALID

    writes = args.command in _WRITES_OUTPUT
    setup_logging(args.verbose, config.output_dir if writes else None)
    try:
        return COMMANDS[args.command](config)
    except (ConfigError, DatasetError, CheckpointError, ValueError) as err:
        # ShapeError is a ValueError.
        _logger.error("%s", err)  # noqa: TRY400
        return EXIT_INVALID
    except (TrainingAborted, OSError, RuntimeError):
        _logger.exception("Aborted")
        return EXIT_ABORTED


def cli() -> None:
    """Console entry point."""
    raise SystemExit(main())


if __name__ == "__main__":
    cli()
