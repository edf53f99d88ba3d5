"""Checkpoint archives: specs, parameters and trainer state in one file.

An archive is a ``torch.save`` dictionary holding only plain types and
tensors, so it loads with ``weights_only=True``::

    {
        "format": 1,
        "specs": {"vsn": <json>, "vdn": <json>, "disc": <json>},
        "model_config": {...},
        "ablation": {...},
        "params": {"vsn/ec1_l/weight": tensor, ...},
        "trainer": {
            "iteration": int,
            "seed": int,
            "optimizers": {"theta_G": state_dict, ...},
            "rng_state": <json>,
            "history": [{...LossReport fields...}, ...],
        },
    }
"""

from __future__ import annotations

import logging
import os
import pickle
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import torch

from scgn.core.data import Ablation, LossReport, ModelConfig
from scgn.core.layers import NetworkSpec, ShapeError
from scgn.core.models import ModelBundle, build_from_specs

if TYPE_CHECKING:
    from scgn.core.trainer import TrainState

_logger = logging.getLogger("scgn.checkpoint")

FORMAT_VERSION = 1

_NAME = re.compile(r"ckpt_(\d+)\.scgn$")


class CheckpointError(Exception):
    """Custom checkpoint read/write error."""


@dataclass
class Checkpoint:
    """A loaded archive."""

    path: Path
    bundle: ModelBundle
    iteration: int = 0
    optimizer_states: dict[str, dict[str, Any]] = field(default_factory=dict)
    rng_state: str | None = None
    seed: int = 0
    history: list[LossReport] = field(default_factory=list)


def checkpoint_name(iteration: int) -> str:
    """``ckpt_<iteration>.scgn``."""
    return f"ckpt_{iteration}.scgn"


def find_checkpoints(directory: Path | str) -> list[Path]:
    """Archives of a run directory, by iteration."""
    found = [
        (int(match.group(1)), path)
        for path in Path(directory).glob("ckpt_*.scgn")
        if (match := _NAME.search(path.name))
    ]
    return [path for _, path in sorted(found)]


def _model_payload(bundle: ModelBundle) -> dict[str, Any]:
    config = asdict(bundle.config)
    config["vdn_input"] = str(bundle.config.vdn_input)
    return {
        "format": FORMAT_VERSION,
        "specs": {k: v.to_json() for k, v in bundle.specs().items()},
        "model_config": config,
        "ablation": asdict(bundle.ablation),
        "params": {
            name: param.detach().cpu().clone()
            for name, param in bundle.params.entries.items()
        },
    }


def save_checkpoint(
    directory: Path | str,
    bundle: ModelBundle,
    state: TrainState | None = None,
) -> Path:
    """Write ``ckpt_<iteration>.scgn`` atomically.

    Raises
    ------
    CheckpointError
        If the file cannot be written (for instance a full disk).

    """
    payload = _model_payload(bundle)
    iteration = 0
    if state is not None:
        iteration = state.iteration
        payload["trainer"] = {
            "iteration": state.iteration,
            "seed": state.seed,
            "optimizers": {
                str(which): optimizer.state_dict()
                for which, optimizer in state.optimizers.items()
            },
            "rng_state": state.rng_state(),
            "history": [asdict(report) for report in state.history],
        }
    path = Path(directory) / checkpoint_name(iteration)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except OSError as err:
        tmp.unlink(missing_ok=True)
        error_message = f"could not write {path}"
        raise CheckpointError(error_message) from err
    _logger.info("Saved %s", path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read an archive and rebuild its bundle.

    Raises
    ------
    CheckpointError
        If the file is unreadable, was written by another format
        version, or its parameters do not match its specs.

    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, EOFError, RuntimeError, pickle.UnpicklingError) as err:
        error_message = f"could not read {path}"
        raise CheckpointError(error_message) from err
    version = payload.get("format") if isinstance(payload, dict) else None
    if version != FORMAT_VERSION:
        error_message = f"{path} is not a format {FORMAT_VERSION} checkpoint"
        raise CheckpointError(error_message)

    try:
        config = ModelConfig(**payload["model_config"])
        ablation = Ablation(**payload["ablation"])
        specs = {
            name: NetworkSpec.from_json(text)
            for name, text in payload["specs"].items()
        }
        for spec in specs.values():
            spec.infer_shapes()
            sizes = {s.height for s in spec.inputs.values()}
            if sizes != {config.resolution}:
                error_message = (
                    f"{spec.name} spec expects {sizes} px inputs, the model "
                    f"config says {config.resolution}"
                )
                raise CheckpointError(error_message)
        bundle = build_from_specs(specs, config, ablation, seed=None)
        bundle.params.load(payload["params"])
    except (KeyError, TypeError, ValueError) as err:
        # ShapeError is a ValueError.
        error_message = f"{path}: parameters do not match the specs ({err})"
        raise CheckpointError(error_message) from err

    checkpoint = Checkpoint(path=path, bundle=bundle)
    trainer = payload.get("trainer")
    if trainer is not None:
        checkpoint.iteration = int(trainer["iteration"])
        checkpoint.optimizer_states = dict(trainer["optimizers"])
        checkpoint.rng_state = trainer["rng_state"]
        checkpoint.seed = int(trainer.get("seed", 0))
        checkpoint.history = [LossReport(**r) for r in trainer["history"]]
    _logger.info(
        "Loaded %s (iteration %d, %d parameters)",
        path,
        checkpoint.iteration,
        bundle.params.numel(),
    )
    return checkpoint


__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ShapeError",
    "checkpoint_name",
    "find_checkpoints",
    "load_checkpoint",
    "save_checkpoint",
]
