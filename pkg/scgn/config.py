"""Run configuration of the command line tool.

A run is described by a flat JSON document whose keys are the fields of
``RunConfig``. Values are resolved in this order, first hit wins:

1. command-line flags;
2. the ``--config`` file;
3. ``SCGN_SEED`` (the seed only);
4. the dataclass defaults.

The resolved config, defaults included, is what ``run.json`` records.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from scgn.core.data import (
    Ablation,
    LossWeights,
    ModelConfig,
    OptimizerConfig,
    TrainConfig,
    check_resolution,
)

_logger = logging.getLogger("scgn.config")

#: Environment variable holding the lowest-precedence seed.
SEED_ENV = "SCGN_SEED"

#: Environment variable overriding where run outputs go by default.
HOME_ENV = "SCGN_HOME"

COMMANDS = (
    "train",
    "synthesize",
    "decompose",
    "evaluate",
    "validate-arch",
    "gradcheck",
)


class ConfigError(ValueError):
    """Custom run configuration error."""


def scgn_home() -> Path:
    """Root of the default output directories."""
    override = os.environ.get(HOME_ENV)
    return Path(override) if override else Path.home() / ".scgn"


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError as err:
        error_message = f"{SEED_ENV} must be an integer, got {raw!r}"
        raise ConfigError(error_message) from err


@dataclass
class RunConfig:
    """Every setting of one command, with the published defaults.

    Only the fields a command reads matter to it; the rest are recorded
    in the run manifest as they are.
    """

    command: str
    # data
    dataset_root: str | None = None
    split: str | None = None
    layout: str = "triplet"
    synthetic: int | None = None
    interpolation: str = "bilinear"
    # model
    resolution: int = 224
    width: float = 1.0
    max_kernel: int | None = None
    vdn_input: str = "synthesized"
    ablation: list[str] = field(default_factory=list)
    spec_dir: str | None = None
    # training
    iterations: int = 371_400
    batch_size: int = 1
    lambda1: float = 0.01
    lambda2: float = 0.001
    lambda3: float = 0.01
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    decay_factor: float = 0.1
    decay_at_iteration: int = 185_700
    checkpoint_interval: int = 10_000
    log_interval: int = 100
    clip_grad_norm: float | None = None
    seed: int | None = None
    resume: str | None = None
    # inference and evaluation
    checkpoint: str | None = None
    checkpoints: list[str] = field(default_factory=list)
    left: str | None = None
    right: str | None = None
    middle: str | None = None
    grid: bool = False
    output: str | None = None
    # gradient check
    samples: int = 60
    step: float = 1e-4

    def __post_init__(self) -> None:
        """Check the command and the fields it needs.

        Raises
        ------
        ConfigError
            On an unknown command, a missing required field, an invalid
            resolution, or a seed given together with ``resume``.

        """
        if self.command not in COMMANDS:
            error_message = f"unknown command {self.command!r}"
            raise ConfigError(error_message)
        try:
            check_resolution(self.resolution)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if self.resume is not None and self.seed is not None:
            error_message = (
                "a resumed run keeps the seed of its checkpoint; drop "
                "either resume or seed"
            )
            raise ConfigError(error_message)
        if self.synthetic is not None and self.synthetic < 1:
            error_message = f"synthetic must be >= 1, got {self.synthetic}"
            raise ConfigError(error_message)

        needs_data = self.command in {"train", "evaluate"}
        if needs_data and self.dataset_root is None and not self.synthetic:
            error_message = f"{self.command} needs dataset_root or synthetic"
            raise ConfigError(error_message)
        required = {
            "synthesize": ("checkpoint", "left", "right"),
            "decompose": ("checkpoint", "middle"),
        }.get(self.command, ())
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            error_message = f"{self.command} needs {', '.join(missing)}"
            raise ConfigError(error_message)
        if (
            self.command == "evaluate"
            and self.checkpoint is None
            and not self.checkpoints
        ):
            error_message = "evaluate needs checkpoint or checkpoints"
            raise ConfigError(error_message)

        # Building the typed configs validates every numeric field.
        self.model_config()
        self.train_config()

    @property
    def effective_seed(self) -> int:
        return 0 if self.seed is None else self.seed

    @property
    def output_dir(self) -> Path:
        """``output``, or ``$SCGN_HOME/<command>``."""
        if self.output is not None:
            return Path(self.output)
        return scgn_home() / self.command

    def ablation_flags(self) -> Ablation:
        try:
            return Ablation.from_names(self.ablation)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def model_config(self) -> ModelConfig:
        """ModelConfig of a freshly built bundle."""
        try:
            return ModelConfig(
                resolution=self.resolution,
                width=self.width,
                max_kernel=self.max_kernel,
                vdn_input=self.vdn_input,
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def train_config(self, ablation: Ablation | None = None) -> TrainConfig:
        """TrainConfig; ``ablation`` overrides the configured flags."""
        try:
            return TrainConfig(
                total_iterations=self.iterations,
                batch_size=self.batch_size,
                weights=LossWeights(self.lambda1, self.lambda2, self.lambda3),
                optimizer=OptimizerConfig(
                    beta1=self.beta1,
                    beta2=self.beta2,
                    lr_generator=self.lr_generator,
                    lr_discriminator=self.lr_discriminator,
                    decay_factor=self.decay_factor,
                    decay_at_iteration=self.decay_at_iteration,
                ),
                ablation=ablation or self.ablation_flags(),
                checkpoint_interval=self.checkpoint_interval,
                log_interval=self.log_interval,
                seed=self.effective_seed,
                clip_grad_norm=self.clip_grad_norm,
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def to_manifest(self) -> dict[str, Any]:
        """Every field plus the typed configs they resolve to."""
        train = asdict(self.train_config())
        model = asdict(self.model_config())
        model["vdn_input"] = str(model["vdn_input"])
        return {
            "config": asdict(self),
            "effective": {
                "seed": self.effective_seed,
                "model": model,
                "train": train,
                "output_dir": os.fspath(self.output_dir),
            },
        }


FIELD_NAMES = frozenset(f.name for f in fields(RunConfig))


def read_config_file(path: Path | str) -> dict[str, Any]:
    """Parse a run config document.

    Raises
    ------
    ConfigError
        If the file is unreadable, not a JSON object, or has a key that
        is not a RunConfig field.

    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        error_message = f"cannot read config {path}: {err}"
        raise ConfigError(error_message) from err
    if not isinstance(raw, dict):
        error_message = f"config {path} must be a JSON object"
        raise ConfigError(error_message)
    unknown = sorted(set(raw) - FIELD_NAMES)
    if unknown:
        error_message = f"config {path}: unknown keys {unknown}"
        raise ConfigError(error_message)
    return raw


def load_run_config(
    command: str,
    path: Path | str | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Resolve a RunConfig from its sources.

    Parameters
    ----------
    command:
        Subcommand name; wins over a ``command`` key in the file.
    path:
        Optional JSON config document.
    overrides:
        Command-line values; ``None`` entries are treated as unset.

    Raises
    ------
    ConfigError
        On any invalid or conflicting value.

    """
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    overrides = overrides or {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    values["command"] = command
    if values.get("seed") is None and values.get("resume") is None:
        env = _env_seed()
        if env is not None:
            _logger.info("Using seed %d from %s", env, SEED_ENV)
            values["seed"] = env
    try:
        return RunConfig(**values)
    except TypeError as err:
        error_message = f"invalid config: {err}"
        raise ConfigError(error_message) from err
