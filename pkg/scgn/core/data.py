"""Dataclasses and enums shared by every part of the toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import auto

from scgn._compat import StrEnum

#: Side length the structure tables are written for.
CANONICAL_RESOLUTION = 224

#: Four stride-2 stages in the VDN encoder and in the discriminator must
#: land on integer sizes.
RESOLUTION_MULTIPLE = 16

#: Discriminator outputs are clamped to ``[EPS, 1 - EPS]`` before a log.
PROBABILITY_EPS = 1e-7

#: Q_S block size at the canonical resolution, scaled proportionally.
CANONICAL_BLOCK_SIZE = 16

#: Smallest block a standard deviation is computed over.
MIN_BLOCK_SIZE = 2

#: Columns of the per-iteration loss csv, in order.
LOSS_COLUMNS = (
    "iteration",
    "l_p",
    "l_vc",
    "l_adv",
    "l_sharp",
    "l_g_total",
    "l_disc",
)


def as_float(name: str, value: object) -> float:
    """Validate that a config value is a finite real number.

    ``nan`` slips through every range check (each comparison against it
    is false), so finiteness is checked before any bound.

    Raises
    ------
    TypeError
        If ``value`` is not a number or is not finite.

    """
    if isinstance(value, bool) or not isinstance(value, int | float):
        error_message = (
            f"{name} must be a number, got {type(value).__name__}: {value!r}"
        )
        raise TypeError(error_message)
    number = float(value)
    if not math.isfinite(number):
        error_message = f"{name} must be a finite number, got {number}"
        raise TypeError(error_message)
    return number


def check_resolution(resolution: int) -> int:
    """Reject a base resolution the stride-2 stages cannot halve cleanly.

    Raises
    ------
    ValueError
        If ``resolution`` is not a positive multiple of 16.

    """
    if (
        isinstance(resolution, bool)
        or not isinstance(resolution, int)
        or resolution <= 0
        or resolution % RESOLUTION_MULTIPLE
    ):
        error_message = (
            f"resolution must be a positive multiple of "
            f"{RESOLUTION_MULTIPLE}, got {resolution!r}"
        )
        raise ValueError(error_message)
    return resolution


class LayerKind(StrEnum):
    """Layer types appearing in the three structure tables."""

    conv = auto()
    dilated_conv = auto()
    deconv = auto()
    maxpool = auto()
    upsample = auto()
    residual_block = auto()
    fully_connected = auto()
    concat = auto()
    projection_1x1 = auto()


class Activation(StrEnum):
    """Non-linearity applied after a layer."""

    leaky_relu = auto()
    relu = auto()
    tanh = auto()
    sigmoid = auto()
    none = auto()


class Partition(StrEnum):
    """Which of the three alternating updates owns a parameter."""

    theta_G = "theta_G"  # noqa: N815
    theta_V = "theta_V"  # noqa: N815
    theta_D = "theta_D"  # noqa: N815


class VdnInput(StrEnum):
    """What the decomposition network reads during training."""

    synthesized = auto()
    ground_truth = auto()


@dataclass(frozen=True)
class Ablation:
    """Switches reproducing the ablation variants.

    Parameters
    ----------
    use_vdn:
        Build and train the decomposition network (L_vc in L_G).
    shared_vdn_decoder:
        mVDN: one decoder with two output heads instead of two decoders.
    use_adv:
        Train the discriminator and add L_adv to L_G.
    use_sharp:
        Add L_sharp to L_G.
    mvsn:
        mVSN: drop the max-pooling and upsampling layers of the VSN.

    """

    use_vdn: bool = True
    shared_vdn_decoder: bool = False
    use_adv: bool = True
    use_sharp: bool = True
    mvsn: bool = False

    def __post_init__(self) -> None:
        """Refuse a shared decoder on a network that is not built."""
        if self.shared_vdn_decoder and not self.use_vdn:
            error_message = "shared_vdn_decoder needs use_vdn"
            raise ValueError(error_message)

    @classmethod
    def from_names(cls, names: list[str] | tuple[str, ...]) -> Ablation:
        """Build from command line tags such as ``no-vdn`` or ``mvsn``.

        Raises
        ------
        ValueError
            On a tag that names no variant.

        """
        flags: dict[str, bool] = {}
        for name in names:
            match name:
                case "no-vdn":
                    flags["use_vdn"] = False
                case "mvdn":
                    flags["shared_vdn_decoder"] = True
                case "no-adv":
                    flags["use_adv"] = False
                case "no-sharp":
                    flags["use_sharp"] = False
                case "mvsn":
                    flags["mvsn"] = True
                case _:
                    error_message = (
                        f"unknown ablation {name!r} (valid: no-vdn, mvdn, "
                        "no-adv, no-sharp, mvsn)"
                    )
                    raise ValueError(error_message)
        return cls(**flags)

    def names(self) -> list[str]:
        """The tags that rebuild this ablation, empty for the full model."""
        tags = []
        if not self.use_vdn:
            tags.append("no-vdn")
        if self.shared_vdn_decoder:
            tags.append("mvdn")
        if not self.use_adv:
            tags.append("no-adv")
        if not self.use_sharp:
            tags.append("no-sharp")
        if self.mvsn:
            tags.append("mvsn")
        return tags


@dataclass(frozen=True)
class ModelConfig:
    """How the canonical architectures are instantiated.

    Parameters
    ----------
    resolution:
        Base spatial size, a multiple of 16 (224 for the tables).
    width:
        Multiplier on every channel count (minimum one channel), except
        the image outputs and the fully connected head.
    max_kernel:
        Cap on kernel sizes, ``None`` for the table values.
    leaky_slope:
        Negative slope of every leaky ReLU.
    init_std:
        Standard deviation of the truncated-normal weight init.
    upsample_mode:
        Interpolation of the upsample layers.
    smooth:
        Replace hidden ReLU/leaky ReLU by SiLU and max pooling by average
        pooling. Only for finite-difference gradient checks.
    vdn_input:
        Whether the VDN reads the synthesized or the ground-truth view
        at train time.

    """

    resolution: int = CANONICAL_RESOLUTION
    width: float = 1.0
    max_kernel: int | None = None
    leaky_slope: float = 0.2
    init_std: float = 0.02
    upsample_mode: str = "nearest"
    smooth: bool = False
    vdn_input: VdnInput = VdnInput.synthesized

    def __post_init__(self) -> None:
        """Validate the numeric fields."""
        check_resolution(self.resolution)
        if as_float("width", self.width) <= 0:
            error_message = f"width must be positive, got {self.width}"
            raise ValueError(error_message)
        # Same padding needs an odd kernel.
        if self.max_kernel is not None and (
            self.max_kernel < 1 or self.max_kernel % 2 == 0
        ):
            error_message = (
                f"max_kernel must be odd and >= 1, got {self.max_kernel}"
            )
            raise ValueError(error_message)
        if as_float("leaky_slope", self.leaky_slope) < 0:
            error_message = "leaky_slope must not be negative"
            raise ValueError(error_message)
        if as_float("init_std", self.init_std) <= 0:
            error_message = "init_std must be positive"
            raise ValueError(error_message)
        object.__setattr__(self, "vdn_input", VdnInput(self.vdn_input))


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights of L_G = L_p + l1 L_vc + l2 L_adv + l3 L_sharp."""

    lambda1: float = 0.01
    lambda2: float = 0.001
    lambda3: float = 0.01

    def __post_init__(self) -> None:
        """Every weight must be finite and non-negative."""
        for spec in fields(self):
            if as_float(spec.name, getattr(self, spec.name)) < 0:
                error_message = f"{spec.name} must not be negative"
                raise ValueError(error_message)


@dataclass(frozen=True)
class SharpnessConfig:
    """Block size and reblur filter of the sharpness criterion Q_S."""

    block_size: int = CANONICAL_BLOCK_SIZE
    gaussian_kernel: int = 7
    gaussian_sigma: float = 1.5

    def __post_init__(self) -> None:
        """Validate the filter and the block."""
        if self.block_size < MIN_BLOCK_SIZE:
            error_message = (
                f"block_size must be >= {MIN_BLOCK_SIZE}, "
                f"got {self.block_size}"
            )
            raise ValueError(error_message)
        if self.gaussian_kernel < 1 or self.gaussian_kernel % 2 == 0:
            error_message = (
                f"gaussian_kernel must be odd, got {self.gaussian_kernel}"
            )
            raise ValueError(error_message)
        if as_float("gaussian_sigma", self.gaussian_sigma) <= 0:
            error_message = "gaussian_sigma must be positive"
            raise ValueError(error_message)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings and the single step-decay schedule."""

    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-5
    decay_factor: float = 0.1
    decay_at_iteration: int = 185_700
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        """Validate rates, betas and the decay point."""
        if self.kind != "adam":
            error_message = f"only adam is supported, got {self.kind!r}"
            raise ValueError(error_message)
        for name in ("lr_generator", "lr_discriminator", "epsilon"):
            if as_float(name, getattr(self, name)) <= 0:
                error_message = f"{name} must be positive"
                raise ValueError(error_message)
        for name in ("beta1", "beta2"):
            if not 0 < as_float(name, getattr(self, name)) < 1:
                error_message = f"{name} must be within (0, 1)"
                raise ValueError(error_message)
        if as_float("decay_factor", self.decay_factor) <= 0:
            error_message = "decay_factor must be positive"
            raise ValueError(error_message)
        if self.decay_at_iteration < 1:
            error_message = "decay_at_iteration must be >= 1"
            raise ValueError(error_message)


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides the model and the data.

    Parameters
    ----------
    total_iterations:
        T, the number of train steps.
    batch_size:
        m, triplets per step.
    weights, optimizer, ablation:
        See the respective dataclasses.
    sharpness:
        Q_S settings; ``None`` derives them from the model resolution.
    checkpoint_interval:
        Write ``ckpt_<t>.scgn`` every this many steps; 0 writes only the
        final one.
    log_interval:
        Iterations between INFO loss lines.
    seed:
        Seeds parameter init and mini-batch sampling.
    clip_grad_norm:
        Optional global-norm clip per update, off by default.

    """

    total_iterations: int = 371_400
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ablation: Ablation = field(default_factory=Ablation)
    sharpness: SharpnessConfig | None = None
    checkpoint_interval: int = 10_000
    log_interval: int = 100
    seed: int = 0
    clip_grad_norm: float | None = None

    def __post_init__(self) -> None:
        """Validate the loop bounds."""
        if self.total_iterations < 1:
            error_message = (
                f"total_iterations must be >= 1, got {self.total_iterations}"
            )
            raise ValueError(error_message)
        if self.batch_size < 1:
            error_message = f"batch_size must be >= 1, got {self.batch_size}"
            raise ValueError(error_message)
        if self.checkpoint_interval < 0 or self.log_interval < 1:
            error_message = (
                "checkpoint_interval must be >= 0 and log_interval >= 1"
            )
            raise ValueError(error_message)
        if (
            self.clip_grad_norm is not None
            and as_float("clip_grad_norm", self.clip_grad_norm) <= 0
        ):
            error_message = "clip_grad_norm must be positive"
            raise ValueError(error_message)


@dataclass
class LossReport:
    """Loss values of one iteration.

    ``l_g_total`` is ``l_p + l1 * l_vc + l2 * l_adv + l3 * l_sharp`` with
    ablated terms exactly 0. ``per_image`` holds the same components per
    batch element, keyed like the fields.
    """

    l_p: float = 0.0
    l_sharp: float = 0.0
    l_adv: float = 0.0
    l_vc: float = 0.0
    l_g_total: float = 0.0
    l_disc: float = 0.0
    iteration: int = 0
    per_image: dict[str, list[float]] = field(default_factory=dict)

    def to_row(self) -> tuple[float, ...]:
        """The values in ``LOSS_COLUMNS`` order."""
        return tuple(getattr(self, name) for name in LOSS_COLUMNS)
