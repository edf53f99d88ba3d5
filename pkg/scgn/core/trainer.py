"""Alternating training of the discriminator, the synthesis network and
the decomposition network.

One iteration synthesizes the middle view, then updates, in order:

1. the discriminator on ``L_disc`` with the synthesized view held constant;
2. the synthesis network on ``L_G``; ``L_vc`` and ``L_adv`` reach it
   through the (frozen) decomposition network and discriminator;
3. the decomposition network on the unweighted ``L_vc`` with the
   synthesized view held constant.

Each update computes gradients for its own partition only
(``torch.autograd.grad``) and takes one Adam step, so the other two
partitions and their moments are never touched.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from scgn.core.checkpoint import CheckpointError, save_checkpoint
from scgn.core.data import LossReport, Partition, VdnInput
from scgn.core.losses import (
    adv_loss,
    block_variances,
    disc_loss,
    generator_total,
    pixel_loss,
    sharpness_Q,
    sharpness_config_for,
    sharpness_loss,
    view_consistency_loss,
    weighted_generator_loss,
)
from scgn.core.models import decompose, discriminate, synthesize
from scgn.pipeline.dataset import stack_triplets
from scgn.reports import write_loss_csv

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from scgn.core.checkpoint import Checkpoint
    from scgn.core.data import OptimizerConfig, SharpnessConfig, TrainConfig
    from scgn.core.models import ModelBundle
    from scgn.pipeline.dataset import TripletBatch, ViewTriplet

_logger = logging.getLogger("scgn.trainer")

GENERATOR, DISCRIMINATOR = "generator", "discriminator"

_RATE_OF = {
    Partition.theta_G: GENERATOR,
    Partition.theta_V: GENERATOR,
    Partition.theta_D: DISCRIMINATOR,
}

#: Floor of the gradient-check denominator.
GRADCHECK_FLOOR = 1e-3


class TrainingAborted(Exception):
    """Custom training error for a non-finite loss or gradient."""


def relative_error(analytic: float, numeric: float) -> float:
    """``|a - n| / max(|a|, |n|, 1e-3)``."""
    scale = max(abs(analytic), abs(numeric), GRADCHECK_FLOOR)
    if not math.isfinite(scale):
        return math.inf
    return abs(analytic - numeric) / scale


def learning_rate(t: int, cfg: OptimizerConfig, which: str) -> float:
    """Step-decayed rate of iteration ``t`` (1-based).

    ``which`` is ``"generator"`` (also used by the decomposition network)
    or ``"discriminator"``.
    """
    match which:
        case "generator":
            base = cfg.lr_generator
        case "discriminator":
            base = cfg.lr_discriminator
        case _:
            error_message = f"unknown rate {which!r}"
            raise ValueError(error_message)
    if t >= cfg.decay_at_iteration:
        return base * cfg.decay_factor
    return base


@dataclass
class TrainState:
    """Mutable state of a run besides the parameters.

    Parameters
    ----------
    iteration:
        Number of completed train steps.
    optimizers:
        One Adam per partition, built over that partition's tensors in
        ParameterSet name order.
    rng:
        Mini-batch sampler.
    seed:
        Seed of the run; synthetic scenes and sequence offsets are
        drawn from it, so a resumed run rebuilds the same dataset.
    history:
        LossReport of every completed step.

    """

    iteration: int
    optimizers: dict[Partition, torch.optim.Adam]
    rng: np.random.Generator
    seed: int = 0
    history: list[LossReport] = field(default_factory=list)

    @classmethod
    def create(cls, bundle: ModelBundle, cfg: TrainConfig) -> TrainState:
        """Fresh state: iteration 0, empty moments, seeded sampler."""
        optimizers = {}
        for which in Partition:
            params = bundle.params.tensors(which)
            if not params:
                continue
            optimizers[which] = torch.optim.Adam(
                params,
                lr=learning_rate(1, cfg.optimizer, _RATE_OF[which]),
                betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
                eps=cfg.optimizer.epsilon,
            )
        return cls(
            iteration=0,
            optimizers=optimizers,
            rng=np.random.default_rng(cfg.seed),
            seed=cfg.seed,
        )

    @classmethod
    def restore(cls, checkpoint: Checkpoint, cfg: TrainConfig) -> TrainState:
        """State of a loaded checkpoint, bound to its bundle's tensors.

        Raises
        ------
        CheckpointError
            If the archive has no trainer state or its optimizer states
            do not fit the bundle partitions.

        """
        state = cls.create(checkpoint.bundle, cfg)
        if checkpoint.rng_state is None:
            error_message = f"{checkpoint.path} holds no trainer state"
            raise CheckpointError(error_message)
        if set(checkpoint.optimizer_states) != {
            str(which) for which in state.optimizers
        }:
            error_message = (
                f"{checkpoint.path}: optimizer partitions "
                f"{sorted(checkpoint.optimizer_states)} do not match the "
                "bundle"
            )
            raise CheckpointError(error_message)
        try:
            for which, optimizer in state.optimizers.items():
                optimizer.load_state_dict(
                    checkpoint.optimizer_states[str(which)]
                )
            state.set_rng_state(checkpoint.rng_state)
        except (KeyError, TypeError, ValueError) as err:
            error_message = f"{checkpoint.path}: unusable trainer state"
            raise CheckpointError(error_message) from err
        state.iteration = checkpoint.iteration
        state.seed = checkpoint.seed
        state.history = list(checkpoint.history)
        _logger.info("Resuming at iteration %d", state.iteration)
        return state

    def rng_state(self) -> str:
        """Sampler state as a JSON string."""
        return json.dumps(self.rng.bit_generator.state)

    def set_rng_state(self, text: str) -> None:
        self.rng.bit_generator.state = json.loads(text)

    def moments(
        self,
        which: Partition,
    ) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Adam first and second moments of a partition, in name order.

        Tensors without a step yet are reported as empty.
        """
        optimizer = self.optimizers[which]
        out = []
        for param in optimizer.param_groups[0]["params"]:
            state = optimizer.state.get(param, {})
            out.append(
                (
                    state.get("exp_avg", torch.empty(0)),
                    state.get("exp_avg_sq", torch.empty(0)),
                ),
            )
        return out


def _check_partitions(bundle: ModelBundle, state: TrainState) -> None:
    for which, optimizer in state.optimizers.items():
        expected = bundle.params.tensors(which)
        actual = optimizer.param_groups[0]["params"]
        if len(expected) != len(actual) or any(
            a is not b for a, b in zip(expected, actual, strict=True)
        ):
            error_message = (
                f"{which}: optimizer and bundle partitions disagree"
            )
            raise ValueError(error_message)


def _check_finite(name: str, value: torch.Tensor, iteration: int) -> None:
    if not bool(torch.isfinite(value).all()):
        error_message = f"iteration {iteration}: {name} is not finite"
        raise TrainingAborted(error_message)


def _partition_grads(
    loss: torch.Tensor,
    params: list[torch.nn.Parameter],
) -> list[torch.Tensor]:
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [
        torch.zeros_like(p) if g is None else g
        for p, g in zip(params, grads, strict=True)
    ]


def apply_gradients(
    optimizer: torch.optim.Adam,
    grads: list[torch.Tensor],
    lr: float,
    clip_grad_norm: float | None = None,
) -> None:
    """One Adam step of ``optimizer``'s tensors along ``grads``.

    Raises
    ------
    TrainingAborted
        If a gradient is not finite.

    """
    params = optimizer.param_groups[0]["params"]
    if not all(bool(torch.isfinite(g).all()) for g in grads):
        error_message = "gradient is not finite"
        raise TrainingAborted(error_message)
    for param, grad in zip(params, grads, strict=True):
        param.grad = grad.detach()
    if clip_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(params, clip_grad_norm)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    for param in params:
        param.grad = None


def _sharpness(bundle: ModelBundle, cfg: TrainConfig) -> SharpnessConfig:
    if cfg.sharpness is not None:
        return cfg.sharpness
    return sharpness_config_for(bundle.resolution)


def _vdn_input(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
) -> torch.Tensor:
    if bundle.config.vdn_input is VdnInput.ground_truth:
        return batch.middle
    return synth


def discriminator_objective(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
) -> torch.Tensor:
    """Per-image ``L_disc`` on the real middle and a constant synth."""
    d_real = discriminate(bundle, batch.middle)
    d_fake = discriminate(bundle, synth.detach())
    return disc_loss(d_real, d_fake, reduce=False)


def generator_objective(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
    cfg: TrainConfig,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """``L_G`` and its per-image components.

    ``synth`` must still carry its graph back to the synthesis network.
    """
    ablation = bundle.ablation
    parts = {"l_p": pixel_loss(synth, batch.middle, reduce=False)}
    if ablation.use_sharp:
        parts["l_sharp"] = sharpness_loss(
            synth, batch.middle, _sharpness(bundle, cfg), reduce=False
        )
    if ablation.use_vdn:
        dec_left, dec_right = decompose(
            bundle, _vdn_input(bundle, batch, synth)
        )
        parts["l_vc"] = view_consistency_loss(
            dec_left, dec_right, batch.left, batch.right, reduce=False
        )
    if ablation.use_adv:
        parts["l_adv"] = adv_loss(discriminate(bundle, synth), reduce=False)
    total = weighted_generator_loss(
        parts["l_p"].mean(),
        cfg.weights,
        ablation,
        **{k: v.mean() for k, v in parts.items() if k != "l_p"},
    )
    return total, parts


def decomposition_objective(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
) -> torch.Tensor:
    """Per-image ``L_vc`` with the synthesized view held constant."""
    middle = _vdn_input(bundle, batch, synth.detach())
    dec_left, dec_right = decompose(bundle, middle)
    return view_consistency_loss(
        dec_left, dec_right, batch.left, batch.right, reduce=False
    )


def discriminator_update(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
    state: TrainState,
    cfg: TrainConfig,
) -> torch.Tensor:
    """Adam step on the discriminator; returns the per-image ``L_disc``."""
    per_image = discriminator_objective(bundle, batch, synth)
    loss = per_image.mean()
    _check_finite("l_disc", loss, state.iteration)
    optimizer = state.optimizers[Partition.theta_D]
    apply_gradients(
        optimizer,
        _partition_grads(loss, bundle.params.tensors(Partition.theta_D)),
        learning_rate(state.iteration, cfg.optimizer, DISCRIMINATOR),
        cfg.clip_grad_norm,
    )
    return per_image.detach()


def generator_update(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
    state: TrainState,
    cfg: TrainConfig,
) -> dict[str, torch.Tensor]:
    """Adam step on the synthesis network; returns the components."""
    total, parts = generator_objective(bundle, batch, synth, cfg)
    _check_finite("l_g_total", total, state.iteration)
    optimizer = state.optimizers[Partition.theta_G]
    apply_gradients(
        optimizer,
        _partition_grads(total, bundle.params.tensors(Partition.theta_G)),
        learning_rate(state.iteration, cfg.optimizer, GENERATOR),
        cfg.clip_grad_norm,
    )
    return {k: v.detach() for k, v in parts.items()}


def decomposition_update(
    bundle: ModelBundle,
    batch: TripletBatch,
    synth: torch.Tensor,
    state: TrainState,
    cfg: TrainConfig,
) -> torch.Tensor:
    """Adam step on the decomposition network on the unweighted ``L_vc``."""
    per_image = decomposition_objective(bundle, batch, synth)
    loss = per_image.mean()
    _check_finite("l_vc", loss, state.iteration)
    optimizer = state.optimizers[Partition.theta_V]
    apply_gradients(
        optimizer,
        _partition_grads(loss, bundle.params.tensors(Partition.theta_V)),
        learning_rate(state.iteration, cfg.optimizer, GENERATOR),
        cfg.clip_grad_norm,
    )
    return per_image.detach()


def train_step(
    bundle: ModelBundle,
    batch: TripletBatch,
    state: TrainState,
    cfg: TrainConfig,
) -> tuple[TrainState, LossReport]:
    """One iteration: discriminator, then synthesis, then decomposition.

    Raises
    ------
    ValueError
        If the batch size or the partitions disagree with the config
        and the bundle.
    TrainingAborted
        On a non-finite loss or gradient.

    """
    if len(batch) != cfg.batch_size:
        error_message = (
            f"batch of {len(batch)} triplets, expected {cfg.batch_size}"
        )
        raise ValueError(error_message)
    _check_partitions(bundle, state)
    state.iteration += 1
    ablation = bundle.ablation

    synth = synthesize(bundle, batch.left, batch.right)
    per_image: dict[str, torch.Tensor] = {}
    if ablation.use_adv:
        per_image["l_disc"] = discriminator_update(
            bundle, batch, synth.detach(), state, cfg
        )
    per_image.update(generator_update(bundle, batch, synth, state, cfg))
    if ablation.use_vdn:
        decomposition_update(bundle, batch, synth.detach(), state, cfg)

    report = generator_total(
        {k: float(v.mean()) for k, v in per_image.items()},
        cfg.weights,
        ablation,
    )
    report.iteration = state.iteration
    report.per_image = {k: v.tolist() for k, v in per_image.items()}
    state.history.append(report)
    _logger.debug(
        "it %d: L_G %.6f L_p %.6f L_disc %.6f",
        report.iteration,
        report.l_g_total,
        report.l_p,
        report.l_disc,
    )
    return state, report


def sample_batch(
    dataset: Sequence[ViewTriplet],
    state: TrainState,
    cfg: TrainConfig,
    dtype: torch.dtype = torch.float32,
) -> TripletBatch:
    """Uniform sample with replacement, driven by the state's sampler."""
    indices = state.rng.integers(0, len(dataset), size=cfg.batch_size)
    return stack_triplets([dataset[int(i)] for i in indices], dtype)


@dataclass
class FitResult:
    """Outcome of ``fit``."""

    bundle: ModelBundle
    state: TrainState
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def history(self) -> list[LossReport]:
        return self.state.history


def fit(
    bundle: ModelBundle,
    dataset: Sequence[ViewTriplet],
    cfg: TrainConfig,
    out_dir: Path | str | None = None,
    state: TrainState | None = None,
) -> FitResult:
    """Run train steps until ``cfg.total_iterations``.

    Parameters
    ----------
    bundle:
        Model trained in place.
    dataset:
        Triplets at the bundle resolution.
    cfg:
        Training configuration.
    out_dir:
        Where ``ckpt_<t>.scgn`` files and ``losses.csv`` go; nothing is
        written when ``None``.
    state:
        State to resume from, a fresh one by default.

    Raises
    ------
    ValueError
        On an empty dataset or a resolution mismatch.
    TrainingAborted
        Propagated from ``train_step``.
    CheckpointError
        If a checkpoint cannot be written.

    """
    if not dataset:
        error_message = "cannot train on an empty dataset"
        raise ValueError(error_message)
    if dataset[0].resolution != bundle.resolution:
        error_message = (
            f"triplets are {dataset[0].resolution} px, the bundle expects "
            f"{bundle.resolution} px"
        )
        raise ValueError(error_message)
    out_dir = None if out_dir is None else Path(out_dir)

    state = TrainState.create(bundle, cfg) if state is None else state
    result = FitResult(bundle, state)
    _logger.info(
        "Training from iteration %d to %d on %d triplets",
        state.iteration + 1,
        cfg.total_iterations,
        len(dataset),
    )

    def save() -> None:
        if out_dir is None:
            return
        result.checkpoints.append(save_checkpoint(out_dir, bundle, state))
        write_loss_csv(out_dir / "losses.csv", state.history)

    # The global flag is restored on exit.
    previous = torch.are_deterministic_algorithms_enabled()
    warn_only = torch.is_deterministic_algorithms_warn_only_enabled()
    torch.use_deterministic_algorithms(mode=True, warn_only=True)
    try:
        while state.iteration < cfg.total_iterations:
            batch = sample_batch(dataset, state, cfg, bundle.dtype)
            try:
                _, report = train_step(bundle, batch, state, cfg)
            except TrainingAborted:
                _logger.exception("Aborted at iteration %d", state.iteration)
                raise
            if state.iteration % cfg.log_interval == 0:
                _logger.info(
                    "it %d/%d: L_G %.5f (L_p %.5f, L_vc %.5f, L_adv %.5f, "
                    "L_sharp %.5f), L_disc %.5f",
                    state.iteration,
                    cfg.total_iterations,
                    report.l_g_total,
                    report.l_p,
                    report.l_vc,
                    report.l_adv,
                    report.l_sharp,
                    report.l_disc,
                )
            if (
                cfg.checkpoint_interval
                and state.iteration % cfg.checkpoint_interval == 0
                and state.iteration != cfg.total_iterations
            ):
                save()
        save()
    finally:
        torch.use_deterministic_algorithms(previous, warn_only=warn_only)
    return result


@dataclass
class CheckResult:
    """Finite-difference comparison over sampled scalars."""

    max_rel_error: float = 0.0
    checked: int = 0
    excluded: int = 0
    worst: str = ""


@dataclass
class GradientCheckReport:
    """Per-partition outcome of ``gradient_check``."""

    partitions: dict[Partition, CheckResult] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(
            (r.max_rel_error for r in self.partitions.values()),
            default=0.0,
        )

    @property
    def checked(self) -> int:
        return sum(r.checked for r in self.partitions.values())


def check_gradients(
    loss_fn: Callable[[], torch.Tensor],
    params: dict[str, torch.nn.Parameter],
    samples: int = 60,
    step: float = 1e-4,
    seed: int = 0,
    signature_fn: Callable[[], torch.Tensor] | None = None,
) -> CheckResult:
    """Compare autograd with central differences on random scalars.

    Parameters
    ----------
    loss_fn:
        Recomputes the scalar loss from the current parameter values.
    params:
        Named tensors to check.
    samples:
        Number of scalars drawn without replacement.
    step:
        Finite-difference step h.
    seed:
        Seed of the scalar draw.
    signature_fn:
        Signs of every piecewise term of the loss. A scalar whose +-h
        perturbation changes them straddles a kink and is excluded.

    Raises
    ------
    TrainingAborted
        If an analytic gradient is not finite.

    """
    names = list(params)
    tensors = [params[n] for n in names]
    grads = _partition_grads(loss_fn(), tensors)
    for name, grad in zip(names, grads, strict=True):
        if not bool(torch.isfinite(grad).all()):
            error_message = f"analytic gradient of {name} is not finite"
            raise TrainingAborted(error_message)

    sizes = np.array([t.numel() for t in tensors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(samples, total), replace=False)

    result = CheckResult()
    with torch.no_grad():
        reference = None if signature_fn is None else signature_fn()
        for flat in sorted(int(p) for p in picks):
            k = int(np.searchsorted(offsets, flat, side="right")) - 1
            index = flat - int(offsets[k])
            view = tensors[k].view(-1)
            original = view[index].item()

            view[index] = original + step
            plus = loss_fn().item()
            crossed = reference is not None and not torch.equal(
                signature_fn(), reference
            )
            view[index] = original - step
            minus = loss_fn().item()
            crossed = crossed or (
                reference is not None
                and not torch.equal(signature_fn(), reference)
            )
            view[index] = original

            if crossed:
                result.excluded += 1
                continue
            analytic = grads[k].view(-1)[index].item()
            numeric = (plus - minus) / (2 * step)
            error = relative_error(analytic, numeric)
            result.checked += 1
            if error >= result.max_rel_error:
                result.max_rel_error = error
                result.worst = f"{names[k]}[{index}]"
    return result


def kink_signature(
    bundle: ModelBundle,
    batch: TripletBatch,
    cfg: TrainConfig,
) -> torch.Tensor:
    """Signs of every absolute value and square root inside the losses."""
    synth = synthesize(bundle, batch.left, batch.right)
    signs = [torch.sign(synth - batch.middle).flatten()]
    sharp = _sharpness(bundle, cfg)
    if bundle.ablation.use_sharp:
        var_orig, var_blur = block_variances(synth, sharp)
        signs.append(torch.sign(var_orig - var_blur).flatten())
        q_gap = sharpness_Q(batch.middle, sharp) - sharpness_Q(synth, sharp)
        signs.append(torch.sign(q_gap).flatten())
    if bundle.vdn is not None:
        dec_left, dec_right = decompose(
            bundle, _vdn_input(bundle, batch, synth)
        )
        signs.append(torch.sign(dec_left - batch.left).flatten())
        signs.append(torch.sign(dec_right - batch.right).flatten())
    return torch.cat(signs)


#: Largest partition finite differences are run on.
GRADCHECK_MAX_PARAMS = 500


def gradient_check(
    bundle: ModelBundle,
    batch: TripletBatch,
    cfg: TrainConfig,
    samples: int = 60,
    step: float = 1e-4,
) -> GradientCheckReport:
    """Check the gradient of each update against finite differences.

    ``L_G`` is differentiated with respect to the synthesis network,
    ``L_vc`` with respect to the decomposition network and ``L_disc``
    with respect to the discriminator, on a float64 copy of ``bundle``.
    Ablated updates are skipped.

    Raises
    ------
    ValueError
        If a partition holds more than 500 parameters.
    TrainingAborted
        If an analytic gradient is not finite.

    """
    work = copy.deepcopy(bundle).to(torch.float64)
    batch = batch.to(torch.float64)
    for which in Partition:
        count = work.params.numel(which)
        if count > GRADCHECK_MAX_PARAMS:
            error_message = (
                f"{which} has {count} parameters, finite differences need "
                f"at most {GRADCHECK_MAX_PARAMS}"
            )
            raise ValueError(error_message)

    def synth() -> torch.Tensor:
        return synthesize(work, batch.left, batch.right)

    objectives: dict[Partition, Callable[[], torch.Tensor]] = {
        Partition.theta_G: lambda: generator_objective(
            work, batch, synth(), cfg
        )[0],
    }
    if work.vdn is not None:
        objectives[Partition.theta_V] = lambda: decomposition_objective(
            work, batch, synth()
        ).mean()
    if work.ablation.use_adv:
        objectives[Partition.theta_D] = lambda: discriminator_objective(
            work, batch, synth()
        ).mean()

    report = GradientCheckReport()
    for seed, (which, objective) in enumerate(objectives.items()):
        params = {n: work.params.entries[n] for n in work.params.names(which)}
        result = check_gradients(
            objective,
            params,
            samples=samples,
            step=step,
            seed=seed,
            signature_fn=lambda: kink_signature(work, batch, cfg),
        )
        report.partitions[which] = result
        _logger.info(
            "%s: max relative error %.3g over %d scalars (%d at a kink, "
            "worst %s)",
            which,
            result.max_rel_error,
            result.checked,
            result.excluded,
            result.worst,
        )
    return report
