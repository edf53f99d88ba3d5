"""The synthesis, decomposition and discriminator networks as one bundle.

``build_canonical`` reads the packaged spec documents, rescales them for
the requested resolution and width, and instantiates the three networks.
``synthesize``, ``decompose`` and ``discriminate`` are the forward
mappings the trainer and the metrics call.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import torch

from scgn.arch_info import SPEC_DIR, SPEC_FILES
from scgn.core.data import (
    Ablation,
    ModelConfig,
    Partition,
)
from scgn.core.layers import (
    NetworkSpec,
    ShapeError,
    load_spec,
    scale_spec,
    without_resampling,
)
from scgn.core.network import SpecNetwork, init_parameters

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

_logger = logging.getLogger("scgn.models")

#: Slack on the (-1, 1) input check, for float round-off.
RANGE_TOLERANCE = 1e-6

#: Bundle small enough for finite differences: under 500 parameters in
#: each partition, smooth activations, 16 px images.
GRADCHECK_CONFIG = ModelConfig(
    resolution=16,
    width=1 / 32,
    max_kernel=1,
    init_std=0.3,
    smooth=True,
)

_NETWORK_PARTITION = {
    "vsn": Partition.theta_G,
    "vdn": Partition.theta_V,
    "disc": Partition.theta_D,
}


@dataclass
class ParameterSet:
    """Named, partitioned view over the trainable tensors of a bundle.

    Names are hierarchical, ``network/layer/weight`` or, inside residual
    blocks, ``network/layer/conv_a/weight``. The tensors are the live
    ``torch.nn.Parameter`` objects of the modules.
    """

    entries: dict[str, torch.nn.Parameter] = field(default_factory=dict)
    partition: dict[str, Partition] = field(default_factory=dict)

    @classmethod
    def from_networks(
        cls,
        networks: dict[str, SpecNetwork | None],
    ) -> ParameterSet:
        """Collect the owned parameters of each network."""
        params = cls()
        for net_name, network in networks.items():
            if network is None:
                continue
            for name, param in network.owners.named_parameters():
                key = f"{net_name}/{name.replace('.', '/')}"
                params.entries[key] = param
                params.partition[key] = _NETWORK_PARTITION[net_name]
        return params

    def __len__(self) -> int:
        return len(self.entries)

    def names(self, which: Partition | None = None) -> list[str]:
        """Entry names, optionally restricted to one partition."""
        return [
            name
            for name in self.entries
            if which is None or self.partition[name] is which
        ]

    def tensors(self, which: Partition) -> list[torch.nn.Parameter]:
        """The parameters of one partition, in name order."""
        return [self.entries[name] for name in self.names(which)]

    def numel(self, which: Partition | None = None) -> int:
        """Number of trainable scalars."""
        return sum(self.entries[n].numel() for n in self.names(which))

    def snapshot(self) -> dict[str, torch.Tensor]:
        """Detached copies of every entry."""
        return {k: v.detach().clone() for k, v in self.entries.items()}

    def load(self, values: dict[str, torch.Tensor]) -> None:
        """Copy ``values`` into the live parameters.

        Raises
        ------
        KeyError
            If the names differ from this set's names.
        ShapeError
            If a tensor shape differs.

        """
        if set(values) != set(self.entries):
            missing = sorted(set(self.entries) ^ set(values))
            error_message = f"parameter names differ: {missing[:5]}"
            raise KeyError(error_message)
        with torch.no_grad():
            for name, param in self.entries.items():
                value = values[name]
                if value.shape != param.shape:
                    error_message = (
                        f"{name}: expected {tuple(param.shape)}, "
                        f"got {tuple(value.shape)}"
                    )
                    raise ShapeError(error_message)
                param.copy_(value)


@dataclass
class ModelBundle:
    """The three networks, their specs and their parameters.

    ``vdn`` is ``None`` when the ablation prunes the decomposition network.
    The discriminator is always built so a checkpoint can be evaluated
    with or without the adversarial term.
    """

    vsn: SpecNetwork
    vdn: SpecNetwork | None
    disc: SpecNetwork
    config: ModelConfig
    ablation: Ablation
    params: ParameterSet = field(init=False)

    def __post_init__(self) -> None:
        self.params = ParameterSet.from_networks(self.networks())

    @property
    def resolution(self) -> int:
        """Side length of every image the bundle reads or writes."""
        return self.config.resolution

    @property
    def vsn_spec(self) -> NetworkSpec:
        return self.vsn.spec

    @property
    def vdn_spec(self) -> NetworkSpec | None:
        return None if self.vdn is None else self.vdn.spec

    @property
    def disc_spec(self) -> NetworkSpec:
        return self.disc.spec

    def networks(self) -> dict[str, SpecNetwork | None]:
        """``{"vsn": ..., "vdn": ..., "disc": ...}``."""
        return {"vsn": self.vsn, "vdn": self.vdn, "disc": self.disc}

    def specs(self) -> dict[str, NetworkSpec]:
        """Specs of the networks that exist."""
        return {
            k: v.spec for k, v in self.networks().items() if v is not None
        }

    def modules(self) -> list[SpecNetwork]:
        return [net for net in self.networks().values() if net is not None]

    def to(self, dtype: torch.dtype) -> ModelBundle:
        """Cast every network in place and rebuild the parameter view."""
        for module in self.modules():
            module.to(dtype)
        self.params = ParameterSet.from_networks(self.networks())
        return self

    @property
    def dtype(self) -> torch.dtype:
        return next(self.vsn.parameters()).dtype

    @contextlib.contextmanager
    def eval_mode(self) -> Iterator[ModelBundle]:
        """Forward passes without autograd bookkeeping."""
        with torch.no_grad():
            yield self


def _load_specs(
    ablation: Ablation,
    spec_dir: Path | None,
) -> dict[str, NetworkSpec | None]:
    directory = SPEC_DIR if spec_dir is None else spec_dir
    vsn = load_spec(directory / SPEC_FILES["vsn"])
    if ablation.mvsn:
        vsn = without_resampling(vsn)
    vdn = None
    if ablation.use_vdn:
        key = "vdn_shared" if ablation.shared_vdn_decoder else "vdn"
        vdn = load_spec(directory / SPEC_FILES[key])
    disc = load_spec(directory / SPEC_FILES["disc"])
    return {"vsn": vsn, "vdn": vdn, "disc": disc}


def build_from_specs(
    specs: dict[str, NetworkSpec | None],
    config: ModelConfig,
    ablation: Ablation,
    seed: int | None = 0,
) -> ModelBundle:
    """Instantiate already-scaled specs.

    Parameters
    ----------
    specs:
        ``{"vsn", "vdn", "disc"}`` specs at ``config.resolution``; a
        missing or ``None`` vdn prunes it.
    config:
        Model configuration.
    ablation:
        Ablation flags recorded on the bundle.
    seed:
        Seed of the weight initialization; ``None`` skips initialization
        (the caller loads parameters).

    """
    networks: dict[str, SpecNetwork | None] = {}
    for name in ("vsn", "vdn", "disc"):
        spec = specs.get(name)
        networks[name] = None if spec is None else SpecNetwork(spec, config)
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for network in networks.values():
                if network is not None:
                    init_parameters(network, config.init_std)
    return ModelBundle(
        vsn=networks["vsn"],
        vdn=networks["vdn"],
        disc=networks["disc"],
        config=config,
        ablation=ablation,
    )


def build_bundle(
    config: ModelConfig,
    ablation: Ablation | None = None,
    seed: int = 0,
    spec_dir: Path | None = None,
) -> ModelBundle:
    """Build the three networks from the spec documents.

    Parameters
    ----------
    config:
        Resolution, width, kernel cap and activation settings.
    ablation:
        Variant to build, the full model by default.
    seed:
        Seed of the weight initialization.
    spec_dir:
        Directory of spec documents, the packaged ones by default.

    Raises
    ------
    ShapeError
        If a spec cannot be evaluated at ``config.resolution``.

    """
    ablation = Ablation() if ablation is None else ablation
    specs = {
        name: scale_spec(
            spec, config.resolution, config.width, config.max_kernel
        )
        if spec is not None
        else None
        for name, spec in _load_specs(ablation, spec_dir).items()
    }
    bundle = build_from_specs(specs, config, ablation, seed)
    _logger.info(
        "Built bundle at %d px (width %s, ablation %s): %d parameters",
        config.resolution,
        config.width,
        ",".join(ablation.names()) or "none",
        bundle.params.numel(),
    )
    return bundle


def build_canonical(
    resolution: int = 224,
    ablation: Ablation | None = None,
    seed: int = 0,
) -> ModelBundle:
    """Full-width bundle at ``resolution``.

    Raises
    ------
    ValueError
        If ``resolution`` is not a positive multiple of 16.

    """
    return build_bundle(ModelConfig(resolution=resolution), ablation, seed)


def _as_batch(image: torch.Tensor) -> torch.Tensor:
    return image.unsqueeze(0) if image.dim() == 3 else image  # noqa: PLR2004


def _check_range(name: str, image: torch.Tensor) -> None:
    limit = image.detach().abs().max().item()
    if limit > 1 + RANGE_TOLERANCE:
        error_message = (
            f"{name} must be normalized to (-1, 1), found |x| = {limit:.4g}"
        )
        raise ValueError(error_message)


def synthesize(
    bundle: ModelBundle,
    left: torch.Tensor,
    right: torch.Tensor,
) -> torch.Tensor:
    """Middle view from the two side views.

    The weight-shared encoder runs on each view; its ordered features feed
    the decoder, whose tanh keeps the output within (-1, 1).

    Parameters
    ----------
    left, right:
        ``N x 3 x H x W`` (or ``3 x H x W``) tensors in (-1, 1) at the
        bundle resolution.

    Raises
    ------
    ShapeError
        On a wrong image size.
    ValueError
        On unnormalized input.

    """
    left, right = _as_batch(left), _as_batch(right)
    _check_range("left", left)
    _check_range("right", right)
    return bundle.vsn(left, right)


def decompose(
    bundle: ModelBundle,
    middle: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Left and right views recovered from a middle view.

    Raises
    ------
    ValueError
        If the bundle was built without a decomposition network, or on
        unnormalized input.
    ShapeError
        On a wrong image size.

    """
    if bundle.vdn is None:
        error_message = "decompose needs a bundle built with use_vdn"
        raise ValueError(error_message)
    middle = _as_batch(middle)
    _check_range("middle", middle)
    dec_left, dec_right = bundle.vdn(middle)
    return dec_left, dec_right


def discriminate(bundle: ModelBundle, middle: torch.Tensor) -> torch.Tensor:
    """Probability that each middle view is a real one, shape ``(N,)``."""
    middle = _as_batch(middle)
    _check_range("middle", middle)
    return bundle.disc(middle).reshape(-1)
