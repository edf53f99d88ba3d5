"""Torch modules that execute a NetworkSpec."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import torch
from torch import nn

from scgn.core.data import Activation, LayerKind
from scgn.core.layers import NetworkSpec, ShapeError

if TYPE_CHECKING:
    from collections.abc import Callable

    from scgn.core.data import ModelConfig
    from scgn.core.layers import LayerSpec, ShapeTriple

_logger = logging.getLogger("scgn.network")


def make_activation(
    activation: Activation,
    cfg: ModelConfig,
) -> nn.Module:
    """Non-linearity for a layer.

    In smooth mode the piecewise-linear activations become SiLU so that
    finite differences see a differentiable function.
    """
    if cfg.smooth and activation in (Activation.relu, Activation.leaky_relu):
        return nn.SiLU()
    match activation:
        case Activation.leaky_relu:
            return nn.LeakyReLU(cfg.leaky_slope)
        case Activation.relu:
            return nn.ReLU()
        case Activation.tanh:
            return nn.Tanh()
        case Activation.sigmoid:
            return nn.Sigmoid()
        case _:
            return nn.Identity()


class ResidualBlock(nn.Module):
    """Two same-padded k x k convolutions around an identity skip.

    A leaky ReLU sits between the two convolutions; the block keeps the
    channel count and the spatial size.
    """

    def __init__(self, channels: int, kernel: int, cfg: ModelConfig) -> None:
        super().__init__()
        padding = (kernel - 1) // 2
        self.conv_a = nn.Conv2d(channels, channels, kernel, padding=padding)
        self.conv_b = nn.Conv2d(channels, channels, kernel, padding=padding)
        self.act = make_activation(Activation.leaky_relu, cfg)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv_b(self.act(self.conv_a(x)))


class FullyConnected(nn.Module):
    """Flatten a feature map and apply a linear layer."""

    def __init__(self, in_features: int, out_features: int) -> None:
        super().__init__()
        self.linear = nn.Linear(in_features, out_features)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(torch.flatten(x, start_dim=1))


def make_layer(
    spec: LayerSpec,
    in_shape: ShapeTriple,
    cfg: ModelConfig,
) -> nn.Module | None:
    """Torch module for a layer, ``None`` for a concat.

    Raises
    ------
    ValueError
        If the kind has no torch counterpart.

    """
    c_in = in_shape.channels
    match spec.kind:
        case (
            LayerKind.conv | LayerKind.dilated_conv | LayerKind.projection_1x1
        ):
            return nn.Conv2d(
                c_in,
                spec.out_channels or c_in,
                spec.kernel,
                stride=spec.stride,
                padding=spec.dilation * (spec.kernel - 1) // 2,
                dilation=spec.dilation,
            )
        case LayerKind.deconv:
            return nn.ConvTranspose2d(
                c_in,
                spec.out_channels,
                spec.kernel,
                stride=spec.stride,
                padding=(spec.kernel - 1) // 2,
                output_padding=spec.stride - 1,
            )
        case LayerKind.residual_block:
            return ResidualBlock(c_in, spec.kernel, cfg)
        case LayerKind.fully_connected:
            n_in = in_shape.height * in_shape.width * c_in
            return FullyConnected(n_in, spec.out_channels)
        case LayerKind.maxpool if cfg.smooth:
            return nn.AvgPool2d(
                spec.kernel,
                spec.stride,
                padding=spec.kernel // 2,
                count_include_pad=False,
            )
        case LayerKind.maxpool:
            return nn.MaxPool2d(spec.kernel, spec.stride, spec.kernel // 2)
        case LayerKind.upsample:
            return nn.Upsample(
                scale_factor=spec.scale,
                mode=cfg.upsample_mode,
            )
        case LayerKind.concat:
            return None
    error_message = f"{spec.name}: no module for layer kind {spec.kind}"
    raise ValueError(error_message)


class SpecNetwork(nn.Module):
    """Evaluate a NetworkSpec on NCHW tensors.

    Trainable layers live in ``owners`` under their own name; a layer with
    ``shares`` calls its owner's module, so both branches read the same
    parameters. Inputs are passed positionally in ``spec.inputs`` order.
    """

    def __init__(self, spec: NetworkSpec, cfg: ModelConfig) -> None:
        super().__init__()
        self.spec = spec
        self.shapes = spec.infer_shapes()
        self.owners = nn.ModuleDict()
        self.fixed = nn.ModuleDict()
        self.activations = nn.ModuleDict()
        for layer in spec.layers:
            if layer.shares is None:
                in_shape = self.shapes[layer.inputs[0]]
                module = make_layer(layer, in_shape, cfg)
                if module is not None and layer.trainable:
                    self.owners[layer.name] = module
                elif module is not None:
                    self.fixed[layer.name] = module
            self.activations[layer.name] = make_activation(
                layer.activation, cfg
            )
        _logger.debug(
            "Built %s with %d owning layers",
            spec.name,
            len(self.owners),
        )

    def _module(self, layer: LayerSpec) -> Callable[..., torch.Tensor]:
        if layer.shares is not None:
            return self.owners[layer.shares]
        if layer.name in self.owners:
            return self.owners[layer.name]
        return self.fixed[layer.name]

    def check_input(self, name: str, x: torch.Tensor) -> None:
        """Reject a tensor whose CHW size is not the declared one.

        Raises
        ------
        ShapeError
            Naming the expected size.

        """
        h, w, c = self.spec.inputs[name].as_tuple()
        if x.dim() != 4 or tuple(x.shape[1:]) != (c, h, w):  # noqa: PLR2004
            error_message = (
                f"{self.spec.name} input {name} must be N x {c} x {h} x {w}, "
                f"got {tuple(x.shape)}"
            )
            raise ShapeError(error_message)

    def forward(
        self,
        *inputs: torch.Tensor,
    ) -> torch.Tensor | tuple[torch.Tensor, ...]:
        """Run every layer once; one tensor per declared output."""
        if len(inputs) != len(self.spec.inputs):
            error_message = (
                f"{self.spec.name} takes {len(self.spec.inputs)} input(s), "
                f"got {len(inputs)}"
            )
            raise ShapeError(error_message)
        values: dict[str, torch.Tensor] = {}
        for name, x in zip(self.spec.inputs, inputs, strict=True):
            self.check_input(name, x)
            values[name] = x
        for layer in self.spec.layers:
            sources = [values[source] for source in layer.inputs]
            if layer.kind is LayerKind.concat:
                out = torch.cat(sources, dim=1)
            else:
                out = self._module(layer)(sources[0])
            values[layer.name] = self.activations[layer.name](out)
        outputs = tuple(values[name] for name in self.spec.outputs)
        return outputs[0] if len(outputs) == 1 else outputs


@torch.no_grad()
def init_parameters(module: nn.Module, std: float) -> None:
    """Truncated-normal weights (cut at two deviations), zero biases."""
    for name, param in module.named_parameters():
        if name.endswith("bias"):
            param.zero_()
        else:
            nn.init.trunc_normal_(param, std=std, a=-2 * std, b=2 * std)
