"""Declarative layer specifications and their shape/parameter calculus.

Every network in the toolkit is a ``NetworkSpec``: an ordered list of
``LayerSpec`` entries read from a JSON document. Shapes and parameter
counts are derived from the spec alone, so an architecture can be checked
against the structure tables before a single tensor is allocated.

Padding rule: convolutions (dilated or not) are zero padded so a stride-1
layer keeps its spatial size and a stride-s layer produces ``ceil(n/s)``;
max pooling follows the same ``ceil`` rule; a stride-s deconvolution and
a scale-s upsample multiply the size by s.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from scgn.core.data import Activation, LayerKind

_logger = logging.getLogger("scgn.layers")

#: Layers whose output channel count must be declared.
_NEEDS_OUT_CHANNELS = frozenset(
    {
        LayerKind.conv,
        LayerKind.dilated_conv,
        LayerKind.deconv,
        LayerKind.fully_connected,
    },
)

#: Layers that carry a kernel.
_NEEDS_KERNEL = frozenset(
    {
        LayerKind.conv,
        LayerKind.dilated_conv,
        LayerKind.deconv,
        LayerKind.maxpool,
        LayerKind.residual_block,
        LayerKind.projection_1x1,
    },
)

#: Layers with a k x k x in x out weight and an out bias.
CONV_FAMILY = frozenset(
    {
        LayerKind.conv,
        LayerKind.dilated_conv,
        LayerKind.deconv,
        LayerKind.projection_1x1,
    },
)

#: Layers with trainable parameters.
TRAINABLE = CONV_FAMILY | {LayerKind.residual_block, LayerKind.fully_connected}

#: Dilation a ``dilated_conv`` needs to differ from a plain conv.
MIN_DILATION = 2


class ShapeError(ValueError):
    """A layer cannot produce a valid shape from its inputs."""


@dataclass(frozen=True)
class ShapeTriple:
    """Height, width and channel count of a feature map."""

    height: int
    width: int
    channels: int

    def __post_init__(self) -> None:
        """All three must be strictly positive."""
        if min(self.height, self.width, self.channels) <= 0:
            error_message = f"non-positive dimension in {self.as_tuple()}"
            raise ShapeError(error_message)

    def __str__(self) -> str:
        """Print as the tables do, ``HxWxC``."""
        return f"{self.height}x{self.width}x{self.channels}"

    def as_tuple(self) -> tuple[int, int, int]:
        """``(height, width, channels)``."""
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class LayerSpec:
    """One row of a structure table.

    Parameters
    ----------
    name:
        Unique identifier inside its network.
    kind:
        LayerKind.
    kernel:
        Kernel size k, absent for upsample, concat and fully_connected.
    stride:
        Stride s.
    dilation:
        Dilation rate r, ``>= 2`` for dilated_conv and 1 otherwise.
    out_channels:
        Output channels. A projection without one keeps its input width.
    activation:
        Non-linearity applied to the output.
    inputs:
        Upstream layer or network-input names. Empty means the previous
        layer, as in the tables.
    scale:
        Spatial factor of an upsample layer.
    shares:
        Name of an earlier layer whose parameters this one reuses.
    fixed_width:
        Exempt from width scaling (image outputs, the scalar head).

    """

    name: str
    kind: LayerKind
    kernel: int | None = None
    stride: int = 1
    dilation: int = 1
    out_channels: int | None = None
    activation: Activation = Activation.none
    inputs: tuple[str, ...] = ()
    scale: int = 2
    shares: str | None = None
    fixed_width: bool = False

    def __post_init__(self) -> None:
        """Check the fields that make sense for ``kind``.

        Raises
        ------
        ValueError
            On a field combination no table row can have.

        """
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "inputs", tuple(self.inputs))

        if self.kind in _NEEDS_KERNEL and (
            self.kernel is None or self.kernel < 1
        ):
            error_message = f"{self.name}: {self.kind} needs a kernel >= 1"
            raise ValueError(error_message)
        if self.kind not in _NEEDS_KERNEL and self.kernel is not None:
            error_message = f"{self.name}: {self.kind} takes no kernel"
            raise ValueError(error_message)
        if self.kind is LayerKind.projection_1x1 and self.kernel != 1:
            error_message = f"{self.name}: a projection has kernel 1"
            raise ValueError(error_message)
        if self.stride < 1 or self.scale < 1:
            error_message = f"{self.name}: stride and scale must be >= 1"
            raise ValueError(error_message)
        if self.kind is LayerKind.dilated_conv:
            if self.dilation < MIN_DILATION:
                error_message = (
                    f"{self.name}: dilated_conv needs dilation >= "
                    f"{MIN_DILATION}, got {self.dilation}"
                )
                raise ValueError(error_message)
        elif self.dilation != 1:
            error_message = f"{self.name}: only dilated_conv has a dilation"
            raise ValueError(error_message)
        if self.kind in _NEEDS_OUT_CHANNELS and (
            self.out_channels is None or self.out_channels < 1
        ):
            error_message = f"{self.name}: {self.kind} needs out_channels"
            raise ValueError(error_message)
        if self.kind is LayerKind.residual_block and self.stride != 1:
            error_message = f"{self.name}: residual blocks are stride 1"
            raise ValueError(error_message)

    @property
    def trainable(self) -> bool:
        """Whether the layer owns weights (a sharing layer does not)."""
        return self.kind in TRAINABLE and self.shares is None

    def to_dict(self) -> dict[str, Any]:
        """Serialize, leaving out fields at their default."""
        raw: dict[str, Any] = {"name": self.name, "kind": str(self.kind)}
        defaults = LayerSpec("_", LayerKind.concat)
        for key in (
            "kernel",
            "stride",
            "dilation",
            "out_channels",
            "activation",
            "scale",
            "shares",
            "fixed_width",
        ):
            value = getattr(self, key)
            if value != getattr(defaults, key):
                raw[key] = str(value) if key == "activation" else value
        if self.inputs:
            raw["inputs"] = list(self.inputs)
        return raw

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> LayerSpec:
        """Build from the output of ``to_dict``."""
        raw = dict(raw)
        raw["inputs"] = tuple(raw.get("inputs", ()))
        return cls(**raw)


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered, acyclic composition of layers.

    Parameters
    ----------
    name:
        Network identifier, also the prefix of its parameter names.
    inputs:
        ``{name: ShapeTriple}`` of the network inputs, in order.
    layers:
        Layers in evaluation order. A layer may only read earlier layers
        or network inputs, which is what keeps the graph acyclic.
    outputs:
        Names of the layers the network returns.

    """

    name: str
    inputs: dict[str, ShapeTriple]
    layers: tuple[LayerSpec, ...]
    outputs: tuple[str, ...]
    _index: dict[str, LayerSpec] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        """Resolve default inputs and check every reference.

        Raises
        ------
        ValueError
            On a duplicate name, a reference to an undeclared or later
            layer, an undeclared output, or an invalid ``shares``.

        """
        if not self.inputs:
            error_message = f"{self.name}: a network needs an input"
            raise ValueError(error_message)

        declared = list(self.inputs)
        resolved = []
        for layer in self.layers:
            if layer.name in declared:
                error_message = f"{self.name}: duplicate name {layer.name}"
                raise ValueError(error_message)
            if not layer.inputs:
                layer = replace(layer, inputs=(declared[-1],))  # noqa: PLW2901
            for source in layer.inputs:
                if source not in declared:
                    error_message = (
                        f"{self.name}: {layer.name} reads {source}, which is "
                        "not an input or an earlier layer"
                    )
                    raise ValueError(error_message)
            declared.append(layer.name)
            resolved.append(layer)

        object.__setattr__(self, "layers", tuple(resolved))
        object.__setattr__(
            self,
            "_index",
            {layer.name: layer for layer in resolved},
        )
        object.__setattr__(self, "outputs", tuple(self.outputs))
        for name in self.outputs:
            if name not in self._index:
                error_message = f"{self.name}: output {name} is not a layer"
                raise ValueError(error_message)
        for layer in resolved:
            if layer.shares is not None:
                self._check_share(layer)

    def _check_share(self, layer: LayerSpec) -> None:
        """A sharing layer must mirror an earlier trainable owner."""
        owner = self._index.get(layer.shares)
        order = [spec.name for spec in self.layers]
        if (
            owner is None
            or owner.shares is not None
            or order.index(owner.name) > order.index(layer.name)
        ):
            error_message = (
                f"{self.name}: {layer.name} shares {layer.shares}, which is "
                "not an earlier owning layer"
            )
            raise ValueError(error_message)
        signature = ("kind", "kernel", "stride", "dilation", "out_channels")
        if any(getattr(owner, k) != getattr(layer, k) for k in signature):
            error_message = (
                f"{self.name}: {layer.name} does not match the layer it "
                f"shares ({owner.name})"
            )
            raise ValueError(error_message)

    def layer(self, name: str) -> LayerSpec:
        """Look a layer up by name.

        Raises
        ------
        KeyError
            If no layer has that name.

        """
        return self._index[name]

    def __contains__(self, name: object) -> bool:
        """Whether ``name`` is a layer of this network."""
        return name in self._index

    def infer_shapes(self) -> dict[str, ShapeTriple]:
        """Output shape of every input and layer, in declaration order.

        Raises
        ------
        ShapeError
            On the first layer whose shape cannot be inferred.

        """
        shapes: dict[str, ShapeTriple] = dict(self.inputs)
        for layer in self.layers:
            in_shapes = [shapes[source] for source in layer.inputs]
            if layer.shares is not None:
                owner = self._index[layer.shares]
                if in_shapes[0].channels != shapes[owner.inputs[0]].channels:
                    error_message = (
                        f"{layer.name}: input width differs from "
                        f"{owner.name}, whose parameters it shares"
                    )
                    raise ShapeError(error_message)
            shapes[layer.name] = infer_shape(layer, in_shapes)
        return shapes

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain JSON types."""
        return {
            "name": self.name,
            "inputs": {k: list(v.as_tuple()) for k, v in self.inputs.items()},
            "layers": [layer.to_dict() for layer in self.layers],
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> NetworkSpec:
        """Build from the output of ``to_dict``."""
        return cls(
            name=raw["name"],
            inputs={k: ShapeTriple(*v) for k, v in raw["inputs"].items()},
            layers=tuple(LayerSpec.from_dict(r) for r in raw["layers"]),
            outputs=tuple(raw["outputs"]),
        )

    def to_json(self) -> str:
        """One layer per line, so a spec file diffs row by row."""
        raw = self.to_dict()
        layers = ",\n    ".join(json.dumps(r) for r in raw["layers"])
        return (
            "{\n"
            f'  "name": {json.dumps(raw["name"])},\n'
            f'  "inputs": {json.dumps(raw["inputs"])},\n'
            f'  "layers": [\n    {layers}\n  ],\n'
            f'  "outputs": {json.dumps(raw["outputs"])}\n'
            "}\n"
        )

    @classmethod
    def from_json(cls, text: str) -> NetworkSpec:
        """Parse a spec document."""
        return cls.from_dict(json.loads(text))


def load_spec(path: Path | str) -> NetworkSpec:
    """Read a spec document from disk."""
    spec = NetworkSpec.from_json(Path(path).read_text(encoding="utf-8"))
    _logger.debug("Loaded spec %s from %s", spec.name, path)
    return spec


def infer_shape(spec: LayerSpec, in_shapes: list[ShapeTriple]) -> ShapeTriple:
    """Output shape of one layer.

    Parameters
    ----------
    spec:
        The layer.
    in_shapes:
        Shapes of its inputs, in ``spec.inputs`` order.

    Raises
    ------
    ShapeError
        On an arity mismatch, concat inputs of different spatial size, or
        a non-positive resulting dimension.

    """
    expected = len(spec.inputs) or 1
    if len(in_shapes) != expected:
        error_message = (
            f"{spec.name}: expects {expected} input(s), got {len(in_shapes)}"
        )
        raise ShapeError(error_message)
    if spec.kind is not LayerKind.concat and len(in_shapes) != 1:
        error_message = f"{spec.name}: only concat takes several inputs"
        raise ShapeError(error_message)

    first = in_shapes[0]
    h, w, c = first.as_tuple()
    match spec.kind:
        case LayerKind.concat:
            if any((s.height, s.width) != (h, w) for s in in_shapes):
                sizes = ", ".join(str(s) for s in in_shapes)
                error_message = (
                    f"{spec.name}: concat inputs differ spatially ({sizes})"
                )
                raise ShapeError(error_message)
            out = (h, w, sum(s.channels for s in in_shapes))
        case LayerKind.conv | LayerKind.dilated_conv:
            out = (_ceil_div(h, spec.stride), _ceil_div(w, spec.stride))
            out = (*out, spec.out_channels)
        case LayerKind.projection_1x1:
            out = (_ceil_div(h, spec.stride), _ceil_div(w, spec.stride))
            out = (*out, spec.out_channels or c)
        case LayerKind.maxpool:
            out = (_ceil_div(h, spec.stride), _ceil_div(w, spec.stride), c)
        case LayerKind.deconv:
            out = (h * spec.stride, w * spec.stride, spec.out_channels)
        case LayerKind.upsample:
            out = (h * spec.scale, w * spec.scale, c)
        case LayerKind.residual_block:
            out = (h, w, c)
        case LayerKind.fully_connected:
            out = (1, 1, spec.out_channels)
    if min(out) <= 0:
        error_message = f"{spec.name}: non-positive output size {out}"
        raise ShapeError(error_message)
    return ShapeTriple(*out)


def _ceil_div(n: int, d: int) -> int:
    return -(-n // d)


def layer_params(spec: LayerSpec, in_shape: ShapeTriple) -> int:
    """Trainable scalars owned by one layer.

    A layer that shares another's parameters owns none.
    """
    if not spec.trainable:
        return 0
    c_in = in_shape.channels
    match spec.kind:
        case LayerKind.residual_block:
            k = spec.kernel
            return 2 * (k * k * c_in * c_in + c_in)
        case LayerKind.fully_connected:
            n_in = in_shape.height * in_shape.width * c_in
            return n_in * spec.out_channels + spec.out_channels
        case _:
            k = spec.kernel
            c_out = spec.out_channels or c_in
            return k * k * c_in * c_out + c_out


def count_params(spec: NetworkSpec) -> int:
    """Total trainable scalars of a network.

    Raises
    ------
    ShapeError
        If a shape upstream of a trainable layer cannot be inferred.

    """
    shapes = spec.infer_shapes()
    return sum(
        layer_params(layer, shapes[layer.inputs[0]]) for layer in spec.layers
    )


@dataclass(frozen=True)
class TableRow:
    """Comparison of one layer against its table row."""

    name: str
    expected: ShapeTriple
    actual: ShapeTriple

    @property
    def passed(self) -> bool:
        """Whether the inferred shape is the tabled one."""
        return self.expected == self.actual


@dataclass(frozen=True)
class TableReport:
    """Per-layer outcome of ``validate_against_table``."""

    network: str
    rows: tuple[TableRow, ...] = ()

    @property
    def passed(self) -> bool:
        """True iff every row passed; vacuously true when empty."""
        return all(row.passed for row in self.rows)

    @property
    def first_failure(self) -> TableRow | None:
        """The first failing row, if any."""
        return next((row for row in self.rows if not row.passed), None)

    def lines(self) -> list[str]:
        """Human-readable report lines."""
        return [
            f"{self.network}/{row.name}: expected {row.expected}, "
            f"got {row.actual} - {'ok' if row.passed else 'FAIL'}"
            for row in self.rows
        ]


def validate_against_table(
    spec: NetworkSpec,
    expected: list[tuple[str, ShapeTriple]],
) -> TableReport:
    """Compare inferred shapes with tabled ones.

    Raises
    ------
    ValueError
        If an expected name is not a layer of ``spec``.

    """
    for name, _ in expected:
        if name not in spec:
            error_message = f"{spec.name} has no layer named {name}"
            raise ValueError(error_message)
    shapes = spec.infer_shapes()
    rows = tuple(TableRow(name, want, shapes[name]) for name, want in expected)
    report = TableReport(spec.name, rows)
    if not report.passed:
        _logger.warning(
            "%s does not match its table at %s",
            spec.name,
            report.first_failure.name,
        )
    return report


def scale_spec(
    spec: NetworkSpec,
    resolution: int,
    width: float = 1.0,
    max_kernel: int | None = None,
) -> NetworkSpec:
    """Rescale a spec for a different input size, width or kernel cap.

    Spatial sizes follow from ``resolution`` through the shape rules;
    channel counts are multiplied by ``width`` (at least one channel)
    except on ``fixed_width`` layers; conv-family kernels are capped at
    ``max_kernel``. Pooling kernels are not capped: they own nothing.
    """

    def rescale(layer: LayerSpec) -> LayerSpec:
        changes: dict[str, Any] = {}
        if layer.out_channels is not None and not layer.fixed_width:
            changes["out_channels"] = max(1, round(layer.out_channels * width))
        if (
            max_kernel is not None
            and layer.kernel is not None
            and layer.kind is not LayerKind.maxpool
            and layer.kernel > max_kernel
        ):
            changes["kernel"] = max_kernel
        return replace(layer, **changes) if changes else layer

    inputs = {
        name: ShapeTriple(resolution, resolution, shape.channels)
        for name, shape in spec.inputs.items()
    }
    return NetworkSpec(
        name=spec.name,
        inputs=inputs,
        layers=tuple(rescale(layer) for layer in spec.layers),
        outputs=spec.outputs,
    )


def without_resampling(spec: NetworkSpec) -> NetworkSpec:
    """Drop every maxpool and upsample layer, rewiring their readers.

    A reader of a dropped layer reads whatever the dropped layer read.
    """
    dropped = {LayerKind.maxpool, LayerKind.upsample}
    alias: dict[str, str] = {}
    layers = []
    for layer in spec.layers:
        sources = tuple(alias.get(s, s) for s in layer.inputs)
        if layer.kind in dropped:
            alias[layer.name] = sources[0]
            continue
        layers.append(replace(layer, inputs=sources))
    return NetworkSpec(
        name=spec.name,
        inputs=dict(spec.inputs),
        layers=tuple(layers),
        outputs=tuple(alias.get(o, o) for o in spec.outputs),
    )
