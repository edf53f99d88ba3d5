"""Tests for the layer specs and their shape and parameter calculus."""

from __future__ import annotations

from dataclasses import replace

import pytest

from scgn.arch_info import SPEC_DIR, SPEC_FILES, TABLES
from scgn.core.data import Activation, LayerKind
from scgn.core.layers import (
    LayerSpec,
    NetworkSpec,
    ShapeError,
    ShapeTriple,
    count_params,
    infer_shape,
    layer_params,
    load_spec,
    scale_spec,
    validate_against_table,
    without_resampling,
)


def _spec(name: str) -> NetworkSpec:
    return load_spec(SPEC_DIR / SPEC_FILES[name])


def _shape(h: int, w: int, c: int) -> ShapeTriple:
    return ShapeTriple(h, w, c)


def test_conv_keeps_the_size_at_stride_one() -> None:
    """ec1: a 7 x 7 conv with 32 filters on a 224 px RGB image."""
    layer = LayerSpec("ec1", LayerKind.conv, kernel=7, out_channels=32)

    assert infer_shape(layer, [_shape(224, 224, 3)]) == _shape(224, 224, 32)


def test_maxpool_halves_with_ceil() -> None:
    """ep1 halves 224 to 112; odd sizes round up."""
    pool = LayerSpec("ep1", LayerKind.maxpool, kernel=3, stride=2)

    assert infer_shape(pool, [_shape(224, 224, 32)]) == _shape(112, 112, 32)
    assert infer_shape(pool, [_shape(7, 7, 4)]) == _shape(4, 4, 4)


def test_upsample_doubles() -> None:
    """up2 takes 56 px to 112 px and keeps the channels."""
    up = LayerSpec("up2", LayerKind.upsample)

    assert infer_shape(up, [_shape(56, 56, 64)]) == _shape(112, 112, 64)


def test_deconv_doubles_and_sets_the_channels() -> None:
    """ddc1: stride-2 deconv from 14 px 256 channels to 28 px 128."""
    layer = LayerSpec(
        "ddc1", LayerKind.deconv, kernel=3, stride=2, out_channels=128
    )

    assert infer_shape(layer, [_shape(14, 14, 256)]) == _shape(28, 28, 128)


def test_concat_sums_channels() -> None:
    """Two 56 px 128 channel maps give 256 channels."""
    cat = LayerSpec("cat", LayerKind.concat, inputs=("a", "b"))

    out = infer_shape(cat, [_shape(56, 56, 128), _shape(56, 56, 128)])

    assert out == _shape(56, 56, 256)


def test_concat_rejects_spatial_mismatch() -> None:
    """Maps of different size cannot be stacked."""
    cat = LayerSpec("cat", LayerKind.concat, inputs=("a", "b"))

    with pytest.raises(ShapeError, match="differ spatially"):
        infer_shape(cat, [_shape(56, 56, 8), _shape(28, 28, 8)])


def test_arity_mismatch_is_a_shape_error() -> None:
    """A conv given two inputs names the layer."""
    layer = LayerSpec("ec1", LayerKind.conv, kernel=3, out_channels=8)

    with pytest.raises(ShapeError, match="ec1"):
        infer_shape(layer, [_shape(8, 8, 3), _shape(8, 8, 3)])


def test_shape_triple_rejects_zero() -> None:
    """Every dimension must be positive."""
    with pytest.raises(ShapeError):
        ShapeTriple(0, 4, 3)


def test_dilated_conv_needs_a_rate_of_two() -> None:
    """A dilation of 1 is a plain conv."""
    with pytest.raises(ValueError, match="dilation"):
        LayerSpec(
            "ec4", LayerKind.dilated_conv, kernel=3, dilation=1, out_channels=8
        )


def test_dilated_conv_keeps_the_size() -> None:
    """ec3 to ec6 all stay at 56 px."""
    layer = LayerSpec(
        "ec4", LayerKind.dilated_conv, kernel=3, dilation=2, out_channels=128
    )

    assert infer_shape(layer, [_shape(56, 56, 128)]) == _shape(56, 56, 128)


def test_pool_then_upsample_is_identity_on_even_sizes() -> None:
    """Halving then doubling an even map gives it back."""
    pool = LayerSpec("p", LayerKind.maxpool, kernel=3, stride=2)
    up = LayerSpec("u", LayerKind.upsample)
    start = _shape(40, 40, 6)

    assert infer_shape(up, [infer_shape(pool, [start])]) == start


def test_conv_params_count_weights_and_biases() -> None:
    """3 x 3 x 3 x 8 weights plus 8 biases."""
    layer = LayerSpec("c", LayerKind.conv, kernel=3, out_channels=8)

    assert layer_params(layer, _shape(8, 8, 3)) == 224


def test_pooling_owns_nothing() -> None:
    """Maxpool and upsample are parameter free."""
    pool = LayerSpec("p", LayerKind.maxpool, kernel=3, stride=2)
    up = LayerSpec("u", LayerKind.upsample)

    assert layer_params(pool, _shape(8, 8, 3)) == 0
    assert layer_params(up, _shape(8, 8, 3)) == 0


def test_fully_connected_params() -> None:
    """fc5 reads a 14 x 14 x 256 map: 50176 weights and one bias."""
    fc = LayerSpec("fc5", LayerKind.fully_connected, out_channels=1)

    assert layer_params(fc, _shape(14, 14, 256)) == 50177


def test_residual_block_is_two_same_convs() -> None:
    """Two k x k x c x c convolutions with biases."""
    block = LayerSpec("er1", LayerKind.residual_block, kernel=3)

    assert layer_params(block, _shape(8, 8, 4)) == 2 * (9 * 16 + 4)


def test_sharing_layers_count_zero() -> None:
    """The right encoder branch is counted on the left one."""
    vsn = _spec("vsn")
    shapes = vsn.infer_shapes()
    right = vsn.layer("ec1_r")

    assert right.shares == "ec1_l"
    assert layer_params(right, shapes["right"]) == 0


def test_count_params_is_additive() -> None:
    """A network's count is the sum over its layers."""
    disc = _spec("disc")
    shapes = disc.infer_shapes()

    total = sum(
        layer_params(layer, shapes[layer.inputs[0]]) for layer in disc.layers
    )

    assert count_params(disc) == total


@pytest.mark.parametrize("name", ["vsn", "vdn", "disc"])
def test_canonical_specs_match_their_tables(name) -> None:
    """Every tabled output size is reproduced at 224 px."""
    report = validate_against_table(_spec(name), TABLES[name])

    assert report.passed, "\n".join(report.lines())
    assert len(report.rows) == len(TABLES[name])


def test_wrong_width_fails_at_that_row() -> None:
    """ec2 with 32 filters fails where the table expects 112x112x64."""
    vsn = _spec("vsn")
    layers = tuple(
        replace(layer, out_channels=32) if layer.name == "ec2_l" else layer
        for layer in vsn.layers
        if layer.shares is None
    )
    broken = NetworkSpec(
        "vsn",
        {"left": vsn.inputs["left"]},
        layers[: [x.name for x in layers].index("ec6_l") + 1],
        ("ec6_l",),
    )
    expected = [row for row in TABLES["vsn"] if row[0].endswith("_l")]

    report = validate_against_table(broken, expected)

    assert not report.passed
    assert report.first_failure.name == "ec2_l"
    assert report.first_failure.expected == _shape(112, 112, 64)


def test_empty_table_passes() -> None:
    """Nothing to compare is a vacuous pass."""
    report = validate_against_table(_spec("disc"), [])

    assert report.passed
    assert report.rows == ()


def test_unknown_table_row_is_rejected() -> None:
    """An expected name that is not a layer is an error."""
    with pytest.raises(ValueError, match="no layer named"):
        validate_against_table(_spec("disc"), [("fc9", _shape(1, 1, 1))])


def test_undeclared_input_is_rejected() -> None:
    """A layer may only read earlier layers."""
    with pytest.raises(ValueError, match="not an input or an earlier"):
        NetworkSpec(
            "n",
            {"x": _shape(8, 8, 3)},
            (
                LayerSpec("a", LayerKind.conv, kernel=3, out_channels=4),
                LayerSpec("b", LayerKind.concat, inputs=("a", "c")),
            ),
            ("b",),
        )


def test_empty_inputs_read_the_previous_layer() -> None:
    """Table rows without an input column chain."""
    spec = NetworkSpec(
        "n",
        {"x": _shape(8, 8, 3)},
        (
            LayerSpec("a", LayerKind.conv, kernel=3, out_channels=4),
            LayerSpec("b", LayerKind.maxpool, kernel=3, stride=2),
        ),
        ("b",),
    )

    assert spec.layer("a").inputs == ("x",)
    assert spec.layer("b").inputs == ("a",)


def test_json_round_trip_preserves_the_spec() -> None:
    """A serialized spec reloads equal."""
    vdn = _spec("vdn")

    assert NetworkSpec.from_json(vdn.to_json()) == vdn


def test_scaling_to_64_px() -> None:
    """ec6 lands on 16 x 16 x 128 at 64 px."""
    vsn = scale_spec(_spec("vsn"), 64)

    shapes = vsn.infer_shapes()

    assert shapes["ec6_l"] == _shape(16, 16, 128)
    assert shapes["dc5"] == _shape(64, 64, 3)


def test_width_scaling_spares_fixed_layers() -> None:
    """Image outputs and the scalar head keep their channel count."""
    vsn = scale_spec(_spec("vsn"), 32, width=0.25)
    disc = scale_spec(_spec("disc"), 32, width=0.25)

    assert vsn.infer_shapes()["dc5"].channels == 3
    assert vsn.infer_shapes()["ec1_l"].channels == 8
    assert disc.infer_shapes()["fc5"] == _shape(1, 1, 1)


def test_kernel_cap_leaves_pooling_alone() -> None:
    """max_kernel applies to convolutions only."""
    vsn = scale_spec(_spec("vsn"), 32, max_kernel=1)

    assert vsn.layer("ec1_l").kernel == 1
    assert vsn.layer("ep1_l").kernel == 3


def test_without_resampling_keeps_the_output_size() -> None:
    """mVSN drops pooling and upsampling yet still ends at full size."""
    vsn = _spec("vsn")

    pruned = without_resampling(vsn)
    kinds = {layer.kind for layer in pruned.layers}

    assert LayerKind.maxpool not in kinds
    assert LayerKind.upsample not in kinds
    assert pruned.infer_shapes()["dc5"] == _shape(224, 224, 3)
    assert pruned.layer("dc5").activation is Activation.tanh
