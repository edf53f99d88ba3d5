"""Tests for the model bundle and its three forward mappings."""

from __future__ import annotations

import pytest
import torch

from scgn.core.data import Ablation, ModelConfig, Partition
from scgn.core.layers import ShapeError, count_params
from scgn.core.models import (
    GRADCHECK_CONFIG,
    build_bundle,
    build_canonical,
    decompose,
    discriminate,
    synthesize,
)
from scgn.pipeline.images import to_tensor


def test_canonical_shapes() -> None:
    """ec6 is 56 x 56 x 128 and the head is a scalar at 224 px."""
    bundle = build_bundle(ModelConfig(resolution=224, width=1 / 16))

    vsn_shapes = bundle.vsn.shapes
    disc_shapes = bundle.disc.shapes

    assert vsn_shapes["ec6_l"].as_tuple()[:2] == (56, 56)
    assert vsn_shapes["dc5"].as_tuple() == (224, 224, 3)
    assert disc_shapes["fc5"].as_tuple() == (1, 1, 1)


def test_shapes_follow_the_resolution() -> None:
    """At 64 px ec6 lands on 16 x 16 x 128."""
    bundle = build_bundle(ModelConfig(resolution=64))

    assert bundle.vsn.shapes["ec6_l"].as_tuple() == (16, 16, 128)


def test_canonical_bundle_matches_the_calculus() -> None:
    """Full width at 64 px: torch and the spec count agree."""
    bundle = build_canonical(64, seed=1)

    expected = sum(count_params(spec) for spec in bundle.specs().values())

    assert bundle.config.width == 1
    assert bundle.params.numel() == expected
    assert set(bundle.specs()) == {"vsn", "vdn", "disc"}


def test_resolution_must_be_a_multiple_of_16() -> None:
    """100 px cannot be halved four times."""
    with pytest.raises(ValueError, match="multiple of 16"):
        ModelConfig(resolution=100)


def test_synthesize_keeps_the_output_in_tanh_range(bundle, batch) -> None:
    """One middle view per pair, inside (-1, 1)."""
    with bundle.eval_mode():
        middle = synthesize(bundle, batch.left, batch.right)

    assert middle.shape == (2, 3, 16, 16)
    assert middle.abs().max().item() < 1


def test_synthesize_accepts_a_single_image(bundle, triplets) -> None:
    """A 3 x H x W view is treated as a batch of one."""
    left, right = to_tensor(triplets[0].left), to_tensor(triplets[0].right)

    with bundle.eval_mode():
        middle = synthesize(bundle, left, right)

    assert middle.shape == (1, 3, 16, 16)


def test_wrong_size_names_the_expected_shape(bundle) -> None:
    """A 32 px view on a 16 px bundle is a shape error."""
    view = torch.zeros(1, 3, 32, 32)

    with pytest.raises(ShapeError, match="16 x 16"):
        synthesize(bundle, view, view)


def test_unnormalized_input_is_rejected(bundle) -> None:
    """Raw 0..255 pixels are refused."""
    view = torch.full((1, 3, 16, 16), 200.0)

    with pytest.raises(ValueError, match="normalized"):
        synthesize(bundle, view, view)


def test_decompose_returns_two_views(bundle, batch) -> None:
    """Left and right come back at full size."""
    with bundle.eval_mode():
        left, right = decompose(bundle, batch.middle)

    assert left.shape == right.shape == batch.middle.shape
    assert max(left.abs().max(), right.abs().max()).item() < 1


def test_decompose_needs_the_vdn(make_bundle, batch) -> None:
    """A no-vdn bundle has nothing to decompose with."""
    bundle = make_bundle(Ablation(use_vdn=False))

    assert bundle.vdn is None
    assert not bundle.params.names(Partition.theta_V)
    with pytest.raises(ValueError, match="use_vdn"):
        decompose(bundle, batch.middle)


def test_shared_decoder_has_fewer_parameters(make_bundle) -> None:
    """mVDN trades one decoder for two heads."""
    full = make_bundle()
    shared = make_bundle(Ablation(shared_vdn_decoder=True))

    full_v = full.params.numel(Partition.theta_V)
    shared_v = shared.params.numel(Partition.theta_V)

    assert shared_v < full_v


def test_mvsn_drops_resampling(make_bundle, batch) -> None:
    """Without pooling the synthesized view still has full size."""
    bundle = make_bundle(Ablation(mvsn=True))

    with bundle.eval_mode():
        middle = synthesize(bundle, batch.left, batch.right)

    assert "ep1_l" not in bundle.vsn_spec
    assert middle.shape == batch.middle.shape


def test_zero_discriminator_outputs_one_half(bundle, batch) -> None:
    """sigmoid(0) for every image."""
    with torch.no_grad():
        for param in bundle.params.tensors(Partition.theta_D):
            param.zero_()

    with bundle.eval_mode():
        prob = discriminate(bundle, batch.middle)

    assert prob.shape == (2,)
    assert torch.equal(prob, torch.full((2,), 0.5))


def test_discriminator_has_no_cross_sample_terms(bundle, batch) -> None:
    """A batch scores as its images do one at a time."""
    with bundle.eval_mode():
        together = discriminate(bundle, batch.middle)
        apart = torch.cat(
            [discriminate(bundle, image) for image in batch.middle]
        )

    assert torch.allclose(together, apart, atol=1e-6)
    assert ((together > 0) & (together < 1)).all()


def test_swapping_the_views_changes_the_middle(bundle, batch) -> None:
    """The two branches are concatenated in order, not pooled."""
    with bundle.eval_mode():
        forward = synthesize(bundle, batch.left, batch.right)
        swapped = synthesize(bundle, batch.right, batch.left)

    assert not torch.equal(batch.left, batch.right)
    assert not torch.allclose(forward, swapped)


def test_right_branch_reuses_left_parameters(bundle) -> None:
    """Only the left encoder owns tensors."""
    names = bundle.params.names(Partition.theta_G)

    assert "vsn/ec1_l/weight" in names
    assert "vsn/er1_l/conv_a/weight" in names
    assert not any(name.split("/")[1].endswith("_r") for name in names)
    assert "ec1_r" not in bundle.vsn.owners


def test_partitions_cover_every_parameter(bundle) -> None:
    """Each entry belongs to the network it is named after."""
    prefix = {
        Partition.theta_G: "vsn/",
        Partition.theta_V: "vdn/",
        Partition.theta_D: "disc/",
    }

    for which, start in prefix.items():
        names = bundle.params.names(which)
        assert names
        assert all(name.startswith(start) for name in names)
    assert sum(len(bundle.params.names(p)) for p in prefix) == len(
        bundle.params
    )


def test_same_seed_same_weights(make_bundle) -> None:
    """Initialization is a function of the seed."""
    a = make_bundle(seed=3).params.snapshot()
    b = make_bundle(seed=3).params.snapshot()
    c = make_bundle(seed=4).params.snapshot()

    assert all(torch.equal(a[name], b[name]) for name in a)
    assert not all(torch.equal(a[name], c[name]) for name in a)


def test_load_rejects_a_foreign_set(bundle, make_bundle) -> None:
    """Parameters of another ablation do not fit."""
    other = make_bundle(Ablation(use_vdn=False)).params.snapshot()

    with pytest.raises(KeyError, match="parameter names differ"):
        bundle.params.load(other)


def test_gradcheck_bundle_is_small() -> None:
    """Each partition stays within the finite-difference budget."""
    bundle = build_bundle(GRADCHECK_CONFIG)

    for which in Partition:
        assert 0 < bundle.params.numel(which) <= 500


def test_float64_cast_rebuilds_the_view(bundle) -> None:
    """The parameter view follows the cast."""
    bundle.to(torch.float64)

    assert bundle.dtype is torch.float64
    assert all(
        p.dtype is torch.float64 for p in bundle.params.entries.values()
    )
