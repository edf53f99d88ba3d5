"""Tests for image preprocessing, dataset layouts and synthetic scenes."""

from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from scgn.pipeline.dataset import (
    DatasetError,
    TripletDataset,
    ViewTriplet,
    load_manifest,
    read_manifest,
    save_manifest,
    stack_triplets,
)
from scgn.pipeline.images import (
    denormalize,
    preprocess,
    read_image,
    to_image,
    to_tensor,
    write_image,
)
from scgn.pipeline.synthetic import (
    Scene,
    SceneObject,
    Shape,
    render_scene,
    synth_triplets,
)


def _write_triplet(directory, value: float = 128.0, size: int = 20) -> None:
    for offset, view in enumerate(("left", "middle", "right")):
        write_image(
            directory / f"{view}.png",
            np.full((size, size, 3), value + offset),
        )


def _one_object_scene(nearness: float = 1.0) -> Scene:
    obj = SceneObject(
        Shape.rect, cx=16, cy=16, size=4, color=(255, 0, 0), nearness=nearness
    )
    return Scene(32, top=(0, 0, 0), bottom=(0, 0, 255), objects=(obj,))


def test_preprocess_crops_then_resizes() -> None:
    """640 x 480 becomes 224 x 224 x 3."""
    raw = np.random.default_rng(0).uniform(0, 255, size=(480, 640, 3))

    out = preprocess(raw, 224)

    assert out.shape == (224, 224, 3)
    assert out.dtype == np.float32
    assert np.abs(out).max() <= 1


def test_preprocess_maps_the_endpoints() -> None:
    """255 is 1 and 0 is -1 exactly."""
    raw = np.zeros((16, 16, 3))
    raw[:8] = 255

    out = preprocess(raw, 16)

    assert out[0, 0, 0] == 1.0
    assert out[-1, 0, 0] == -1.0


def test_preprocess_rejects_grayscale() -> None:
    """Three channels are required."""
    with pytest.raises(ValueError, match="H x W x 3"):
        preprocess(np.zeros((16, 16)), 16)


def test_preprocess_rejects_unknown_interpolation() -> None:
    """Only the listed resize modes exist."""
    with pytest.raises(ValueError, match="unknown interpolation"):
        preprocess(np.zeros((32, 32, 3)), 16, interpolation="lanczos")


def test_denormalize_endpoints_and_midpoint() -> None:
    """-1, 0 and 1 go to 0, 127.5 and 255."""
    out = denormalize(np.array([-1.0, 0.0, 1.0]))

    assert out.tolist() == [0.0, 127.5, 255.0]


def test_denormalize_clamps_with_a_warning(caplog) -> None:
    """Out-of-range values are clipped and counted."""
    with caplog.at_level(logging.WARNING, logger="scgn.pipeline"):
        out = denormalize(np.array([-1.5, 1.2, 0.0]))

    assert out.tolist() == [0.0, 255.0, 127.5]
    assert "Clamped 2" in caplog.text


def test_png_keeps_eight_bit_pixels(tmp_path) -> None:
    """Integral values survive a write and a read."""
    image = np.arange(48, dtype=np.float32).reshape(4, 4, 3) * 5

    back = read_image(write_image(tmp_path / "x.png", image))

    assert np.array_equal(back, image)


def test_tensor_conversion_is_channel_first() -> None:
    """H x W x C arrays become C x H x W tensors."""
    image = np.zeros((4, 6, 3), dtype=np.float32)
    image[..., 2] = 1

    tensor = to_tensor(image)

    assert tuple(tensor.shape) == (3, 4, 6)
    assert tensor[2].min().item() == 1
    assert np.array_equal(to_image(tensor), image)


def test_manifest_lists_triplets_in_id_order(tmp_path) -> None:
    """Three triplet directories give three entries."""
    for ident in ("b", "c", "a"):
        _write_triplet(tmp_path / "train" / ident)

    manifest = load_manifest(tmp_path, "train", resolution=16)

    assert [entry.id for entry in manifest.entries] == ["a", "b", "c"]


def test_missing_view_names_the_triplet(tmp_path) -> None:
    """The error says which triplet lacks which view."""
    _write_triplet(tmp_path / "train" / "t1")
    (tmp_path / "train" / "t1" / "right.png").unlink()

    with pytest.raises(DatasetError, match="t1: missing right"):
        load_manifest(tmp_path, "train")


def test_missing_split_is_an_error(tmp_path) -> None:
    """A root without the split directory."""
    with pytest.raises(DatasetError, match="no test split"):
        load_manifest(tmp_path, "test")


def test_empty_split_is_an_error(tmp_path) -> None:
    """A split with nothing in it."""
    (tmp_path / "train").mkdir()

    with pytest.raises(DatasetError, match="empty"):
        load_manifest(tmp_path, "train")


def test_angles_are_read(tmp_path) -> None:
    """An asymmetric baseline is recorded on the entry."""
    directory = tmp_path / "train" / "pose"
    _write_triplet(directory)
    angles = {"left": -30, "middle": 0, "right": 15}
    (directory / "angles.json").write_text(json.dumps(angles))

    manifest = load_manifest(tmp_path, "train")

    assert manifest.entries[0].angles == {
        "left": -30.0,
        "middle": 0.0,
        "right": 15.0,
    }


def test_malformed_angles_are_rejected(tmp_path) -> None:
    """A view without an angle is an error."""
    directory = tmp_path / "train" / "pose"
    _write_triplet(directory)
    (directory / "angles.json").write_text('{"left": 1}')

    with pytest.raises(DatasetError, match="malformed angles"):
        load_manifest(tmp_path, "train")


def test_sequence_layout_pairs_frames_around_each_centre(tmp_path) -> None:
    """Every frame with neighbours on both sides is a middle view."""
    sequence = tmp_path / "train" / "drive"
    for frame in range(6):
        write_image(sequence / f"{frame:06d}.png", np.zeros((20, 20, 3)))

    manifest = load_manifest(tmp_path, "train", layout="sequence", seed=3)
    again = load_manifest(tmp_path, "train", layout="sequence", seed=3)

    assert len(manifest) == 4
    assert manifest.entries == again.entries
    for entry in manifest.entries:
        left = int(entry.left[-10:-4])
        middle = int(entry.middle[-10:-4])
        right = int(entry.right[-10:-4])
        assert middle - left == right - middle >= 1


def test_unknown_layout_is_an_error(tmp_path) -> None:
    """Only triplet and sequence exist."""
    (tmp_path / "train").mkdir()

    with pytest.raises(DatasetError, match="unknown layout"):
        load_manifest(tmp_path, "train", layout="video")


def test_cached_manifest_reloads(tmp_path) -> None:
    """A saved manifest reads back and checks its files."""
    _write_triplet(tmp_path / "train" / "a")
    manifest = load_manifest(tmp_path, "train", resolution=16)
    path = save_manifest(manifest, tmp_path / "manifest.json")

    assert read_manifest(path) == manifest

    (tmp_path / "train" / "a" / "left.png").unlink()
    with pytest.raises(DatasetError, match="a: missing left"):
        read_manifest(path)


def test_dataset_preprocesses_on_access(tmp_path) -> None:
    """Items are normalized triplets at the manifest resolution."""
    _write_triplet(tmp_path / "train" / "a", value=0.0)
    dataset = TripletDataset(load_manifest(tmp_path, "train", resolution=16))

    triplet = dataset[0]

    assert len(dataset) == 1
    assert triplet.id == "a"
    assert triplet.resolution == 16
    assert triplet.left.shape == (16, 16, 3)
    assert triplet.left.max() == pytest.approx(-1.0)


def test_triplet_rejects_raw_pixels() -> None:
    """Views must already be normalized."""
    raw = np.full((4, 4, 3), 200.0, dtype=np.float32)

    with pytest.raises(ValueError, match="not normalized"):
        ViewTriplet(left=raw, right=raw, middle=raw, id="raw")


def test_stacking_gives_nchw_batches(triplets) -> None:
    """Batch dimension first, channels second."""
    batch = stack_triplets(triplets)

    assert tuple(batch.middle.shape) == (4, 3, 16, 16)
    assert batch.ids == tuple(t.id for t in triplets)
    with pytest.raises(ValueError, match="empty"):
        stack_triplets([])


def test_synthetic_triplets_are_deterministic() -> None:
    """Same seed, bit-identical views."""
    first = synth_triplets(3, 32, seed=7)
    second = synth_triplets(3, 32, seed=7)

    for a, b in zip(first, second, strict=True):
        assert a.id == b.id
        assert np.array_equal(a.left, b.left)
        assert np.array_equal(a.middle, b.middle)
        assert np.array_equal(a.right, b.right)


def test_zero_disparity_collapses_the_views() -> None:
    """Without a baseline all three views coincide."""
    (triplet,) = synth_triplets(1, 32, seed=1, disparity=0)

    assert np.array_equal(triplet.left, triplet.middle)
    assert np.array_equal(triplet.right, triplet.middle)


def test_nearest_object_shifts_by_the_disparity() -> None:
    """A nearness-1 object moves by exactly d pixels."""
    scene = _one_object_scene()

    middle = render_scene(scene, 0)
    left = render_scene(scene, 3)

    assert np.array_equal(left[:, 3:], middle[:, :-3])
    assert not np.array_equal(left, middle)


def test_farther_objects_shift_less() -> None:
    """Nearness 0.5 halves the shift."""
    scene = _one_object_scene(nearness=0.5)

    middle = render_scene(scene, 0)
    left = render_scene(scene, 4)

    assert np.array_equal(left[:, 2:], middle[:, :-2])


def test_synthetic_count_must_be_positive() -> None:
    """At least one triplet."""
    with pytest.raises(ValueError, match="count"):
        synth_triplets(0, 16)


def test_nearness_out_of_range_is_rejected() -> None:
    """Parallax factors lie in (0, 1]."""
    with pytest.raises(ValueError, match="nearness"):
        SceneObject(Shape.circle, 1, 1, 1, (0, 0, 0), nearness=1.5)
