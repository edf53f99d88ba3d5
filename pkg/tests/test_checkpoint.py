"""Tests for checkpoint archives and resuming a run from one."""

from __future__ import annotations

from dataclasses import replace

import pytest
import torch

from scgn.core.checkpoint import (
    CheckpointError,
    checkpoint_name,
    find_checkpoints,
    load_checkpoint,
    save_checkpoint,
)
from scgn.core.data import Ablation
from scgn.core.trainer import TrainState, fit
from scgn.reports import read_loss_csv


def _same_params(a, b) -> bool:
    left, right = a.params.snapshot(), b.params.snapshot()
    return left.keys() == right.keys() and all(
        torch.equal(left[name], right[name]) for name in left
    )


def test_bundle_round_trip(bundle, tmp_path) -> None:
    """Specs, config and every tensor come back."""
    path = save_checkpoint(tmp_path, bundle)

    loaded = load_checkpoint(path)

    assert path.name == "ckpt_0.scgn"
    assert loaded.iteration == 0
    assert loaded.rng_state is None
    assert loaded.seed == 0
    assert loaded.bundle.config == bundle.config
    assert loaded.bundle.specs() == bundle.specs()
    assert _same_params(loaded.bundle, bundle)


def test_ablation_survives_the_round_trip(make_bundle, tmp_path) -> None:
    """An mVDN bundle reloads as mVDN."""
    bundle = make_bundle(Ablation(shared_vdn_decoder=True, use_sharp=False))

    loaded = load_checkpoint(save_checkpoint(tmp_path, bundle))

    assert loaded.bundle.ablation == bundle.ablation
    assert "dec5_p" in loaded.bundle.vdn_spec


def test_no_leftover_temp_file(bundle, tmp_path) -> None:
    """The archive is moved into place."""
    save_checkpoint(tmp_path, bundle)

    assert [p.name for p in tmp_path.iterdir()] == ["ckpt_0.scgn"]


def test_checkpoints_sort_by_iteration(tmp_path) -> None:
    """ckpt_10 comes after ckpt_2."""
    for it in (10, 2, 1):
        (tmp_path / checkpoint_name(it)).write_bytes(b"")
    (tmp_path / "notes.txt").write_text("x")

    found = find_checkpoints(tmp_path)

    assert [p.name for p in found] == [
        "ckpt_1.scgn",
        "ckpt_2.scgn",
        "ckpt_10.scgn",
    ]


def test_corrupt_file_is_a_checkpoint_error(tmp_path) -> None:
    """Random bytes are not an archive."""
    path = tmp_path / "ckpt_1.scgn"
    path.write_bytes(b"not a checkpoint at all")

    with pytest.raises(CheckpointError, match="could not read"):
        load_checkpoint(path)


def test_missing_file_is_a_checkpoint_error(tmp_path) -> None:
    """Reading nothing fails the same way."""
    with pytest.raises(CheckpointError, match="could not read"):
        load_checkpoint(tmp_path / "ckpt_5.scgn")


def test_foreign_format_is_rejected(tmp_path) -> None:
    """Another format version is refused."""
    path = tmp_path / "ckpt_1.scgn"
    torch.save({"format": 99}, path)

    with pytest.raises(CheckpointError, match="format 1"):
        load_checkpoint(path)


def test_tampered_parameters_are_rejected(bundle, tmp_path) -> None:
    """A tensor of the wrong shape does not load."""
    path = save_checkpoint(tmp_path, bundle)
    payload = torch.load(path, weights_only=True)
    payload["params"]["vsn/ec1_l/weight"] = torch.zeros(1)
    torch.save(payload, path)

    with pytest.raises(CheckpointError, match="do not match"):
        load_checkpoint(path)


def test_restore_needs_trainer_state(bundle, train_config, tmp_path) -> None:
    """A bundle-only archive cannot resume a run."""
    checkpoint = load_checkpoint(save_checkpoint(tmp_path, bundle))

    with pytest.raises(CheckpointError, match="no trainer state"):
        TrainState.restore(checkpoint, train_config)


def test_seed_survives_the_round_trip(
    bundle,
    triplets,
    train_config,
    tmp_path,
) -> None:
    """The run seed is stored with the trainer state."""
    cfg = replace(train_config, seed=7)
    fit(bundle, triplets, cfg, out_dir=tmp_path)

    checkpoint = load_checkpoint(tmp_path / "ckpt_3.scgn")
    state = TrainState.restore(checkpoint, train_config)

    assert checkpoint.seed == 7
    assert state.seed == 7


def test_resume_matches_the_uninterrupted_run(
    make_bundle,
    triplets,
    train_config,
    tmp_path,
) -> None:
    """Parameters, Adam moments and the loss csv agree bitwise."""
    cfg = replace(train_config, total_iterations=4, checkpoint_interval=0)
    whole = fit(make_bundle(), triplets, cfg, out_dir=tmp_path / "whole")
    first = replace(cfg, total_iterations=2)
    fit(make_bundle(), triplets, first, out_dir=tmp_path / "part")

    checkpoint = load_checkpoint(tmp_path / "part" / "ckpt_2.scgn")
    state = TrainState.restore(checkpoint, cfg)
    resumed = fit(
        checkpoint.bundle,
        triplets,
        cfg,
        out_dir=tmp_path / "part",
        state=state,
    )

    assert resumed.state.iteration == 4
    assert _same_params(resumed.bundle, whole.bundle)
    assert read_loss_csv(tmp_path / "part" / "losses.csv").equals(
        read_loss_csv(tmp_path / "whole" / "losses.csv")
    )
    for which in whole.state.optimizers:
        for (m1, v1), (m2, v2) in zip(
            whole.state.moments(which),
            resumed.state.moments(which),
            strict=True,
        ):
            assert torch.equal(m1, m2)
            assert torch.equal(v1, v2)
