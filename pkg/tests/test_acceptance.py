"""Desk-scale training runs: memorize four synthetic triplets at 64 px.

Each run takes minutes on a CPU; they are deselected by default and run
with ``pytest -m slow``.
"""

from __future__ import annotations

import pytest

from scgn.core.data import Ablation, ModelConfig, TrainConfig
from scgn.core.losses import view_consistency_loss
from scgn.core.metrics import evaluate_dataset
from scgn.core.models import build_bundle, decompose, synthesize
from scgn.core.trainer import fit
from scgn.pipeline.dataset import stack_triplets
from scgn.pipeline.synthetic import synth_triplets
from scgn.reports import read_loss_csv

pytestmark = pytest.mark.slow

#: Quarter-width networks at 64 px.
DESK = ModelConfig(resolution=64, width=0.25)

ITERATIONS = 2000


def _train_config(ablation: Ablation | None = None) -> TrainConfig:
    return TrainConfig(
        total_iterations=ITERATIONS,
        batch_size=4,
        ablation=ablation or Ablation(),
        checkpoint_interval=0,
        log_interval=100,
        seed=0,
    )


def _final_l_p(result) -> float:
    tail = result.history[-10:]
    return sum(report.l_p for report in tail) / len(tail)


@pytest.fixture(scope="module")
def desk_triplets():
    """Four procedural 64 px triplets."""
    return synth_triplets(4, 64, seed=0)


@pytest.fixture(scope="module")
def overfit(desk_triplets, tmp_path_factory):
    """The full model after the desk-scale run."""
    out_dir = tmp_path_factory.mktemp("overfit")
    bundle = build_bundle(DESK, seed=0)
    result = fit(bundle, desk_triplets, _train_config(), out_dir=out_dir)
    return result, out_dir


def test_training_memorizes_the_set(overfit, desk_triplets) -> None:
    """L_p below 0.05 and at least 28 dB on the training triplets."""
    result, out_dir = overfit

    report = evaluate_dataset(result.bundle, desk_triplets, batch_size=4)

    assert (out_dir / f"ckpt_{ITERATIONS}.scgn").is_file()
    assert _final_l_p(result) < 0.05
    assert report.mean("psnr") >= 28


def test_decomposition_recovers_the_side_views(
    overfit,
    desk_triplets,
) -> None:
    """Synthesize then decompose lands within 0.10 of the true views."""
    result, _ = overfit
    batch = stack_triplets(desk_triplets)

    with result.bundle.eval_mode():
        middle = synthesize(result.bundle, batch.left, batch.right)
        dec_left, dec_right = decompose(result.bundle, middle)
        l_vc = view_consistency_loss(
            dec_left, dec_right, batch.left, batch.right
        )

    assert l_vc.item() < 0.10


def test_training_without_the_decomposer_converges(desk_triplets) -> None:
    """Memorization does not depend on the VDN."""
    ablation = Ablation(use_vdn=False)
    bundle = build_bundle(DESK, ablation, seed=0)

    result = fit(bundle, desk_triplets, _train_config(ablation))

    assert _final_l_p(result) < 0.05


def test_seeded_runs_write_identical_losses(
    overfit,
    desk_triplets,
    tmp_path,
) -> None:
    """A repeat of the first 200 steps matches row for row."""
    _, out_dir = overfit
    cfg = TrainConfig(
        total_iterations=200,
        batch_size=4,
        checkpoint_interval=0,
        log_interval=100,
        seed=0,
    )

    fit(build_bundle(DESK, seed=0), desk_triplets, cfg, out_dir=tmp_path)

    repeat = read_loss_csv(tmp_path / "losses.csv")
    full = read_loss_csv(out_dir / "losses.csv")
    assert repeat.equals(full.head(200))
