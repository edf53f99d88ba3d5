"""Shared fixtures.

Everything here runs at 16 px with a sliver of the canonical widths, so a
full train step takes milliseconds on a CPU. The desk-scale fixtures used
by the slow acceptance runs live next to those tests.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from scgn.config import HOME_ENV, SEED_ENV
from scgn.core.data import Ablation, ModelConfig, TrainConfig
from scgn.core.models import build_bundle
from scgn.pipeline.dataset import stack_triplets
from scgn.pipeline.synthetic import synth_triplets

if TYPE_CHECKING:
    from collections.abc import Callable

    from scgn.core.models import ModelBundle
    from scgn.pipeline.dataset import TripletBatch, ViewTriplet

#: 16 px, two to sixteen channels per layer, 3 x 3 kernels at most.
TINY = ModelConfig(resolution=16, width=1 / 16, max_kernel=3)


def _build_bundle(
    ablation: Ablation | None = None,
    config: ModelConfig = TINY,
    seed: int = 0,
) -> ModelBundle:
    return build_bundle(config, ablation, seed=seed)


@pytest.fixture(autouse=True)
def _scgn_env(tmp_path, monkeypatch) -> None:
    """Keep every test out of the real home directory and seed."""
    monkeypatch.setenv(HOME_ENV, str(tmp_path / "home"))
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture
def make_bundle() -> Callable[..., ModelBundle]:
    """Factory for tiny bundles."""
    return _build_bundle


@pytest.fixture
def bundle() -> ModelBundle:
    """The full tiny model, seed 0."""
    return _build_bundle()


@pytest.fixture
def triplets() -> list[ViewTriplet]:
    """Four procedural 16 px triplets."""
    return synth_triplets(4, 16, seed=0)


@pytest.fixture
def batch(triplets) -> TripletBatch:
    """The first two triplets as one batch."""
    return stack_triplets(triplets[:2])


@pytest.fixture
def train_config() -> TrainConfig:
    """Three steps of two triplets, a checkpoint every two steps."""
    return TrainConfig(
        total_iterations=3,
        batch_size=2,
        checkpoint_interval=2,
        log_interval=1,
    )
