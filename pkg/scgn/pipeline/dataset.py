"""View triplets, dataset manifests and batching.

Two on-disk layouts are understood:

``triplet``
    ``<root>/<split>/<id>/{left,middle,right}.png`` with an optional
    ``angles.json`` (``{"left": deg, "middle": deg, "right": deg}``) for
    asymmetric baselines.
``sequence``
    ``<root>/<split>/<sequence>/<frame>.png``. Each centre frame t with a
    neighbour on both sides becomes the triplet ``(t - K, t, t + K)``,
    with K drawn from 1..7 by a seeded generator.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch.utils.data import Dataset

from scgn.pipeline.images import preprocess, read_image, to_tensor

if TYPE_CHECKING:
    from collections.abc import Sequence

_logger = logging.getLogger("scgn.pipeline")

VIEWS = ("left", "middle", "right")

#: Largest frame offset of the sequence layout.
MAX_FRAME_OFFSET = 7

#: Slack on the (-1, 1) check of a normalized triplet.
RANGE_TOLERANCE = 1e-5


class DatasetError(Exception):
    """Custom dataset layout error."""


@dataclass(frozen=True, eq=False)
class ViewTriplet:
    """Left, right and ground-truth middle view of one scene.

    The three images are ``H x W x 3`` float32 arrays normalized to
    (-1, 1) and of the same shape.
    """

    left: np.ndarray
    right: np.ndarray
    middle: np.ndarray
    id: str
    angles: dict[str, float] | None = None

    def __post_init__(self) -> None:
        """Check the shared shape and range.

        Raises
        ------
        ValueError
            If the shapes differ or a value lies outside [-1, 1].

        """
        shapes = {self.left.shape, self.middle.shape, self.right.shape}
        if len(shapes) != 1:
            error_message = f"{self.id}: views differ in shape {shapes}"
            raise ValueError(error_message)
        for name in VIEWS:
            view = getattr(self, name)
            if np.abs(view).max(initial=0.0) > 1 + RANGE_TOLERANCE:
                error_message = f"{self.id}: {name} is not normalized"
                raise ValueError(error_message)

    @property
    def resolution(self) -> int:
        return self.middle.shape[0]


@dataclass
class TripletBatch:
    """``N x 3 x H x W`` tensors of a mini-batch."""

    left: torch.Tensor
    right: torch.Tensor
    middle: torch.Tensor
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.middle.shape[0]

    def to(self, dtype: torch.dtype) -> TripletBatch:
        """Cast the three tensors."""
        return TripletBatch(
            self.left.to(dtype),
            self.right.to(dtype),
            self.middle.to(dtype),
            self.ids,
        )


def stack_triplets(
    triplets: Sequence[ViewTriplet],
    dtype: torch.dtype = torch.float32,
) -> TripletBatch:
    """Batch triplets into NCHW tensors.

    Raises
    ------
    ValueError
        On an empty sequence.

    """
    if not triplets:
        error_message = "cannot stack an empty list of triplets"
        raise ValueError(error_message)

    def stack(name: str) -> torch.Tensor:
        views = [to_tensor(getattr(t, name)) for t in triplets]
        return torch.stack(views).to(dtype)

    return TripletBatch(
        left=stack("left"),
        right=stack("right"),
        middle=stack("middle"),
        ids=tuple(t.id for t in triplets),
    )


@dataclass(frozen=True)
class ManifestEntry:
    """Files of one triplet."""

    id: str
    left: str
    middle: str
    right: str
    angles: dict[str, float] | None = None


@dataclass
class DatasetManifest:
    """All triplets of one split, ordered by id."""

    root: str
    split: str
    resolution: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Refuse duplicate ids."""
        ids = [entry.id for entry in self.entries]
        if len(ids) != len(set(ids)):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            error_message = f"duplicate triplet ids: {duplicates}"
            raise DatasetError(error_message)

    def __len__(self) -> int:
        return len(self.entries)

    def check_paths(self) -> None:
        """Raise DatasetError naming the first triplet with a missing file."""
        for entry in self.entries:
            for view in VIEWS:
                if not Path(getattr(entry, view)).is_file():
                    error_message = f"{entry.id}: missing {view} view"
                    raise DatasetError(error_message)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> DatasetManifest:
        raw = json.loads(text)
        raw["entries"] = [ManifestEntry(**e) for e in raw["entries"]]
        return cls(**raw)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    """Cache a manifest as JSON, written atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(manifest.to_json(), encoding="utf-8")
    tmp.replace(path)
    return path


def read_manifest(path: Path | str) -> DatasetManifest:
    """Load a cached manifest and check that its files still exist."""
    manifest = DatasetManifest.from_json(Path(path).read_text("utf-8"))
    manifest.check_paths()
    return manifest


def _read_angles(directory: Path) -> dict[str, float] | None:
    path = directory / "angles.json"
    if not path.is_file():
        return None
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return {view: float(raw[view]) for view in VIEWS}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        error_message = f"{directory.name}: malformed angles.json"
        raise DatasetError(error_message) from err


def _triplet_entries(split_dir: Path) -> list[ManifestEntry]:
    entries = []
    for directory in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        paths = {view: directory / f"{view}.png" for view in VIEWS}
        for view, path in paths.items():
            if not path.is_file():
                error_message = f"{directory.name}: missing {view} view"
                raise DatasetError(error_message)
        entries.append(
            ManifestEntry(
                id=directory.name,
                angles=_read_angles(directory),
                **{view: os.fspath(path) for view, path in paths.items()},
            ),
        )
    return entries


def _sequence_entries(split_dir: Path, seed: int) -> list[ManifestEntry]:
    rng = np.random.default_rng(seed)
    entries = []
    for sequence in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        frames = sorted(sequence.glob("*.png"))
        for t in range(1, len(frames) - 1):
            reach = min(MAX_FRAME_OFFSET, t, len(frames) - 1 - t)
            k = int(rng.integers(1, reach + 1))
            entries.append(
                ManifestEntry(
                    id=f"{sequence.name}_{frames[t].stem}",
                    left=os.fspath(frames[t - k]),
                    middle=os.fspath(frames[t]),
                    right=os.fspath(frames[t + k]),
                ),
            )
    return entries


def load_manifest(
    root: Path | str,
    split: str,
    resolution: int = 224,
    layout: str = "triplet",
    seed: int = 0,
) -> DatasetManifest:
    """Enumerate the triplets of a split.

    Parameters
    ----------
    root:
        Dataset root.
    split:
        ``train`` or ``test``.
    resolution:
        Size the triplets will be preprocessed to.
    layout:
        ``triplet`` or ``sequence`` (see the module docstring).
    seed:
        Seed of the frame offsets of the sequence layout.

    Raises
    ------
    DatasetError
        If the split directory is missing, a view is missing, or the
        split is empty.

    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        error_message = f"no {split} split under {root}"
        raise DatasetError(error_message)
    match layout:
        case "triplet":
            entries = _triplet_entries(split_dir)
        case "sequence":
            entries = _sequence_entries(split_dir, seed)
        case _:
            error_message = f"unknown layout {layout!r}"
            raise DatasetError(error_message)
    if not entries:
        error_message = f"the {split} split under {root} is empty"
        raise DatasetError(error_message)
    entries.sort(key=lambda entry: entry.id)
    _logger.info("Found %d %s triplets in %s", len(entries), split, root)
    return DatasetManifest(os.fspath(root), split, resolution, entries)


class TripletDataset(Dataset):
    """Load and preprocess the triplets of a manifest on demand."""

    def __init__(
        self,
        manifest: DatasetManifest,
        interpolation: str = "bilinear",
    ) -> None:
        self.manifest = manifest
        self.interpolation = interpolation

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, index: int) -> ViewTriplet:
        entry = self.manifest.entries[index]
        views = {}
        for view in VIEWS:
            try:
                raw = read_image(getattr(entry, view))
            except OSError as err:
                error_message = f"{entry.id}: unreadable {view} view"
                raise DatasetError(error_message) from err
            views[view] = preprocess(
                raw, self.manifest.resolution, self.interpolation
            )
        return ViewTriplet(id=entry.id, angles=entry.angles, **views)
