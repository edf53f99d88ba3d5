"""Procedural view triplets with horizontal-shift parallax.

A scene is a gradient background at infinity plus a few flat shapes at
different depths. A camera moved sideways by ``offset`` sees each shape
shifted by ``round(offset * nearness)``: the nearest shape (nearness 1)
moves by exactly the offset, the background does not move. Shapes are
painted far to near so nearer ones occlude.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import auto

from scgn._compat import StrEnum

import numpy as np

from scgn.core.data import check_resolution
from scgn.pipeline.dataset import ViewTriplet

_logger = logging.getLogger("scgn.pipeline")

#: Objects per random scene, inclusive bounds.
MIN_OBJECTS, MAX_OBJECTS = 2, 4


class Shape(StrEnum):
    """Outline of a scene object."""

    rect = auto()
    circle = auto()


@dataclass(frozen=True)
class SceneObject:
    """A flat, single-colored shape.

    Parameters
    ----------
    shape:
        Outline.
    cx, cy:
        Centre in pixels as seen by the middle camera.
    size:
        Half width of a rectangle or radius of a circle, in pixels.
    color:
        RGB in [0, 255].
    nearness:
        Parallax factor in (0, 1]; 1 is the nearest depth.

    """

    shape: Shape
    cx: float
    cy: float
    size: float
    color: tuple[float, float, float]
    nearness: float = 1.0

    def __post_init__(self) -> None:
        """Nearness must lie in (0, 1]."""
        if not 0 < self.nearness <= 1:
            error_message = f"nearness must be in (0, 1], got {self.nearness}"
            raise ValueError(error_message)

    def mask(self, resolution: int, shift: int) -> np.ndarray:
        """Pixels covered when the object is moved right by ``shift``."""
        yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
        dx = xx - (self.cx + shift)
        dy = yy - self.cy
        if self.shape is Shape.circle:
            return dx**2 + dy**2 <= self.size**2
        return (np.abs(dx) <= self.size) & (np.abs(dy) <= self.size)


@dataclass(frozen=True)
class Scene:
    """Background gradient and objects."""

    resolution: int
    top: tuple[float, float, float]
    bottom: tuple[float, float, float]
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)


def render_scene(scene: Scene, offset: int) -> np.ndarray:
    """``H x W x 3`` float32 view in [0, 255] from a shifted camera.

    A positive ``offset`` moves every object to the right, which is what
    the left camera sees.
    """
    n = scene.resolution
    ramp = np.linspace(0.0, 1.0, n)[:, None, None]
    top = np.asarray(scene.top, dtype=np.float64)
    bottom = np.asarray(scene.bottom, dtype=np.float64)
    image = (1 - ramp) * top + ramp * bottom
    image = np.broadcast_to(image, (n, n, 3)).copy()
    for obj in sorted(scene.objects, key=lambda o: o.nearness):
        shift = round(offset * obj.nearness)
        image[obj.mask(n, shift)] = obj.color
    return image.astype(np.float32)


def random_scene(rng: np.random.Generator, resolution: int) -> Scene:
    """A scene whose nearest object has nearness exactly 1."""
    count = int(rng.integers(MIN_OBJECTS, MAX_OBJECTS + 1))
    nearness = np.sort(rng.uniform(0.2, 1.0, size=count))
    nearness[-1] = 1.0
    objects = tuple(
        SceneObject(
            shape=tuple(Shape)[int(rng.integers(len(Shape)))],
            cx=float(rng.uniform(0.25, 0.75) * resolution),
            cy=float(rng.uniform(0.25, 0.75) * resolution),
            size=float(rng.uniform(0.08, 0.2) * resolution),
            color=tuple(float(c) for c in rng.uniform(0, 255, size=3)),
            nearness=float(near),
        )
        for near in nearness
    )
    top, bottom = rng.uniform(0, 255, size=(2, 3))
    return Scene(
        resolution=resolution,
        top=tuple(float(c) for c in top),
        bottom=tuple(float(c) for c in bottom),
        objects=objects,
    )


def default_disparity(resolution: int) -> int:
    """Nearest-object shift, 1/16 of the image side."""
    return max(1, resolution // 16)


def synth_triplets(
    count: int,
    resolution: int,
    seed: int = 0,
    disparity: int | None = None,
) -> list[ViewTriplet]:
    """Deterministic triplets rendered from random scenes.

    Parameters
    ----------
    count:
        Number of triplets, at least one.
    resolution:
        Side length, a multiple of 16.
    seed:
        Seed of the scene generator.
    disparity:
        Shift d of the nearest object; left is rendered at +d and right
        at -d. Defaults to ``default_disparity(resolution)``.

    Raises
    ------
    ValueError
        On ``count < 1`` or an invalid resolution.

    """
    if count < 1:
        error_message = f"count must be >= 1, got {count}"
        raise ValueError(error_message)
    check_resolution(resolution)
    d = default_disparity(resolution) if disparity is None else disparity
    rng = np.random.default_rng(seed)
    triplets = []
    for index in range(count):
        scene = random_scene(rng, resolution)
        views = {
            name: render_scene(scene, offset) / 127.5 - 1.0
            for name, offset in (("left", d), ("middle", 0), ("right", -d))
        }
        triplets.append(
            ViewTriplet(
                id=f"synth_{index:04d}",
                **{k: v.astype(np.float32) for k, v in views.items()},
            ),
        )
    _logger.debug("Rendered %d synthetic triplets at %d px", count, resolution)
    return triplets
