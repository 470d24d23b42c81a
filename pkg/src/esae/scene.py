"""Synthetic detection streams standing in for a camera + detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .channel import make_rng
from .errors import ConfigurationError
from .sakp import Detection, FrameDetections


@dataclass(frozen=True)
class SceneConfig:
    mean_objects: float = 6.0
    num_classes: int = 80
    conf_range: tuple[float, float] = (0.25, 1.0)
    size_range: tuple[float, float] = (0.02, 0.3)
    # optional class frequencies (e.g. COCO instance counts); uniform if None
    class_weights: Sequence[float] | None = None

    def __post_init__(self):
        if self.mean_objects < 0:
            raise ConfigurationError("mean_objects must be >= 0")
        if self.class_weights is not None and len(self.class_weights) != self.num_classes:
            raise ConfigurationError("class_weights must have one entry per class")


def generate_frame(rng: np.random.Generator, index: int, scene: SceneConfig) -> FrameDetections:
    n = rng.poisson(scene.mean_objects)
    if scene.class_weights is None:
        classes = rng.integers(scene.num_classes, size=n)
    else:
        w = np.asarray(scene.class_weights, dtype=float)
        classes = rng.choice(scene.num_classes, size=n, p=w / w.sum())
    lo, hi = scene.conf_range
    slo, shi = scene.size_range
    dets = tuple(
        Detection(int(c), float(rng.uniform(lo, hi)), float(rng.random()), float(rng.random()),
                  float(rng.uniform(slo, shi)), float(rng.uniform(slo, shi)))
        for c in classes
    )
    return FrameDetections(index, dets)


def generate_scene(n_frames: int, seed, scene: SceneConfig = SceneConfig(),
                   start_index: int = 0) -> Iterator[FrameDetections]:
    rng = make_rng(seed)
    for i in range(n_frames):
        yield generate_frame(rng, start_index + i, scene)
