"""
Synthetic moving-square videos for desk-scale search and training.

Each clip shows a 4x4 bright square moving one pixel per frame (up, down,
left or right, wrapping at the borders) over a dim noise background. The
square blinks with a period of 2 or 4 frames. The label combines direction
and period, so no single frame determines the class.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

SQUARE = 4
PERIODS = (2, 4)
# (dy, dx) for up, down, left, right.
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
NUM_TOY_CLASSES = len(DIRECTIONS) * len(PERIODS)
BACKGROUND_MAX = 0.1


@dataclass(frozen=True)
class ToyVideoSpec:
    frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 1
    num_classes: int = NUM_TOY_CLASSES
    train_samples: int = 800
    val_samples: int = 200
    test_samples: int = 200
    seed: int = 0

    def validate(self):
        if self.frames < 4:
            raise ValueError(f"temporal classes need T >= 4, got T={self.frames}")
        if self.num_classes != NUM_TOY_CLASSES:
            raise ValueError(f"the toy dataset has {NUM_TOY_CLASSES} classes, got num_classes={self.num_classes}")
        if self.height < SQUARE or self.width < SQUARE:
            raise ValueError(f"frames must be at least {SQUARE}x{SQUARE}, got {self.height}x{self.width}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        for name in ("train_samples", "val_samples", "test_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split
    num_classes: int

    @property
    def input_shape(self) -> Tuple[int, int, int, int]:
        return self.train.x.shape[1:]


def label_of(direction: int, period_index: int) -> int:
    return direction * len(PERIODS) + period_index


def render_clip(spec: ToyVideoSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    """Renders one T x Y x X x C clip of the given class."""
    direction, period_index = divmod(label, len(PERIODS))
    dy, dx = DIRECTIONS[direction]
    period = PERIODS[period_index]
    phase = int(rng.integers(period))
    y0, x0 = int(rng.integers(spec.height)), int(rng.integers(spec.width))

    clip = rng.uniform(0.0, BACKGROUND_MAX, size=(spec.frames, spec.height, spec.width, 1))
    offsets = np.arange(SQUARE)
    for t in range(spec.frames):
        if (t + phase) % period >= period / 2:
            continue
        rows = (y0 + dy * t + offsets) % spec.height
        cols = (x0 + dx * t + offsets) % spec.width
        clip[t, rows[:, None], cols[None, :], 0] = 1.0
    return np.repeat(clip, spec.channels, axis=-1)


def _generate_split(spec: ToyVideoSpec, samples: int, split_index: int, dtype) -> Split:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, split_index]))
    labels = np.arange(samples) % spec.num_classes
    rng.shuffle(labels)
    x = np.stack([render_clip(spec, int(label), rng) for label in labels]).astype(dtype)
    return Split(x, labels.astype(np.int64))


def generate_toy_dataset(spec: ToyVideoSpec, dtype=np.float64) -> Dataset:
    """
    Generates train/val/test splits with balanced labels.

    Each split draws from its own seed stream derived from (spec.seed, split),
    so splits never share samples and the output is a pure function of spec.
    """
    spec.validate()
    return Dataset(
        train=_generate_split(spec, spec.train_samples, 0, dtype),
        val=_generate_split(spec, spec.val_samples, 1, dtype),
        test=_generate_split(spec, spec.test_samples, 2, dtype),
        num_classes=spec.num_classes,
    )
