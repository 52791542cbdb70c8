"""
GeoFlow: Benchmark Datasets
===========================
Two-class planar datasets for the ResNet experiments:
1. Two interleaved spirals
2. Two concentric noisy circles

Every dataset is a pure function of (kind, size, seed, split).
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from utils.errors import UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

DATASET_KINDS = ("spirals", "circles")
SPLITS = ("train", "test")

SPIRAL_TURNS = 3.0 * np.pi
SPIRAL_NOISE = 0.02
CIRCLE_RADII = (0.5, 1.0)
CIRCLE_NOISE = 0.05


@dataclass(frozen=True)
class Dataset:
    """Inputs (N, 2) with binary labels (N,)."""
    kind: str
    inputs: np.ndarray
    labels: np.ndarray
    seed: int
    split: str = "train"

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def class_counts(self) -> Tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.inputs[:, 0],
            "y": self.inputs[:, 1],
            "label": self.labels.astype(int),
        })

    def permuted(self, order: np.ndarray) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.kind, self.inputs[order], self.labels[order], self.seed, self.split)


def _class_sizes(n: int) -> Tuple[int, int]:
    half = n // 2
    return n - half, half


def _spiral_points(rng: np.random.Generator, n: int, label: int) -> np.ndarray:
    t = rng.uniform(0.0, SPIRAL_TURNS, size=n)
    r = 0.1 + 0.9 * t / SPIRAL_TURNS
    angle = t + label * np.pi
    points = np.column_stack([r * np.cos(angle), r * np.sin(angle)])
    return points + rng.normal(0.0, SPIRAL_NOISE, size=points.shape)


def _circle_points(rng: np.random.Generator, n: int, label: int) -> np.ndarray:
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radius = CIRCLE_RADII[label]
    points = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return points + rng.normal(0.0, CIRCLE_NOISE, size=points.shape)


_GENERATORS = {"spirals": _spiral_points, "circles": _circle_points}


def generate_dataset(kind: str, n_per_split: int, seed: int, split: str = "train") -> Dataset:
    """
    Generate a balanced two-class dataset.

    Args:
        kind: 'spirals' or 'circles'
        n_per_split: Number of points in the split
        seed: Seed of the generator
        split: 'train' or 'test'; the splits draw from independent streams

    Returns:
        Dataset with ceil(n/2) points of class 0 and floor(n/2) of class 1
    """
    if kind not in _GENERATORS:
        raise UsageError(f"unknown dataset kind '{kind}', expected one of {list(DATASET_KINDS)}")
    if split not in SPLITS:
        raise UsageError(f"unknown split '{split}', expected one of {list(SPLITS)}")
    n = int(n_per_split)
    if n <= 0:
        raise UsageError(f"dataset size must be positive, got {n_per_split}")

    rng = np.random.default_rng([int(seed), SPLITS.index(split)])
    n0, n1 = _class_sizes(n)
    make = _GENERATORS[kind]
    inputs = np.concatenate([make(rng, n0, 0), make(rng, n1, 1)])
    labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])

    order = rng.permutation(n)
    logger.debug(f"[OK] {kind}/{split}: {n0} + {n1} points (seed {seed})")
    return Dataset(kind, inputs[order], labels[order], int(seed), split)


def generate_splits(kind: str, n_per_split: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Train and test splits of the same size."""
    return (generate_dataset(kind, n_per_split, seed, "train"),
            generate_dataset(kind, n_per_split, seed, "test"))
