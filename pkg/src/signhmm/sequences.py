"""Core sequence types shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Modality(str, Enum):
    """One synchronized input stream."""

    RGB = "rgb"
    DEPTH = "depth"
    SKELETAL = "skeletal"
    CONCAT = "concat"


@dataclass(frozen=True)
class FeatureSequence:
    """A variable-length sequence of per-frame feature vectors.

    Attributes:
        modality: Which input stream the features came from.
        frames: Array of shape (T, d) with T >= 1; all values finite.
    """

    modality: Modality
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, d), got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be non-empty, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def as_frames(seq) -> np.ndarray:
    """Accept a FeatureSequence or a bare (T, d) array and return the array."""
    if isinstance(seq, FeatureSequence):
        return seq.frames
    frames = np.asarray(seq)
    if frames.ndim != 2:
        raise ValueError(f"expected a (T, d) array, got shape {frames.shape}")
    return frames
