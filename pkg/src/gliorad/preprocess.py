"""Intensity standardization, ROI combination, and gray-level discretization.

Standardization is tumor-aware: the reference statistics come from healthy
brain tissue (brain mask minus every tumor compartment), then the whole
volume is z-scored against them. Downstream feature extraction shifts the
standardized intensities by +10 and discretizes with a fixed bin width of
0.3125 anchored at the ROI minimum, which turns a typical standardized range
of ~20 into ~64 gray levels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateInputError, UsageError
from .volume import SegmentationSet, Volume

BIN_WIDTH = 0.3125
INTENSITY_SHIFT = 10.0


@dataclass(frozen=True)
class RoiSpec:
    """A region built as the union of tumor compartment labels."""

    name: str
    labels: Tuple[int, ...]


#: The six regions features are extracted from, in report order.
ROI_SPECS: Tuple[RoiSpec, ...] = (
    RoiSpec("ROI_1", (1,)),        # edema
    RoiSpec("ROI_2", (2,)),        # enhancing tumor
    RoiSpec("ROI_3", (3,)),        # non-enhancing tumor core
    RoiSpec("ROI_1-2", (1, 2)),
    RoiSpec("ROI_2-3", (2, 3)),
    RoiSpec("ROI_1-2-3", (1, 2, 3)),
)


def combine_rois(seg: SegmentationSet, spec: RoiSpec) -> Volume:
    """Union of the compartments named by ``spec`` as a binary label volume.

    Every constituent compartment must be non-empty; patients missing one are
    excluded upstream, so an empty constituent here is an error.
    """
    parts = {1: seg.edema, 2: seg.et, 3: seg.net}
    if not spec.labels or any(c not in parts for c in spec.labels):
        raise UsageError(f"RoiSpec labels must be drawn from {{1,2,3}}, got {spec.labels}")
    mask = np.zeros(seg.brain.shape, dtype=np.uint8)
    for code in spec.labels:
        part = parts[code].voxels
        if not part.any():
            raise DegenerateInputError(
                f"{seg.patient_id}: constituent label {code} of {spec.name} is empty"
            )
        mask |= part.astype(np.uint8)
    return seg.brain.with_voxels(mask, kind="label")


@dataclass(frozen=True)
class StandardizationStats:
    mean: float
    std: float
    n_healthy: int


def zscore_standardize(img: Volume, seg: SegmentationSet) -> Tuple[Volume, StandardizationStats]:
    """Z-score ``img`` against healthy-brain statistics.

    Healthy brain is the brain mask minus edema, enhancing tumor, and core.
    The mean and population standard deviation over those voxels standardize
    every voxel of the volume, so the result is invariant to affine intensity
    rescaling of the input.
    """
    if img.kind == "label":
        raise UsageError("cannot standardize a label volume")
    if not img.same_grid(seg.brain):
        raise UsageError("image and segmentation are not on a common grid")
    healthy = (seg.brain.voxels > 0) & ~seg.tumor_mask
    n = int(healthy.sum())
    if n == 0:
        raise DegenerateInputError("no healthy-brain voxels to standardize against")
    values = img.voxels[healthy].astype(np.float64)
    mean = float(values.mean())
    std = float(values.std())  # population std
    if std < 1e-12:
        raise DegenerateInputError("healthy-brain intensities have zero variance")
    out = (img.voxels.astype(np.float64) - mean) / std
    return img.with_voxels(out, kind="standardized"), StandardizationStats(mean, std, n)


def discretize_values(values: np.ndarray, bin_width: float = BIN_WIDTH) -> Tuple[np.ndarray, int]:
    """Fixed-bin-width levels for a flat intensity array, anchored at its minimum.

    level = floor((value - min) / bin_width) + 1, so the number of levels is
    floor(range / bin_width) + 1.
    """
    if bin_width <= 0:
        raise UsageError(f"bin width must be positive, got {bin_width}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateInputError("cannot discretize an empty value set")
    levels = np.floor((values - values.min()) / bin_width).astype(np.int32) + 1
    return levels, int(levels.max())


def shift_and_discretize(
    img: Volume,
    roi: Volume,
    bin_width: float = BIN_WIDTH,
    shift: float = INTENSITY_SHIFT,
) -> Tuple[Volume, int]:
    """Map ROI voxels to integer gray levels with a fixed bin width.

    Intensities are shifted by ``shift`` first, then level
    ``floor((value - roi_min) / bin_width) + 1`` is assigned, so the ROI
    minimum always lands in level 1 and the number of levels is
    ``floor(range / bin_width) + 1``. Voxels outside the ROI get level 0.

    Returns the level volume and the highest assigned level.
    """
    if img.kind == "label":
        raise UsageError("discretization expects an intensity volume")
    if not img.same_grid(roi):
        raise UsageError("image and ROI are not on a common grid")
    inside = roi.voxels > 0
    if not inside.any():
        raise DegenerateInputError("ROI is empty")
    shifted = img.voxels[inside].astype(np.float64) + shift
    levels_in, n_levels = discretize_values(shifted, bin_width)
    levels = np.zeros(img.shape, dtype=np.int32)
    levels[inside] = levels_in
    return img.with_voxels(levels, kind="label"), n_levels
