"""Volumetric data model: typed volumes, I/O, resampling, and FOV cropping.

A :class:`Volume` couples a 3-D voxel array (index order ``(x, y, z)``) with
its world geometry. World coordinates of voxel ``(i, j, k)`` are
``origin + direction @ (spacing * (i, j, k))``; voxel centers sit on the grid
points. All volumes of one patient are expected to share a grid; operations
that need co-registration validate it.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import nifti
from .errors import (
    DegenerateInputError,
    GlioradError,
    UnsupportedGeometryError,
    UsageError,
)

_GEOM_ATOL = 1e-5


@dataclass
class Volume:
    """A scalar volume with world geometry.

    kind is one of ``raw`` (native intensities), ``standardized``
    (z-scored intensities), or ``label`` (non-negative integer codes).
    """

    voxels: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind: str = "raw"

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise UnsupportedGeometryError(
                f"volume must be 3-D with positive dims, got shape {self.voxels.shape}"
            )
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise UnsupportedGeometryError(f"spacing must be 3 positive floats, got {self.spacing}")
        self.origin = tuple(float(o) for o in self.origin)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        if self.direction.shape != (3, 3) or not np.allclose(
            self.direction.T @ self.direction, np.eye(3), atol=1e-6
        ):
            raise UnsupportedGeometryError("direction must be a 3x3 orthonormal matrix")
        if self.kind not in ("raw", "standardized", "label"):
            raise UsageError(f"unknown volume kind {self.kind!r}")
        if self.kind == "label":
            if not np.issubdtype(self.voxels.dtype, np.integer):
                raise UsageError("label volumes must hold integer voxels")
            if self.voxels.min() < 0:
                raise UsageError("label volumes must be non-negative")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.voxels.shape

    @property
    def voxel_volume(self) -> float:
        """Physical volume of one voxel in mm^3."""
        return float(np.prod(self.spacing))

    def with_voxels(self, voxels: np.ndarray, kind: str | None = None) -> "Volume":
        """Same grid, new payload."""
        return dataclasses.replace(self, voxels=voxels, kind=kind or self.kind)

    def same_grid(self, other: "Volume") -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=_GEOM_ATOL)
            and np.allclose(self.origin, other.origin, atol=_GEOM_ATOL)
            and np.allclose(self.direction, other.direction, atol=_GEOM_ATOL)
        )


def require_same_grid(volumes: Sequence[Volume], what: str = "volumes") -> None:
    ref = volumes[0]
    for v in volumes[1:]:
        if not ref.same_grid(v):
            raise UnsupportedGeometryError(f"{what} are not on a common grid")


def load_volume(path: str, kind: str = "raw") -> Volume:
    """Load a NIfTI-1 volume from ``path``.

    Slope/intercept scaling is applied; label volumes keep integer dtypes.
    """
    if not os.path.exists(path):
        raise GlioradError(f"no such file: {path}")
    data, spacing, origin, direction = nifti.read_nifti(path)
    if kind == "label":
        if not np.issubdtype(data.dtype, np.integer):
            rounded = np.rint(data)
            if not np.allclose(data, rounded, atol=1e-6):
                raise UsageError(f"{path}: non-integer payload loaded as label volume")
            data = rounded.astype(np.int16)
    return Volume(data, spacing, origin, direction, kind=kind)


def save_volume(vol: Volume, path: str) -> None:
    """Write ``vol`` as single-file NIfTI-1 (int16 for labels, float32 otherwise)."""
    if vol.kind == "label":
        if vol.voxels.max(initial=0) > np.iinfo(np.int16).max:
            raise UsageError("label codes exceed int16 range")
        payload = vol.voxels.astype(np.int16)
    else:
        payload = vol.voxels.astype(np.float32)
    nifti.write_nifti(path, payload, vol.spacing, vol.origin, vol.direction)


def resample(vol: Volume, new_spacing: Sequence[float], mode: str = "linear") -> Volume:
    """Resample onto an axis-aligned grid with ``new_spacing``, anchored at the origin.

    The output grid covers the input physical extent (voxel-center span plus
    the trailing half voxel). Sampling happens in world coordinates; points
    outside the input extent take the nearest in-extent value. Label volumes
    must use nearest interpolation, which never invents label values.
    """
    new_spacing = tuple(float(s) for s in new_spacing)
    if any(s <= 0 for s in new_spacing):
        raise UsageError(f"target spacing must be positive, got {new_spacing}")
    if mode not in ("linear", "nearest"):
        raise UsageError(f"mode must be 'linear' or 'nearest', got {mode!r}")
    if vol.kind == "label" and mode != "nearest":
        raise UsageError("label volumes must be resampled with mode='nearest'")

    old = np.asarray(vol.spacing)
    new = np.asarray(new_spacing)
    n_out = np.maximum(1, np.ceil(np.asarray(vol.shape) * old / new - 1e-9).astype(int))

    # Shared origin and direction mean index spaces relate by a pure scale.
    axes = [np.arange(n) * new[a] / old[a] for a, n in enumerate(n_out)]
    coords = np.meshgrid(*axes, indexing="ij")
    order = 1 if mode == "linear" else 0
    out = ndimage.map_coordinates(
        vol.voxels.astype(np.float64, copy=False), coords, order=order, mode="nearest"
    )
    if vol.kind == "label" or (np.issubdtype(vol.voxels.dtype, np.integer) and mode == "nearest"):
        out = np.rint(out).astype(vol.voxels.dtype)
    else:
        out = out.astype(np.float32)
    return Volume(out, new_spacing, vol.origin, vol.direction, kind=vol.kind)


@dataclass(frozen=True)
class CropBox:
    """Half-open voxel index box ``[start, stop)`` on the source grid."""

    start: Tuple[int, int, int]
    stop: Tuple[int, int, int]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.start, self.stop))


def crop_to_brain_fov(
    volumes: Mapping[str, Volume],
    brain_masks: Sequence[Volume],
    margin_mm: float = 3.0,
    grid_size: int = 160,
    grid_spacing: float = 1.2875,
) -> Tuple[CropBox, Dict[str, Volume]]:
    """Crop to the union of brain masks plus a margin and resample to a cube grid.

    The crop box is the bounding box of the union mask expanded by
    ``margin_mm`` (converted per-axis to voxels, rounded up) and clipped to
    the volume. Each cropped volume is then sampled onto an isotropic
    ``grid_size^3`` grid at ``grid_spacing`` mm, with the crop centered in the
    target field of view and out-of-crop samples set to zero. Images use
    linear interpolation, label volumes nearest.
    """
    vols = list(volumes.values())
    require_same_grid(vols + list(brain_masks), "volumes and brain masks")
    union = np.zeros(vols[0].shape, dtype=bool)
    for m in brain_masks:
        union |= m.voxels > 0
    if not union.any():
        raise DegenerateInputError("union of brain masks is empty")

    spacing = np.asarray(vols[0].spacing)
    idx = np.nonzero(union)
    lo = np.array([a.min() for a in idx])
    hi = np.array([a.max() + 1 for a in idx])
    pad = np.ceil(margin_mm / spacing - 1e-9).astype(int)
    lo = np.maximum(lo - pad, 0)
    hi = np.minimum(hi + pad, np.asarray(union.shape))
    box = CropBox(tuple(int(v) for v in lo), tuple(int(v) for v in hi))

    crop_shape = np.asarray(box.shape)
    fov = grid_size * grid_spacing
    # Target sample k sits at world offset (k + 0.5) * grid_spacing - fov / 2
    # from the crop center; convert to source voxel indices inside the crop.
    center = (crop_shape - 1) / 2.0
    axes = [
        center[a] + ((np.arange(grid_size) + 0.5) * grid_spacing - fov / 2.0) / spacing[a]
        for a in range(3)
    ]
    coords = np.meshgrid(*axes, indexing="ij")

    out: Dict[str, Volume] = {}
    sl = tuple(slice(a, b) for a, b in zip(box.start, box.stop))
    new_origin = tuple(
        float(o + d) for o, d in zip(vols[0].origin, np.asarray(box.start) * spacing)
    )
    for name, vol in volumes.items():
        cropped = vol.voxels[sl]
        order = 0 if vol.kind == "label" else 1
        sampled = ndimage.map_coordinates(
            cropped.astype(np.float64, copy=False), coords, order=order, mode="constant", cval=0.0
        )
        if vol.kind == "label":
            sampled = np.rint(sampled).astype(vol.voxels.dtype)
        else:
            sampled = sampled.astype(np.float32)
        out[name] = Volume(
            sampled,
            (grid_spacing,) * 3,
            new_origin,
            vols[0].direction,
            kind=vol.kind,
        )
    return box, out


@dataclass
class SegmentationSet:
    """Per-patient masks: whole brain plus the three tumor compartments.

    ``edema`` is label 1, ``et`` (enhancing tumor) label 2, and ``net``
    (non-enhancing tumor core) label 3 in the source label map. All masks are
    binary volumes on one grid; the tumor compartments are pairwise disjoint.
    """

    patient_id: str
    brain: Volume
    edema: Volume
    et: Volume
    net: Volume

    def __post_init__(self):
        masks = [self.brain, self.edema, self.et, self.net]
        require_same_grid(masks, f"masks of {self.patient_id}")
        for m in masks:
            if m.kind != "label":
                raise UsageError("segmentation masks must be label volumes")
            if m.voxels.max(initial=0) > 1:
                raise UsageError("segmentation masks must be binary")
        overlap = (
            self.edema.voxels.astype(np.int32)
            + self.et.voxels.astype(np.int32)
            + self.net.voxels.astype(np.int32)
        )
        if overlap.max(initial=0) > 1:
            raise UsageError(f"tumor compartments of {self.patient_id} overlap")

    @classmethod
    def from_label_map(cls, patient_id: str, labels: Volume, brain: Volume) -> "SegmentationSet":
        """Split a 1/2/3 label map into compartment masks."""
        if labels.kind != "label":
            raise UsageError("from_label_map expects a label volume")
        lab = labels.voxels
        unknown = np.setdiff1d(np.unique(lab), [0, 1, 2, 3])
        if unknown.size:
            raise UsageError(f"unexpected label codes {unknown.tolist()} in {patient_id}")

        def mask(code: int) -> Volume:
            return labels.with_voxels((lab == code).astype(np.uint8), kind="label")

        return cls(patient_id, brain, mask(1), mask(2), mask(3))

    @property
    def tumor_mask(self) -> np.ndarray:
        return (self.edema.voxels > 0) | (self.et.voxels > 0) | (self.net.voxels > 0)

    @property
    def has_all_primary_rois(self) -> bool:
        """True when every compartment is non-empty (extraction precondition)."""
        return bool(
            self.edema.voxels.any() and self.et.voxels.any() and self.net.voxels.any()
        )
