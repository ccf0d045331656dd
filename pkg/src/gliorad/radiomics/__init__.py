"""107-feature extraction per (modality, ROI) and the patient-level bundle.

A patient yields 4 modalities x 6 ROIs = 24 feature sets, 2568 values total,
named ``<modality>/<ROI>/<class>_<Feature>``. Shape features depend only on
geometry, so one ROI's shape block is shared verbatim across modalities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .. import preprocess
from ..errors import DegenerateInputError, UsageError
from ..preprocess import ROI_SPECS, INTENSITY_SHIFT, combine_rois
from ..volume import SegmentationSet, Volume, resample
from . import features as F
from .matrices import TextureMatrices, build_texture_matrices

MODALITIES: Tuple[str, ...] = ("T1", "T1c", "T2", "FLAIR")

_CLASS_BLOCKS = (
    ("firstorder", F.FIRSTORDER_NAMES),
    ("shape", F.SHAPE_NAMES),
    ("glcm", F.GLCM_NAMES),
    ("glrlm", F.GLRLM_NAMES),
    ("glszm", F.GLSZM_NAMES),
    ("gldm", F.GLDM_NAMES),
    ("ngtdm", F.NGTDM_NAMES),
)


def feature_names() -> Tuple[str, ...]:
    """The frozen 107 ``<class>_<Feature>`` names of one feature set, in order."""
    return tuple(f"{cls}_{name}" for cls, names in _CLASS_BLOCKS for name in names)


def full_feature_names() -> Tuple[str, ...]:
    """All 2568 patient-level feature names, modality-major then ROI."""
    per_set = feature_names()
    return tuple(
        f"{mod}/{roi.name}/{feat}"
        for mod in MODALITIES
        for roi in ROI_SPECS
        for feat in per_set
    )


def compute_feature_vector(
    img: Volume,
    roi: Volume,
    modality_tag: str,
    roi_tag: str,
    _shape_block: Optional[Dict[str, float]] = None,
) -> Dict[str, float]:
    """All 107 features of one (image, ROI) pair, fully-qualified names.

    The image must already be standardized and on the 1 mm grid shared with
    the ROI. ``_shape_block`` lets the patient-level driver reuse the
    geometry-only shape block across modalities.
    """
    if img.kind == "label":
        raise UsageError("feature extraction expects an intensity volume")
    if not img.same_grid(roi):
        raise UsageError("image and ROI are not on a common grid")
    mask = roi.voxels > 0
    if not mask.any():
        raise DegenerateInputError(f"{modality_tag}/{roi_tag}: ROI is empty")

    idx = np.nonzero(mask)
    sl = tuple(slice(int(a.min()), int(a.max()) + 1) for a in idx)
    cmask = mask[sl]
    cimg = img.voxels[sl]

    values = cimg[cmask].astype(np.float64) + INTENSITY_SHIFT
    levels_in, n_levels = preprocess.discretize_values(values)
    levels = np.zeros(cmask.shape, dtype=np.int32)
    levels[cmask] = levels_in
    tm = build_texture_matrices(levels, n_levels)
    level_counts = np.bincount(levels_in.astype(np.int64), minlength=n_levels + 1)[1:]

    blocks = {
        "firstorder": F.firstorder_features(values, levels_in, img.voxel_volume),
        "shape": _shape_block or F.shape_features(cmask, img.spacing),
        "glcm": F.glcm_features(tm.glcm, level_counts),
        "glrlm": F.glrlm_features(tm.glrlm, tm.n_voxels),
        "glszm": F.glszm_features(tm.glszm, tm.n_voxels),
        "gldm": F.gldm_features(tm.gldm, tm.n_voxels),
        "ngtdm": F.ngtdm_features(tm.ngtdm_n, tm.ngtdm_s),
    }
    out: Dict[str, float] = {}
    for cls, names in _CLASS_BLOCKS:
        block = blocks[cls]
        for name in names:
            out[f"{modality_tag}/{roi_tag}/{cls}_{name}"] = float(block[name])
    return out


@dataclass
class ExtractionResult:
    """Per-patient outcome: either the full 2568-feature map or an exclusion."""

    patient_id: str
    features: Optional[Dict[str, float]]
    excluded: bool = False
    reason: str = ""


def extract_patient_features(
    contrasts: Mapping[str, Volume],
    seg: SegmentationSet,
    target_spacing: float = 1.0,
) -> ExtractionResult:
    """Extract the 24 x 107 feature sets of one patient.

    Standardized contrasts and masks are resampled to an isotropic
    ``target_spacing`` grid (linear for images, nearest for masks) before
    extraction. Patients missing any primary tumor compartment are flagged
    excluded with no partial output.
    """
    missing = [m for m in MODALITIES if m not in contrasts]
    if missing:
        raise UsageError(f"{seg.patient_id}: missing contrasts {missing}")

    if not seg.has_all_primary_rois:
        empty = [
            name
            for name, m in (("edema", seg.edema), ("ET", seg.et), ("NET", seg.net))
            if not m.voxels.any()
        ]
        return ExtractionResult(seg.patient_id, None, True, f"empty compartments: {', '.join(empty)}")

    tsp = (target_spacing,) * 3
    if np.allclose(contrasts[MODALITIES[0]].spacing, tsp, atol=1e-9):
        imgs = {m: contrasts[m] for m in MODALITIES}
        rseg = seg
    else:
        imgs = {m: resample(contrasts[m], tsp, mode="linear") for m in MODALITIES}
        rseg = SegmentationSet(
            seg.patient_id,
            resample(seg.brain, tsp, mode="nearest"),
            resample(seg.edema, tsp, mode="nearest"),
            resample(seg.et, tsp, mode="nearest"),
            resample(seg.net, tsp, mode="nearest"),
        )
        if not rseg.has_all_primary_rois:
            return ExtractionResult(
                seg.patient_id, None, True, "a compartment vanished under resampling"
            )

    out: Dict[str, float] = {}
    rois = {spec.name: combine_rois(rseg, spec) for spec in ROI_SPECS}
    shape_blocks = {
        name: F.shape_features(vol.voxels > 0, vol.spacing) for name, vol in rois.items()
    }
    for mod in MODALITIES:
        for spec in ROI_SPECS:
            out.update(
                compute_feature_vector(
                    imgs[mod], rois[spec.name], mod, spec.name, shape_blocks[spec.name]
                )
            )
    return ExtractionResult(seg.patient_id, out)


__all__ = [
    "MODALITIES",
    "TextureMatrices",
    "build_texture_matrices",
    "compute_feature_vector",
    "extract_patient_features",
    "ExtractionResult",
    "feature_names",
    "full_feature_names",
]
