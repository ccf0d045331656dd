"""Loading exported tensors and encoding clinical covariates.

Consumes the pipeline's export stage: one ``{patient_id}.npy`` of shape
(4, D, D, D) with standardized contrasts plus ``{patient_id}_seg.npy``
with integer tumor labels, alongside the cohort CSV. The segmentation
rides as a fifth image channel. Clinical covariates become
[age (centered on 64, per decade), sex (female=1), MGMT (methylated=1,
unknown=0.5), IDH (mutant=1, unknown=0.5)] and the target is the
six-month outcome (1 = death within six months). Patients with unknown
outcome are skipped.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

_SEX = {"female": 1.0, "male": 0.0}
_MGMT = {"methylated": 1.0, "unmethylated": 0.0, "unknown": 0.5}
_IDH = {"mutant": 1.0, "wildtype": 0.0, "unknown": 0.5}


@dataclass(frozen=True)
class Sample:
    """One patient: five-channel image, clinical vector, binary label."""

    patient_id: str
    image: np.ndarray
    clinical: np.ndarray
    label: int
    center: str


def encode_clinical(row) -> np.ndarray:
    for field, table in (("sex", _SEX), ("mgmt", _MGMT), ("idh", _IDH)):
        if row[field] not in table:
            raise ValueError(f"{row['patient_id']}: unrecognized {field} {row[field]!r}")
    return np.array(
        [
            (float(row["age"]) - 64.0) / 10.0,
            _SEX[row["sex"]],
            _MGMT[row["mgmt"]],
            _IDH[row["idh"]],
        ],
        dtype=np.float32,
    )


def load_samples(export_dir: str, cohort_csv: str) -> List[Sample]:
    cohort = pd.read_csv(cohort_csv, dtype={"patient_id": str})
    samples = []
    for _, row in cohort.iterrows():
        if row["survival_6m"] == "unknown":
            continue
        img_path = os.path.join(export_dir, f"{row['patient_id']}.npy")
        seg_path = os.path.join(export_dir, f"{row['patient_id']}_seg.npy")
        if not (os.path.exists(img_path) and os.path.exists(seg_path)):
            raise FileNotFoundError(f"missing exported tensors for {row['patient_id']}")
        contrasts = np.load(img_path)
        seg = np.load(seg_path)
        if contrasts.ndim != 4 or contrasts.shape[0] != 4 or contrasts.shape[1:] != seg.shape:
            raise ValueError(
                f"{row['patient_id']}: expected (4, D, D, D) over matching labels, "
                f"got {contrasts.shape} / {seg.shape}"
            )
        image = np.concatenate(
            [contrasts.astype(np.float32), seg[None].astype(np.float32)]
        )
        samples.append(
            Sample(
                patient_id=str(row["patient_id"]),
                image=image,
                clinical=encode_clinical(row),
                label=int(row["survival_6m"] == "<=6m"),
                center=str(row["center"]),
            )
        )
    samples.sort(key=lambda s: s.patient_id)
    if not samples:
        raise ValueError(f"no usable patients under {export_dir}")
    return samples


def upsample_minority(samples: Sequence[Sample], seed: int) -> List[Sample]:
    """Duplicate minority-class samples until the classes balance.

    Training-set only; validation and test folds stay untouched.
    """
    labels = np.array([s.label for s in samples])
    if labels.min() == labels.max():
        return list(samples)
    rng = np.random.default_rng(seed)
    out = list(samples)
    minority = int(labels.sum() * 2 < len(labels))
    pool = [s for s in samples if s.label == minority]
    deficit = int(abs(len(labels) - 2 * len(pool)))
    out.extend(pool[i] for i in rng.integers(0, len(pool), deficit))
    return out


def collate(samples: Sequence[Sample]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in samples]))
    clinical = torch.from_numpy(np.stack([s.clinical for s in samples]))
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    return images, clinical, labels
