"""Synthetic glioblastoma worlds: phantom images, segmentations, survival tables.

Every pipeline stage is testable without clinical data. A ``WorldSpec`` fixes
the cohort makeup (center mix with per-center intensity offsets, demographic
distributions) and the outcome model (linear predictor over age, sex, MGMT,
IDH and a latent image factor; Weibull event times, so hazard ratios between
covariate levels are known exactly). ``image_signal`` controls how strongly
tumor texture encodes the latent factor; at 0 the images are pure noise with
respect to outcome.

The on-disk layout written by :func:`generate_cohort` is the one the rest of
the pipeline consumes: ``cohort.csv`` at the root and per-patient NIfTI files
under ``images/<patient_id>/`` (four contrasts, a brain mask, and a 1/2/3
label map for edema/enhancing/non-enhancing).
"""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Mapping, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._util import config_hash, dump_json, rng_for
from .errors import ConfigError, UsageError
from .radiomics import MODALITIES
from .tabular import (
    IDH_LEVELS,
    MGMT_LEVELS,
    SURVIVAL_CUTOFF_DAYS,
    CohortRecord,
    cohort_to_frame,
)
from .volume import SegmentationSet, Volume, save_volume, load_volume

__all__ = [
    "CenterSpec",
    "DEFAULT_CENTERS",
    "PatientProfile",
    "WorldSpec",
    "cohort_frame",
    "draw_profile",
    "generate_cohort",
    "generate_phantom",
    "read_patient_volumes",
]


@dataclass(frozen=True)
class CenterSpec:
    """One acquisition site: relative cohort share and raw-intensity offset."""

    name: str
    weight: float
    offset: float


#: Center mix with realistic size imbalance; offsets are additive raw-intensity
#: shifts representing scanner calibration differences.
DEFAULT_CENTERS: Tuple[CenterSpec, ...] = (
    CenterSpec("UPENN", 418.0, -6.0),
    CenterSpec("SPHN-1", 383.0, 0.0),
    CenterSpec("SPHN-2", 81.0, 5.0),
    CenterSpec("SPHN-3", 245.0, 8.0),
    CenterSpec("SPHN-4", 16.0, -4.0),
    CenterSpec("SPHN-5", 9.0, 3.0),
)

# Raw-intensity building blocks. Tissue bases are arbitrary scanner units;
# compartment contrasts are added on top inside the tumor (keyed by label:
# 1 edema, 2 enhancing, 3 non-enhancing core).
_TISSUE_BASE = {"T1": 95.0, "T1c": 100.0, "T2": 85.0, "FLAIR": 90.0}
_COMPARTMENT_CONTRAST = {
    "T1": {1: -10.0, 2: 5.0, 3: -15.0},
    "T1c": {1: -5.0, 2: 35.0, 3: -20.0},
    "T2": {1: 25.0, 2: 10.0, 3: 15.0},
    "FLAIR": {1: 30.0, 2: 10.0, 3: 12.0},
}
_BRAIN_NOISE = 6.0
_TUMOR_NOISE = 7.0
# Couplings from the latent image factor into texture: log-noise-scale and
# gradient slope. Benign per-patient jitter keeps both parameters varying
# even at image_signal 0 so their independence from outcome is observable.
_NOISE_COUPLING = 0.5
_NOISE_JITTER = 0.25
_GRADIENT_COUPLING = 3.5
_GRADIENT_JITTER = 1.2

_CALIBRATION_DRAWS = 20000


@dataclass(frozen=True)
class WorldSpec:
    """Complete recipe for one reproducible synthetic world.

    Outcome model: ``eta = beta_age*(age-64)/10 + beta_sex*female
    + beta_mgmt*methylated + beta_idh*mutant + beta_image*z`` with latent
    ``z ~ N(0,1)``; event times are Weibull with cumulative hazard
    ``(t/scale)^shape * exp(eta)``, the scale calibrated so the population
    6-month event probability hits ``target_prevalence``. Molecular effects
    use the true status; ``*_known_rate`` only masks what gets reported.
    """

    n: int
    centers: Tuple[CenterSpec, ...] = DEFAULT_CENTERS
    target_prevalence: float = 0.245
    beta_age: float = 0.4
    beta_sex: float = -0.25
    beta_mgmt: float = -0.45
    beta_idh: float = -0.5
    beta_image: float = 0.9
    image_signal: float = 0.0
    weibull_shape: float = 1.2
    censor_rate: float = 0.1
    female_rate: float = 0.36
    mgmt_methylated_rate: float = 0.41
    mgmt_known_rate: float = 0.68
    idh_wildtype_rate: float = 0.92
    idh_known_rate: float = 0.95
    side: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"world needs at least one patient, got n={self.n}")
        if not self.centers:
            raise ConfigError("world needs at least one center")
        if any(c.weight <= 0 for c in self.centers):
            raise ConfigError("center weights must be positive")
        if len({c.name for c in self.centers}) != len(self.centers):
            raise ConfigError("center names must be unique")
        if not 0.05 <= self.target_prevalence <= 0.6:
            raise ConfigError(
                f"target_prevalence {self.target_prevalence} outside the calibratable range [0.05, 0.6]"
            )
        for field in ("censor_rate", "female_rate", "mgmt_methylated_rate",
                      "mgmt_known_rate", "idh_wildtype_rate", "idh_known_rate"):
            v = getattr(self, field)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{field} must be in [0, 1], got {v}")
        if self.censor_rate >= 1.0:
            raise ConfigError("censor_rate must be below 1")
        if self.weibull_shape <= 0:
            raise ConfigError("weibull_shape must be positive")
        if self.image_signal < 0:
            raise ConfigError("image_signal must be non-negative")
        if self.side < 24:
            raise ConfigError("side must be at least 24 voxels to fit the nested regions")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["centers"] = [dataclasses.asdict(c) for c in self.centers]
        return d


@dataclass(frozen=True)
class PatientProfile:
    """Everything about one patient except the voxels.

    ``mgmt``/``idh`` are the true biological states driving outcome;
    ``mgmt_reported``/``idh_reported`` are what lands in the cohort table
    (possibly ``unknown``). ``t_event`` is the uncensored event time, so
    ``true_6m`` is defined for censored patients too.
    """

    index: int
    patient_id: str
    center: str
    age: float
    sex: str
    mgmt: str
    mgmt_reported: str
    idh: str
    idh_reported: str
    z_image: float
    tumor_noise_sigma: float
    tumor_gradient: float
    gradient_axis: Tuple[float, float, float]
    eta: float
    t_event: float
    os_days: float
    event: bool

    @property
    def true_6m(self) -> bool:
        return self.t_event <= SURVIVAL_CUTOFF_DAYS

    def record(self) -> CohortRecord:
        return CohortRecord(
            patient_id=self.patient_id,
            center=self.center,
            age=self.age,
            sex=self.sex,
            mgmt=self.mgmt_reported,
            idh=self.idh_reported,
            os_days=self.os_days,
            event=self.event,
        )


@lru_cache(maxsize=32)
def _center_assignment(spec: WorldSpec) -> Tuple[str, ...]:
    """Per-index center names: largest-remainder proportional counts, shuffled."""
    weights = np.array([c.weight for c in spec.centers], dtype=np.float64)
    shares = weights / weights.sum() * spec.n
    counts = np.floor(shares).astype(np.int64)
    remainder = spec.n - int(counts.sum())
    for j in np.argsort(-(shares - counts))[:remainder]:
        counts[j] += 1
    names = np.repeat([c.name for c in spec.centers], counts)
    rng_for(spec.seed, "centers").shuffle(names)
    return tuple(names.tolist())


def _draw_covariates(spec: WorldSpec, rng: np.random.Generator) -> dict:
    """Shared covariate draw; the calibration population uses the same code path."""
    age = float(rng.normal(64.0, 10.0))
    while not 19.0 <= age <= 90.0:
        age = float(rng.normal(64.0, 10.0))
    return {
        "age": age,
        "female": bool(rng.uniform() < spec.female_rate),
        "methylated": bool(rng.uniform() < spec.mgmt_methylated_rate),
        "mgmt_known": bool(rng.uniform() < spec.mgmt_known_rate),
        "wildtype": bool(rng.uniform() < spec.idh_wildtype_rate),
        "idh_known": bool(rng.uniform() < spec.idh_known_rate),
        "z_image": float(rng.standard_normal()),
    }


def _linear_predictor(spec: WorldSpec, cov: Mapping[str, object]) -> float:
    return (
        spec.beta_age * (float(cov["age"]) - 64.0) / 10.0
        + spec.beta_sex * float(cov["female"])
        + spec.beta_mgmt * float(cov["methylated"])
        + spec.beta_idh * (not cov["wildtype"])
        + spec.beta_image * float(cov["z_image"])
    )


@lru_cache(maxsize=32)
def _baseline_log_cumhaz(spec: WorldSpec) -> float:
    """log of the baseline cumulative hazard at 183 days.

    Solved by bisection on a large seeded draw of covariates so that the
    prevalence among patients with a KNOWN 6-month outcome equals the
    target. Censoring is simulated in the draw because it depletes the
    early-event side: a patient censored before day 183 has no outcome.
    Deterministic given the spec.
    """
    rng = rng_for(spec.seed, "calibration")
    etas = np.array(
        [_linear_predictor(spec, _draw_covariates(spec, rng)) for _ in range(_CALIBRATION_DRAWS)]
    )
    expo = rng.exponential(size=_CALIBRATION_DRAWS)
    censored = rng.uniform(size=_CALIBRATION_DRAWS) < spec.censor_rate
    frac = rng.uniform(0.15, 0.95, size=_CALIBRATION_DRAWS)

    def prevalence(c: float) -> float:
        scale = SURVIVAL_CUTOFF_DAYS * math.exp(-c / spec.weibull_shape)
        t = scale * (expo * np.exp(-etas)) ** (1.0 / spec.weibull_shape)
        early = ~censored & (t <= SURVIVAL_CUTOFF_DAYS)
        known = early | (np.where(censored, t * frac, t) > SURVIVAL_CUTOFF_DAYS)
        return float(early.sum() / known.sum())

    lo, hi = -12.0, 6.0
    if not prevalence(lo) <= spec.target_prevalence <= prevalence(hi):
        raise ConfigError("target_prevalence is unreachable for these coefficients")
    for _ in range(80):
        mid = (lo + hi) / 2.0
        if prevalence(mid) < spec.target_prevalence:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def draw_profile(spec: WorldSpec, index: int) -> PatientProfile:
    """Covariates, texture parameters, and survival for patient ``index``.

    Fully determined by ``(spec, spec.seed, index)``; phantom voxel noise
    comes from a separate stream so tables can be generated without images.
    """
    if not 0 <= index < spec.n:
        raise UsageError(f"patient index {index} outside [0, {spec.n})")
    rng = rng_for(spec.seed, "patient", index)
    cov = _draw_covariates(spec, rng)
    eta = _linear_predictor(spec, cov)

    noise_jitter = float(rng.standard_normal())
    gradient_jitter = float(rng.standard_normal())
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)

    c = _baseline_log_cumhaz(spec)
    scale = SURVIVAL_CUTOFF_DAYS * math.exp(-c / spec.weibull_shape)
    t_event = scale * (rng.exponential() * math.exp(-eta)) ** (1.0 / spec.weibull_shape)

    censored = rng.uniform() < spec.censor_rate
    follow_up = t_event * rng.uniform(0.15, 0.95) if censored else t_event
    os_days = max(1.0, float(round(follow_up)))

    sigma = _TUMOR_NOISE * math.exp(
        _NOISE_JITTER * noise_jitter + _NOISE_COUPLING * spec.image_signal * cov["z_image"]
    )
    gradient = (
        _GRADIENT_JITTER * gradient_jitter
        + _GRADIENT_COUPLING * spec.image_signal * cov["z_image"]
    )

    return PatientProfile(
        index=index,
        patient_id=f"GB-{index:04d}",
        center=_center_assignment(spec)[index],
        age=cov["age"],
        sex="female" if cov["female"] else "male",
        mgmt=MGMT_LEVELS[0] if cov["methylated"] else MGMT_LEVELS[1],
        mgmt_reported=(MGMT_LEVELS[0] if cov["methylated"] else MGMT_LEVELS[1])
        if cov["mgmt_known"] else "unknown",
        idh=IDH_LEVELS[0] if cov["wildtype"] else IDH_LEVELS[1],
        idh_reported=(IDH_LEVELS[0] if cov["wildtype"] else IDH_LEVELS[1])
        if cov["idh_known"] else "unknown",
        z_image=cov["z_image"],
        tumor_noise_sigma=sigma,
        tumor_gradient=gradient,
        gradient_axis=tuple(float(a) for a in axis),
        eta=eta,
        t_event=float(t_event),
        os_days=os_days,
        event=not censored,
    )


def _ellipsoid(shape: Tuple[int, int, int], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    rho = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return rho <= 1.0


def generate_phantom(
    spec: WorldSpec, index: int
) -> Tuple[Dict[str, Volume], SegmentationSet]:
    """Four raw contrasts plus segmentations for patient ``index``.

    Ellipsoidal brain, nested tumor shells (edema around enhancing around
    core, rendered as disjoint label regions). Tumor placement guarantees
    every compartment is non-empty and inside the brain. When
    ``image_signal > 0`` the tumor noise level and an intensity ramp across
    the tumor encode the patient's latent image factor. The per-center offset
    is added inside the tumor (and, halved, across the brain) on every
    contrast, with mild lesion-contrast and noise scalings derived from it
    completing the scanner signature.
    """
    profile = draw_profile(spec, index)
    rng = rng_for(spec.seed, "phantom", index)
    s = spec.side
    shape = (s, s, s)

    brain_radii = np.array([0.42, 0.38, 0.40]) * s
    brain_radii *= 1.0 + 0.04 * np.clip(rng.standard_normal(3), -2.0, 2.0)
    brain_center = s / 2.0 + rng.normal(0.0, 0.01 * s, size=3)
    brain = _ellipsoid(shape, brain_center, brain_radii)

    r_edema = 0.18 * s * (1.0 + 0.12 * rng.uniform(-1.0, 1.0))
    r_et = max(0.66 * r_edema * (1.0 + 0.08 * rng.uniform(-1.0, 1.0)), 2.4)
    r_net = max(0.38 * r_edema * (1.0 + 0.10 * rng.uniform(-1.0, 1.0)), 1.4)
    r_et = max(r_et, r_net + 1.0)
    r_edema = max(r_edema, r_et + 1.0)
    aniso = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=3)

    # Whole outer shell must stay inside the brain ellipsoid.
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    max_reach = float(brain_radii.min()) * 0.95 - r_edema * float(aniso.max())
    offset = direction * rng.uniform(0.0, max(max_reach, 0.0))
    tumor_center = brain_center + offset

    grids = np.ogrid[:s, :s, :s]
    rho = np.sqrt(
        sum(((g - c) / a) ** 2 for g, c, a in zip(grids, tumor_center, aniso))
    )
    labels = np.zeros(shape, dtype=np.int16)
    labels[rho <= r_edema] = 1
    labels[rho <= r_et] = 2
    labels[rho <= r_net] = 3
    labels[~brain] = 0
    tumor = labels > 0

    ramp = sum(
        (g - c) * u for g, c, u in zip(grids, tumor_center, profile.gradient_axis)
    ) / r_edema
    # A center's offset stands in for the whole scanner: an additive shift
    # plus mild lesion-contrast and noise-floor scalings derived from it.
    center_offset = {c.name: c.offset for c in spec.centers}[profile.center]
    contrast_scale = 1.0 + center_offset / 50.0
    noise_scale = 1.0 + center_offset / 80.0

    geometry = dict(spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
    contrasts: Dict[str, Volume] = {}
    for mod in MODALITIES:
        vox = np.zeros(shape, dtype=np.float64)
        vox[brain] = (
            _TISSUE_BASE[mod]
            + 0.5 * center_offset
            + rng.normal(0.0, _BRAIN_NOISE, size=int(brain.sum()))
        )
        tumor_noise = rng.normal(
            0.0, noise_scale * profile.tumor_noise_sigma, size=int(tumor.sum())
        )
        delta = _COMPARTMENT_CONTRAST[mod]
        contrast_by_label = np.array([0.0, delta[1], delta[2], delta[3]])
        vox[tumor] = (
            _TISSUE_BASE[mod]
            + 1.5 * center_offset
            + contrast_scale
            * (contrast_by_label[labels[tumor]] + profile.tumor_gradient * ramp[tumor])
            + tumor_noise
        )
        contrasts[mod] = Volume(np.maximum(vox, 0.0), kind="raw", **geometry)

    brain_vol = Volume(brain.astype(np.uint8), kind="label", **geometry)
    seg = SegmentationSet(
        profile.patient_id,
        brain_vol,
        brain_vol.with_voxels((labels == 1).astype(np.uint8)),
        brain_vol.with_voxels((labels == 2).astype(np.uint8)),
        brain_vol.with_voxels((labels == 3).astype(np.uint8)),
    )
    return contrasts, seg


def cohort_frame(spec: WorldSpec) -> pd.DataFrame:
    """The cohort table alone, no images."""
    return cohort_to_frame([draw_profile(spec, i).record() for i in range(spec.n)])


def _write_patient(spec: WorldSpec, index: int, images_dir: str) -> None:
    contrasts, seg = generate_phantom(spec, index)
    pdir = os.path.join(images_dir, seg.patient_id)
    os.makedirs(pdir, exist_ok=True)
    for mod, vol in contrasts.items():
        save_volume(vol, os.path.join(pdir, f"{mod}.nii.gz"))
    labels = (
        seg.edema.voxels.astype(np.int16)
        + 2 * seg.et.voxels.astype(np.int16)
        + 3 * seg.net.voxels.astype(np.int16)
    )
    save_volume(seg.brain, os.path.join(pdir, "brain.nii.gz"))
    save_volume(seg.brain.with_voxels(labels), os.path.join(pdir, "seg.nii.gz"))


def generate_cohort(
    spec: WorldSpec,
    out_dir: str,
    *,
    n_jobs: int = 1,
    write_volumes: bool = True,
) -> pd.DataFrame:
    """Write a full world under ``out_dir`` and return its cohort table.

    Produces ``cohort.csv``, ``world.json`` (the spec plus its config hash),
    and per-patient volumes under ``images/``. Patients are generated in
    parallel when ``n_jobs > 1``; every patient is seeded by index, so the
    output is identical regardless of scheduling.
    """
    os.makedirs(out_dir, exist_ok=True)
    frame = cohort_frame(spec)
    frame.to_csv(os.path.join(out_dir, "cohort.csv"), index=False)
    dump_json(
        {"schema": 1, "spec": spec.to_dict(), "config_hash": config_hash(spec.to_dict())},
        os.path.join(out_dir, "world.json"),
    )
    if write_volumes:
        images_dir = os.path.join(out_dir, "images")
        Parallel(n_jobs=n_jobs)(
            delayed(_write_patient)(spec, i, images_dir) for i in range(spec.n)
        )
    return frame


def read_patient_volumes(
    images_dir: str, patient_id: str
) -> Tuple[Dict[str, Volume], SegmentationSet]:
    """Load one patient from the on-disk layout back into pipeline objects."""
    pdir = os.path.join(images_dir, patient_id)
    contrasts = {
        mod: load_volume(os.path.join(pdir, f"{mod}.nii.gz")) for mod in MODALITIES
    }
    brain = load_volume(os.path.join(pdir, "brain.nii.gz"), kind="label")
    labels = load_volume(os.path.join(pdir, "seg.nii.gz"), kind="label")
    return contrasts, SegmentationSet.from_label_map(patient_id, labels, brain)
