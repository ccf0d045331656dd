"""Feature formulas over intensities, masks, and texture matrices.

Level indices inside the formulas are the actual gray-level values (1-based,
gaps allowed), not compressed matrix indices. Degenerate inputs follow
zero-mass conventions instead of raising: a matrix with no mass yields 0 for
sum-style features and 1 for correlation-style features, documented per
class. ``eps`` guards logarithms the way the reference conventions do.
"""
from __future__ import annotations

from typing import Dict, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist
from skimage.measure import marching_cubes, mesh_surface_area

EPS = float(np.spacing(1))


# --------------------------------------------------------------------------
# first order
# --------------------------------------------------------------------------

def firstorder_features(
    values: np.ndarray, levels: np.ndarray, voxel_volume: float
) -> Dict[str, float]:
    """18 intensity statistics over the (shifted) ROI intensities.

    ``levels`` are the discretized gray levels of the same voxels; Entropy and
    Uniformity are computed on that binning.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    mean = float(v.mean())
    p10, p25, p50, p75, p90 = (float(np.percentile(v, q)) for q in (10, 25, 50, 75, 90))
    m2 = float(((v - mean) ** 2).mean())
    m3 = float(((v - mean) ** 3).mean())
    m4 = float(((v - mean) ** 4).mean())
    robust = v[(v >= p10) & (v <= p90)]
    rmean = float(robust.mean()) if robust.size else 0.0

    counts = np.bincount(np.asarray(levels, dtype=np.int64))[1:]
    p = counts[counts > 0] / n

    energy = float((v**2).sum())
    return {
        "Energy": energy,
        "TotalEnergy": voxel_volume * energy,
        "Entropy": float(-(p * np.log2(p + EPS)).sum()),
        "Minimum": float(v.min()),
        "10Percentile": p10,
        "90Percentile": p90,
        "Maximum": float(v.max()),
        "Mean": mean,
        "Median": p50,
        "InterquartileRange": p75 - p25,
        "Range": float(v.max() - v.min()),
        "MeanAbsoluteDeviation": float(np.abs(v - mean).mean()),
        "RobustMeanAbsoluteDeviation": float(np.abs(robust - rmean).mean()) if robust.size else 0.0,
        "RootMeanSquared": float(np.sqrt((v**2).mean())),
        "Skewness": m3 / m2**1.5 if m2 > 0 else 0.0,
        "Kurtosis": m4 / m2**2 if m2 > 0 else 0.0,
        "Variance": m2,
        "Uniformity": float((p**2).sum()),
    }


# --------------------------------------------------------------------------
# shape
# --------------------------------------------------------------------------

def _max_pairwise(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    if len(points) > 400:
        try:
            hull = ConvexHull(points)
            points = points[hull.vertices]
        except Exception:  # degenerate (coplanar/collinear) point sets
            pass
    return float(pdist(points).max())


_MESH_SIGMA = 0.8  # voxels; keeps the 0.5 level exactly on flat interfaces


def shape_features(mask: np.ndarray, spacing: Tuple[float, float, float]) -> Dict[str, float]:
    """14 mesh- and moment-based shape descriptors.

    Surface area, mesh volume, sphericity, and the 3-D diameter come from a
    marching-cubes mesh of the mask. The mask is blurred (sigma 0.8 voxel)
    before meshing so facet area tracks the underlying smooth surface instead
    of the voxel staircase, which overestimates a sphere's area by ~9%; masks
    too small or thin to retain a 0.5 crossing after blurring fall back to
    the raw binary mesh. The in-plane maximum diameters use ROI voxel centers
    per slice plane; axis lengths use the population PCA of voxel-center
    coordinates (axis length ``4 * sqrt(eigenvalue)``).
    """
    mask = np.asarray(mask, dtype=bool)
    spacing = np.asarray(spacing, dtype=np.float64)
    n = int(mask.sum())
    voxel_volume = float(np.prod(spacing))

    field = ndimage.gaussian_filter(np.pad(mask, 4).astype(np.float64), _MESH_SIGMA)
    if field.max() <= 0.5:
        field = np.pad(mask, 1).astype(np.float64)
    verts, faces, _, _ = marching_cubes(field, level=0.5, spacing=tuple(spacing))
    surface_area = float(mesh_surface_area(verts, faces))
    tri = verts[faces]
    mesh_volume = float(abs(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0))

    coords = np.stack(np.nonzero(mask), axis=1) * spacing
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / n
    eig = np.sort(np.clip(np.linalg.eigvalsh(cov), 0.0, None))[::-1]

    def plane_diameter(drop_axis: int) -> float:
        best = 0.0
        keep = [a for a in range(3) if a != drop_axis]
        idx = np.nonzero(mask)
        planes = idx[drop_axis]
        pts = np.stack([idx[keep[0]] * spacing[keep[0]], idx[keep[1]] * spacing[keep[1]]], axis=1)
        for plane in np.unique(planes):
            best = max(best, _max_pairwise(pts[planes == plane]))
        return best

    sphericity = (36.0 * np.pi * mesh_volume**2) ** (1.0 / 3.0) / surface_area
    major, minor, least = eig
    return {
        "MeshVolume": mesh_volume,
        "VoxelVolume": n * voxel_volume,
        "SurfaceArea": surface_area,
        "SurfaceVolumeRatio": surface_area / mesh_volume,
        "Sphericity": float(sphericity),
        "Maximum3DDiameter": _max_pairwise(verts),
        "Maximum2DDiameterSlice": plane_diameter(2),
        "Maximum2DDiameterColumn": plane_diameter(1),
        "Maximum2DDiameterRow": plane_diameter(0),
        "MajorAxisLength": 4.0 * float(np.sqrt(major)),
        "MinorAxisLength": 4.0 * float(np.sqrt(minor)),
        "LeastAxisLength": 4.0 * float(np.sqrt(least)),
        "Elongation": float(np.sqrt(minor / major)) if major > 0 else 0.0,
        "Flatness": float(np.sqrt(least / major)) if major > 0 else 0.0,
    }


# --------------------------------------------------------------------------
# GLCM
# --------------------------------------------------------------------------

def glcm_features(p: np.ndarray, level_counts: np.ndarray) -> Dict[str, float]:
    """24 co-occurrence features on the normalized, direction-aggregated GLCM.

    ``level_counts`` is the ROI gray-level histogram; the number of distinct
    levels present in the ROI normalizes Idmn and Idn. A massless matrix
    (single-voxel ROI) returns 0 everywhere except Correlation and MCC, which
    take their flat-region value 1.
    """
    L = p.shape[0]
    ng = int((np.asarray(level_counts) > 0).sum())
    if p.sum() <= 0:
        out = {name: 0.0 for name in GLCM_NAMES}
        out["Correlation"] = 1.0
        out["MCC"] = 1.0
        return out

    iv = np.arange(1, L + 1, dtype=np.float64)
    i = iv[:, None]
    j = iv[None, :]
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    ux = float((px * iv).sum())
    uy = float((py * iv).sum())
    sx = float(np.sqrt((px * (iv - ux) ** 2).sum()))
    sy = float(np.sqrt((py * (iv - uy) ** 2).sum()))

    ksum = np.arange(2, 2 * L + 1, dtype=np.float64)
    p_sum = np.zeros(2 * L - 1)
    kdiff = np.arange(0, L, dtype=np.float64)
    p_diff = np.zeros(L)
    flat_sum = ((i + j) - 2).astype(np.int64).ravel()
    flat_diff = np.abs(i - j).astype(np.int64).ravel()
    np.add.at(p_sum, flat_sum, p.ravel())
    np.add.at(p_diff, flat_diff, p.ravel())

    hx = float(-(px * np.log2(px + EPS)).sum())
    hy = float(-(py * np.log2(py + EPS)).sum())
    hxy = float(-(p * np.log2(p + EPS)).sum())
    pxpy = px[:, None] * py[None, :]
    hxy1 = float(-(p * np.log2(pxpy + EPS)).sum())
    hxy2 = float(-(pxpy * np.log2(pxpy + EPS)).sum())

    da = float((p_diff * kdiff).sum())
    diff2 = (i - j) ** 2
    autocorr = float((p * i * j).sum())

    imc1 = (hxy - hxy1) / max(hx, hy) if max(hx, hy) > 0 else 0.0
    imc2 = float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - hxy)))))

    off = np.abs(i - j) > 0
    inv_var = float((p[off] / diff2[off]).sum())

    corr = (autocorr - ux * uy) / (sx * sy) if sx * sy > EPS else 1.0

    return {
        "Autocorrelation": autocorr,
        "ClusterProminence": float((p * (i + j - ux - uy) ** 4).sum()),
        "ClusterShade": float((p * (i + j - ux - uy) ** 3).sum()),
        "ClusterTendency": float((p * (i + j - ux - uy) ** 2).sum()),
        "Contrast": float((p * diff2).sum()),
        "Correlation": float(corr),
        "DifferenceAverage": da,
        "DifferenceEntropy": float(-(p_diff * np.log2(p_diff + EPS)).sum()),
        "DifferenceVariance": float((p_diff * (kdiff - da) ** 2).sum()),
        "Id": float((p / (1.0 + np.abs(i - j))).sum()),
        "Idm": float((p / (1.0 + diff2)).sum()),
        "Idmn": float((p / (1.0 + diff2 / ng**2)).sum()),
        "Idn": float((p / (1.0 + np.abs(i - j) / ng)).sum()),
        "Imc1": float(imc1),
        "Imc2": imc2,
        "InverseVariance": inv_var,
        "JointAverage": ux,
        "JointEnergy": float((p**2).sum()),
        "JointEntropy": hxy,
        "MCC": _mcc(p, px, py),
        "MaximumProbability": float(p.max()),
        "SumAverage": float((p_sum * ksum).sum()),
        "SumEntropy": float(-(p_sum * np.log2(p_sum + EPS)).sum()),
        "SumSquares": float((p * (i - ux) ** 2).sum()),
    }


def _mcc(p: np.ndarray, px: np.ndarray, py: np.ndarray) -> float:
    rows = px > 0
    cols = py > 0
    if rows.sum() < 2:
        return 1.0
    sub = p[np.ix_(rows, cols)]
    q = (sub / py[cols][None, :]) @ sub.T / px[rows][:, None]
    eig = np.sort(np.abs(np.linalg.eigvals(q)))
    if eig.size < 2:
        return 1.0
    return float(np.sqrt(max(0.0, float(eig[-2]))))


# --------------------------------------------------------------------------
# run length / size zone / dependence (shared algebra)
# --------------------------------------------------------------------------

def _sized_matrix_stats(mat: np.ndarray):
    L, W = mat.shape
    iv = np.arange(1, L + 1, dtype=np.float64)[:, None]
    wv = np.arange(1, W + 1, dtype=np.float64)[None, :]
    total = float(mat.sum())
    return iv, wv, total


def glrlm_features(mat: np.ndarray, n_voxels: int) -> Dict[str, float]:
    """16 run-length features on the direction-averaged run matrix."""
    iv, lv, nr = _sized_matrix_stats(mat)
    if nr <= 0:
        return {name: 0.0 for name in GLRLM_NAMES}
    pr = mat / nr
    mu_i = float((pr * iv).sum())
    mu_l = float((pr * lv).sum())
    return {
        "ShortRunEmphasis": float((mat / lv**2).sum() / nr),
        "LongRunEmphasis": float((mat * lv**2).sum() / nr),
        "GrayLevelNonUniformity": float((mat.sum(axis=1) ** 2).sum() / nr),
        "GrayLevelNonUniformityNormalized": float((mat.sum(axis=1) ** 2).sum() / nr**2),
        "RunLengthNonUniformity": float((mat.sum(axis=0) ** 2).sum() / nr),
        "RunLengthNonUniformityNormalized": float((mat.sum(axis=0) ** 2).sum() / nr**2),
        "RunPercentage": nr / n_voxels,
        "GrayLevelVariance": float((pr * (iv - mu_i) ** 2).sum()),
        "RunVariance": float((pr * (lv - mu_l) ** 2).sum()),
        "RunEntropy": float(-(pr * np.log2(pr + EPS)).sum()),
        "LowGrayLevelRunEmphasis": float((mat / iv**2).sum() / nr),
        "HighGrayLevelRunEmphasis": float((mat * iv**2).sum() / nr),
        "ShortRunLowGrayLevelEmphasis": float((mat / (iv**2 * lv**2)).sum() / nr),
        "ShortRunHighGrayLevelEmphasis": float((mat * iv**2 / lv**2).sum() / nr),
        "LongRunLowGrayLevelEmphasis": float((mat * lv**2 / iv**2).sum() / nr),
        "LongRunHighGrayLevelEmphasis": float((mat * iv**2 * lv**2).sum() / nr),
    }


def glszm_features(mat: np.ndarray, n_voxels: int) -> Dict[str, float]:
    """16 size-zone features on the zone-count matrix."""
    iv, sv, nz = _sized_matrix_stats(mat)
    if nz <= 0:
        return {name: 0.0 for name in GLSZM_NAMES}
    pz = mat / nz
    mu_i = float((pz * iv).sum())
    mu_s = float((pz * sv).sum())
    return {
        "SmallAreaEmphasis": float((mat / sv**2).sum() / nz),
        "LargeAreaEmphasis": float((mat * sv**2).sum() / nz),
        "GrayLevelNonUniformity": float((mat.sum(axis=1) ** 2).sum() / nz),
        "GrayLevelNonUniformityNormalized": float((mat.sum(axis=1) ** 2).sum() / nz**2),
        "SizeZoneNonUniformity": float((mat.sum(axis=0) ** 2).sum() / nz),
        "SizeZoneNonUniformityNormalized": float((mat.sum(axis=0) ** 2).sum() / nz**2),
        "ZonePercentage": nz / n_voxels,
        "GrayLevelVariance": float((pz * (iv - mu_i) ** 2).sum()),
        "ZoneVariance": float((pz * (sv - mu_s) ** 2).sum()),
        "ZoneEntropy": float(-(pz * np.log2(pz + EPS)).sum()),
        "LowGrayLevelZoneEmphasis": float((mat / iv**2).sum() / nz),
        "HighGrayLevelZoneEmphasis": float((mat * iv**2).sum() / nz),
        "SmallAreaLowGrayLevelEmphasis": float((mat / (iv**2 * sv**2)).sum() / nz),
        "SmallAreaHighGrayLevelEmphasis": float((mat * iv**2 / sv**2).sum() / nz),
        "LargeAreaLowGrayLevelEmphasis": float((mat * sv**2 / iv**2).sum() / nz),
        "LargeAreaHighGrayLevelEmphasis": float((mat * iv**2 * sv**2).sum() / nz),
    }


def gldm_features(mat: np.ndarray, n_voxels: int) -> Dict[str, float]:
    """14 dependence features; dependence value = matching neighbors + 1."""
    iv, jv, nz = _sized_matrix_stats(mat)
    if nz <= 0:
        return {name: 0.0 for name in GLDM_NAMES}
    pd_ = mat / nz
    mu_i = float((pd_ * iv).sum())
    mu_j = float((pd_ * jv).sum())
    return {
        "SmallDependenceEmphasis": float((mat / jv**2).sum() / nz),
        "LargeDependenceEmphasis": float((mat * jv**2).sum() / nz),
        "GrayLevelNonUniformity": float((mat.sum(axis=1) ** 2).sum() / nz),
        "DependenceNonUniformity": float((mat.sum(axis=0) ** 2).sum() / nz),
        "DependenceNonUniformityNormalized": float((mat.sum(axis=0) ** 2).sum() / nz**2),
        "GrayLevelVariance": float((pd_ * (iv - mu_i) ** 2).sum()),
        "DependenceVariance": float((pd_ * (jv - mu_j) ** 2).sum()),
        "DependenceEntropy": float(-(pd_ * np.log2(pd_ + EPS)).sum()),
        "LowGrayLevelEmphasis": float((mat / iv**2).sum() / nz),
        "HighGrayLevelEmphasis": float((mat * iv**2).sum() / nz),
        "SmallDependenceLowGrayLevelEmphasis": float((mat / (iv**2 * jv**2)).sum() / nz),
        "SmallDependenceHighGrayLevelEmphasis": float((mat * iv**2 / jv**2).sum() / nz),
        "LargeDependenceLowGrayLevelEmphasis": float((mat * jv**2 / iv**2).sum() / nz),
        "LargeDependenceHighGrayLevelEmphasis": float((mat * iv**2 * jv**2).sum() / nz),
    }


# --------------------------------------------------------------------------
# NGTDM
# --------------------------------------------------------------------------

def ngtdm_features(n_i: np.ndarray, s_i: np.ndarray) -> Dict[str, float]:
    """5 neighborhood gray-tone difference features.

    An all-flat neighborhood (every ``s_i`` zero) caps Coarseness at 1e6 and
    zeroes Busyness and Strength; a single present level zeroes Contrast.
    """
    nvp = float(n_i.sum())
    if nvp <= 0:
        return {"Busyness": 0.0, "Coarseness": 1e6, "Complexity": 0.0, "Contrast": 0.0, "Strength": 0.0}
    present = n_i > 0
    iv = np.arange(1, len(n_i) + 1, dtype=np.float64)[present]
    p = n_i[present] / nvp
    s = s_i[present]
    ngp = int(present.sum())

    ps = float((p * s).sum())
    coarseness = 1.0 / ps if ps > 0 else 1e6
    if ngp > 1:
        di = iv[:, None] - iv[None, :]
        contrast = float((p[:, None] * p[None, :] * di**2).sum()) / (ngp * (ngp - 1)) * s.sum() / nvp
        ip = iv * p
        busy_den = float(np.abs(ip[:, None] - ip[None, :]).sum())
        busyness = ps / busy_den if busy_den > 0 else 0.0
        psum = p[:, None] + p[None, :]
        complexity = float((np.abs(di) * (p[:, None] * s[:, None] + p[None, :] * s[None, :]) / psum).sum()) / nvp
        s_total = float(s.sum())
        strength = float((psum * di**2).sum()) / s_total if s_total > 0 else 0.0
    else:
        contrast = busyness = complexity = strength = 0.0

    return {
        "Busyness": busyness,
        "Coarseness": min(coarseness, 1e6),
        "Complexity": complexity,
        "Contrast": contrast,
        "Strength": strength,
    }


FIRSTORDER_NAMES = (
    "Energy", "TotalEnergy", "Entropy", "Minimum", "10Percentile", "90Percentile",
    "Maximum", "Mean", "Median", "InterquartileRange", "Range",
    "MeanAbsoluteDeviation", "RobustMeanAbsoluteDeviation", "RootMeanSquared",
    "Skewness", "Kurtosis", "Variance", "Uniformity",
)
SHAPE_NAMES = (
    "MeshVolume", "VoxelVolume", "SurfaceArea", "SurfaceVolumeRatio", "Sphericity",
    "Maximum3DDiameter", "Maximum2DDiameterSlice", "Maximum2DDiameterColumn",
    "Maximum2DDiameterRow", "MajorAxisLength", "MinorAxisLength", "LeastAxisLength",
    "Elongation", "Flatness",
)
GLCM_NAMES = (
    "Autocorrelation", "ClusterProminence", "ClusterShade", "ClusterTendency",
    "Contrast", "Correlation", "DifferenceAverage", "DifferenceEntropy",
    "DifferenceVariance", "Id", "Idm", "Idmn", "Idn", "Imc1", "Imc2",
    "InverseVariance", "JointAverage", "JointEnergy", "JointEntropy", "MCC",
    "MaximumProbability", "SumAverage", "SumEntropy", "SumSquares",
)
GLRLM_NAMES = (
    "ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized", "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized", "RunPercentage", "GrayLevelVariance",
    "RunVariance", "RunEntropy", "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis", "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis", "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
)
GLSZM_NAMES = (
    "SmallAreaEmphasis", "LargeAreaEmphasis", "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized", "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized", "ZonePercentage", "GrayLevelVariance",
    "ZoneVariance", "ZoneEntropy", "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis", "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis", "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
)
GLDM_NAMES = (
    "SmallDependenceEmphasis", "LargeDependenceEmphasis", "GrayLevelNonUniformity",
    "DependenceNonUniformity", "DependenceNonUniformityNormalized",
    "GrayLevelVariance", "DependenceVariance", "DependenceEntropy",
    "LowGrayLevelEmphasis", "HighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis", "SmallDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis", "LargeDependenceHighGrayLevelEmphasis",
)
NGTDM_NAMES = ("Busyness", "Coarseness", "Complexity", "Contrast", "Strength")
