"""Paired image/mask augmentation for volumetric training samples.

One spatial transform per call: the gated affine components (rotation,
shear, translation, scaling) compose into a single matrix, grid distortion
perturbs the sampling coordinates on top, and the combined coordinate map
is applied once to every image channel (linear interpolation) and once to
the mask (nearest neighbour), so both always see the identical geometry
with a single resampling pass. Intensity perturbations (Gaussian noise,
shift, scaling, and a k-space attenuation standing in for Gibbs ringing)
touch only the image. All randomness comes from one generator seeded per
call: a fixed seed reproduces the output exactly, and zero probabilities
return the inputs unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    """Gate probabilities and ranges of every augmentation component."""

    rotate_prob: float = 0.25
    rotate_range: float = np.pi / 25
    shear_prob: float = 0.25
    shear_range: float = 0.11
    translate_prob: float = 0.25
    translate_range: float = 12.0
    scale_prob: float = 0.25
    scale_range: float = 0.2
    grid_prob: float = 0.1
    grid_cells: int = 3
    grid_limit: float = 0.025
    noise_prob: float = 0.1
    noise_std: float = 0.015
    shift_prob: float = 0.1
    shift_range: float = 0.05
    scale_intensity_prob: float = 0.1
    scale_intensity_range: float = 0.05
    gibbs_prob: float = 0.1
    gibbs_alpha: Tuple[float, float] = (0.0, 0.2)

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        """All probabilities zero: augment becomes the identity."""
        return cls(
            rotate_prob=0.0, shear_prob=0.0, translate_prob=0.0, scale_prob=0.0,
            grid_prob=0.0, noise_prob=0.0, shift_prob=0.0,
            scale_intensity_prob=0.0, gibbs_prob=0.0,
        )


def _rotation_matrix(angles: np.ndarray) -> np.ndarray:
    ax, ay, az = angles
    rx = np.array([[1, 0, 0],
                   [0, np.cos(ax), -np.sin(ax)],
                   [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)],
                   [0, 1, 0],
                   [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0],
                   [np.sin(az), np.cos(az), 0],
                   [0, 0, 1]])
    return rz @ ry @ rx


def _sample_spatial(rng: np.random.Generator, cfg: AugmentConfig, shape):
    """Compose the gated affine pieces into (matrix, offset), or None."""
    matrix = np.eye(3)
    translate = np.zeros(3)
    touched = False
    if rng.random() < cfg.rotate_prob:
        matrix = _rotation_matrix(rng.uniform(-cfg.rotate_range, cfg.rotate_range, 3)) @ matrix
        touched = True
    if rng.random() < cfg.shear_prob:
        shear = np.eye(3)
        shear[0, 1], shear[0, 2], shear[1, 2] = rng.uniform(
            -cfg.shear_range, cfg.shear_range, 3
        )
        matrix = shear @ matrix
        touched = True
    if rng.random() < cfg.translate_prob:
        translate = rng.uniform(-cfg.translate_range, cfg.translate_range, 3)
        touched = True
    if rng.random() < cfg.scale_prob:
        matrix = np.diag(1.0 + rng.uniform(-cfg.scale_range, cfg.scale_range, 3)) @ matrix
        touched = True
    if not touched:
        return None
    # pull-back convention: output voxel -> input voxel, rotating about the center
    inverse = np.linalg.inv(matrix)
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - inverse @ (center + translate)
    return inverse, offset


def _sample_grid_maps(rng: np.random.Generator, cfg: AugmentConfig, shape):
    """Monotone per-axis coordinate maps from jittered grid-cell widths."""
    if rng.random() >= cfg.grid_prob:
        return None
    maps = []
    for size in shape:
        widths = 1.0 + rng.uniform(-cfg.grid_limit, cfg.grid_limit, cfg.grid_cells)
        knots_in = np.concatenate([[0.0], np.cumsum(widths)])
        knots_in *= (size - 1.0) / knots_in[-1]
        knots_out = np.linspace(0.0, size - 1.0, cfg.grid_cells + 1)
        maps.append(np.interp(np.arange(size, dtype=np.float64), knots_out, knots_in))
    return maps


def augment(image: np.ndarray, mask: np.ndarray, seed: int,
            cfg: AugmentConfig = AugmentConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """One augmented (image, mask) pair; image (C, D, H, W), mask (D, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.ndim != 4 or mask.ndim != 3 or image.shape[1:] != mask.shape:
        raise ValueError(
            f"expected image (C, D, H, W) over mask (D, H, W), got {image.shape} / {mask.shape}"
        )
    rng = np.random.default_rng(seed)
    shape = mask.shape

    affine = _sample_spatial(rng, cfg, shape)
    grid_maps = _sample_grid_maps(rng, cfg, shape)
    if affine is not None or grid_maps is not None:
        if grid_maps is None:
            grid_maps = [np.arange(s, dtype=np.float64) for s in shape]
        pts = np.stack(np.meshgrid(*grid_maps, indexing="ij"))
        if affine is not None:
            inverse, offset = affine
            pts = np.einsum("ij,j...->i...", inverse, pts) + offset.reshape(3, 1, 1, 1)
        image = np.stack([
            ndimage.map_coordinates(ch, pts, order=1, mode="constant", cval=0.0)
            for ch in image
        ])
        mask = ndimage.map_coordinates(mask, pts, order=0, mode="constant", cval=0)

    if rng.random() < cfg.noise_prob:
        image = image + rng.normal(0.0, cfg.noise_std, image.shape)
    if rng.random() < cfg.shift_prob:
        image = image + rng.uniform(-cfg.shift_range, cfg.shift_range)
    if rng.random() < cfg.scale_intensity_prob:
        image = image * (1.0 + rng.uniform(-cfg.scale_intensity_range, cfg.scale_intensity_range))
    if rng.random() < cfg.gibbs_prob:
        alpha = rng.uniform(*cfg.gibbs_alpha)
        image = _kspace_attenuate(image, alpha)
    return image, mask


def _kspace_attenuate(image: np.ndarray, alpha: float) -> np.ndarray:
    """Gaussian attenuation of high spatial frequencies, channel by channel."""
    grids = np.meshgrid(
        *[np.fft.fftshift(np.fft.fftfreq(s)) for s in image.shape[1:]], indexing="ij"
    )
    rho2 = sum(g ** 2 for g in grids) / sum(0.5 ** 2 for _ in grids)
    gain = np.exp(-alpha * rho2)
    out = np.empty_like(image)
    for c, ch in enumerate(image):
        spectrum = np.fft.fftshift(np.fft.fftn(ch)) * gain
        out[c] = np.fft.ifftn(np.fft.ifftshift(spectrum)).real
    return out
