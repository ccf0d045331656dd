"""Texture matrix construction on discretized gray-level volumes.

All builders take one integer level array where 0 marks voxels outside the
ROI and levels 1..L mark ROI voxels. Conventions:

* GLCM: the 13 unique direction pairs of the 26-neighborhood at distance 1,
  each symmetrized, summed across directions, then normalized to unit mass.
* GLRLM: maximal same-level runs along the same 13 directions; the matrix is
  the per-direction run-count matrix averaged over directions.
* GLSZM: connected zones of equal level under 26-connectivity.
* GLDM: for every ROI voxel, the dependence value is the count of
  26-neighbors with the same level plus one for the voxel itself.
* NGTDM: per level, the voxel count and the summed absolute difference
  between the level and the mean level of in-ROI 26-neighbors; voxels with no
  in-ROI neighbor are excluded.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import DegenerateInputError


def _half_offsets() -> List[Tuple[int, int, int]]:
    """One offset per antipodal pair of the 26-neighborhood."""
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                d = (dx, dy, dz)
                if d == (0, 0, 0):
                    continue
                if d > (0, 0, 0):  # lexicographic sign choice keeps one per pair
                    offs.append(d)
    return offs


DIRECTIONS_13: Tuple[Tuple[int, int, int], ...] = tuple(_half_offsets())

OFFSETS_26: Tuple[Tuple[int, int, int], ...] = tuple(
    d for d in DIRECTIONS_13
) + tuple((-a, -b, -c) for a, b, c in DIRECTIONS_13)


def _slice_pair(shape: Sequence[int], off: Sequence[int]):
    core, shifted = [], []
    for n, d in zip(shape, off):
        if d >= 0:
            core.append(slice(0, n - d))
            shifted.append(slice(d, n))
        else:
            core.append(slice(-d, n))
            shifted.append(slice(0, n + d))
    return tuple(core), tuple(shifted)


@dataclass
class TextureMatrices:
    """The five texture matrices of one (image, ROI) pair.

    ``glcm`` is normalized to unit mass (all-zero for a single-voxel ROI);
    ``glrlm`` holds direction-averaged run counts; ``glszm`` zone counts;
    ``gldm`` dependence counts over dependence values 1..27; ``ngtdm_n`` and
    ``ngtdm_s`` the per-level voxel counts and coarseness sums.
    """

    glcm: np.ndarray
    glrlm: np.ndarray
    glszm: np.ndarray
    gldm: np.ndarray
    ngtdm_n: np.ndarray
    ngtdm_s: np.ndarray
    n_levels: int
    n_voxels: int


def build_texture_matrices(levels: np.ndarray, n_levels: int | None = None) -> TextureMatrices:
    levels = np.asarray(levels)
    if levels.ndim != 3:
        raise DegenerateInputError(f"level array must be 3-D, got {levels.ndim}-D")
    inside = levels > 0
    n_voxels = int(inside.sum())
    if n_voxels == 0:
        raise DegenerateInputError("ROI is empty")
    L = int(levels.max()) if n_levels is None else int(n_levels)

    ngtdm_n, ngtdm_s = _ngtdm(levels, L)
    return TextureMatrices(
        glcm=_glcm(levels, L),
        glrlm=_glrlm(levels, L),
        glszm=_glszm(levels, L),
        gldm=_gldm(levels, L),
        ngtdm_n=ngtdm_n,
        ngtdm_s=ngtdm_s,
        n_levels=L,
        n_voxels=n_voxels,
    )


def _glcm(levels: np.ndarray, L: int) -> np.ndarray:
    counts = np.zeros(L * L, dtype=np.float64)
    for off in DIRECTIONS_13:
        core, shifted = _slice_pair(levels.shape, off)
        a = levels[core].ravel()
        b = levels[shifted].ravel()
        valid = (a > 0) & (b > 0)
        if not valid.any():
            continue
        ai = a[valid].astype(np.int64) - 1
        bi = b[valid].astype(np.int64) - 1
        counts += np.bincount(ai * L + bi, minlength=L * L)
        counts += np.bincount(bi * L + ai, minlength=L * L)
    total = counts.sum()
    mat = counts.reshape(L, L)
    return mat / total if total > 0 else mat


def _glrlm(levels: np.ndarray, L: int) -> np.ndarray:
    coords = np.nonzero(levels > 0)
    vals = levels[coords].astype(np.int64)
    xs, ys, zs = (c.astype(np.int64) for c in coords)
    max_len = max(levels.shape)
    acc = np.zeros((L, max_len), dtype=np.float64)

    for off in DIRECTIONS_13:
        axis = next(a for a, d in enumerate(off) if d != 0)
        pos = (xs, ys, zs)[axis] * off[axis]
        inv = [c - pos * d for c, d in zip((xs, ys, zs), off)]
        order = np.lexsort((pos, vals, *inv[::-1]))
        p = pos[order]
        v = vals[order]
        line = np.stack([inv[0][order], inv[1][order], inv[2][order], v], axis=1)
        # A run continues while the line id and level repeat and pos steps by 1.
        brk = np.ones(len(p), dtype=bool)
        if len(p) > 1:
            same_line = (line[1:] == line[:-1]).all(axis=1)
            brk[1:] = ~(same_line & (np.diff(p) == 1))
        starts = np.flatnonzero(brk)
        lengths = np.diff(np.append(starts, len(p)))
        run_levels = v[starts]
        np.add.at(acc, (run_levels - 1, lengths - 1), 1.0)

    acc /= len(DIRECTIONS_13)
    used = np.flatnonzero(acc.sum(axis=0))
    width = int(used[-1]) + 1 if used.size else 1
    return acc[:, :width]


def _glszm(levels: np.ndarray, L: int) -> np.ndarray:
    structure = np.ones((3, 3, 3), dtype=np.int8)
    pairs = []
    max_size = 1
    for lvl in np.unique(levels[levels > 0]):
        lab, n = ndimage.label(levels == lvl, structure=structure)
        if n == 0:
            continue
        sizes = np.bincount(lab.ravel())[1:]
        pairs.append((int(lvl), sizes))
        max_size = max(max_size, int(sizes.max()))
    mat = np.zeros((L, max_size), dtype=np.float64)
    for lvl, sizes in pairs:
        mat[lvl - 1] += np.bincount(sizes - 1, minlength=max_size)
    return mat


def _gldm(levels: np.ndarray, L: int) -> np.ndarray:
    inside = levels > 0
    matches = np.zeros(levels.shape, dtype=np.int32)
    for off in OFFSETS_26:
        core, shifted = _slice_pair(levels.shape, off)
        a = levels[core]
        b = levels[shifted]
        matches[core] += ((a > 0) & (a == b)).astype(np.int32)
    dep = matches[inside] + 1  # the center voxel always depends on itself
    lvl = levels[inside].astype(np.int64)
    mat = np.bincount((lvl - 1) * 27 + (dep - 1), minlength=L * 27).astype(np.float64)
    return mat.reshape(L, 27)


def _ngtdm(levels: np.ndarray, L: int) -> Tuple[np.ndarray, np.ndarray]:
    inside = levels > 0
    nb_sum = np.zeros(levels.shape, dtype=np.float64)
    nb_cnt = np.zeros(levels.shape, dtype=np.int32)
    for off in OFFSETS_26:
        core, shifted = _slice_pair(levels.shape, off)
        b = levels[shifted]
        valid = b > 0
        nb_sum[core] += np.where(valid, b, 0)
        nb_cnt[core] += valid.astype(np.int32)
    usable = inside & (nb_cnt > 0)
    lvl = levels[usable].astype(np.int64)
    mean_nb = nb_sum[usable] / nb_cnt[usable]
    n_i = np.bincount(lvl - 1, minlength=L).astype(np.float64)
    s_i = np.zeros(L, dtype=np.float64)
    np.add.at(s_i, lvl - 1, np.abs(lvl - mean_nb))
    return n_i, s_i
