"""Minimal NIfTI-1 codec.

Supports the slice of the format this pipeline produces and consumes:
single-file ``.nii`` / ``.nii.gz``, little-endian, scalar volumetric payloads
(uint8, int16, int32, float32, float64). Data are returned in ``(x, y, z)``
index order with x varying fastest on disk, matching the format's layout.

Geometry is taken from the sform when set, else the qform, else ``pixdim``.
On write the sform alone carries geometry (qform_code 0). Header floats are
single precision, so geometry survives a round trip exactly only when the
values are float32-representable; all grids this package generates are.
"""
from __future__ import annotations

import gzip
import struct
from typing import Tuple

import numpy as np

from .errors import FormatError, UnsupportedGeometryError

_HDR_SIZE = 348
_VOX_OFFSET = 352

_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}
_CODES = {np.dtype("<i2"): 4, np.dtype("<f4"): 16}


def _open(path: str, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_nifti(path: str) -> Tuple[np.ndarray, tuple, tuple, np.ndarray]:
    """Read a NIfTI-1 file.

    Returns ``(data, spacing, origin, direction)`` where data has shape
    ``(nx, ny, nz)`` and slope/intercept scaling has been applied.
    """
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HDR_SIZE:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")

    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr != _HDR_SIZE:
        raise FormatError(
            f"{path}: sizeof_hdr is {sizeof_hdr}, expected {_HDR_SIZE} "
            "(not little-endian NIfTI-1)"
        )
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedGeometryError(f"{path}: two-file .hdr/.img pairs not supported")
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: bad magic {magic!r}")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise FormatError(f"{path}: dim[0] is {ndim}, expected 1..7")
    shape = [max(1, d) for d in dim[1 : ndim + 1]]
    if any(d != 1 for d in shape[3:]):
        raise UnsupportedGeometryError(
            f"{path}: {ndim}-D payload with non-singleton trailing dims; volumetric only"
        )
    shape3 = (shape + [1, 1, 1])[:3]
    if any(d < 1 for d in shape3):
        raise FormatError(f"{path}: non-positive dim {tuple(shape3)}")

    datatype = struct.unpack_from("<h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise FormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype]

    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = int(struct.unpack_from("<f", raw, 108)[0])
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)

    count = int(np.prod(shape3))
    end = vox_offset + count * dtype.itemsize
    if vox_offset < _HDR_SIZE or len(raw) < end:
        raise FormatError(f"{path}: payload truncated (vox_offset {vox_offset})")
    data = np.frombuffer(raw[vox_offset:end], dtype=dtype).reshape(shape3, order="F")

    if not np.isfinite(scl_slope) or scl_slope == 0.0:
        scl_slope = 1.0
    if not np.isfinite(scl_inter):
        scl_inter = 0.0
    if scl_slope != 1.0 or scl_inter != 0.0:
        data = data.astype(np.float32) * np.float32(scl_slope) + np.float32(scl_inter)
    else:
        data = np.asarray(data)

    if sform_code > 0:
        rows = [struct.unpack_from("<4f", raw, 280 + 16 * r) for r in range(3)]
        affine = np.array(rows, dtype=np.float64)
        mat = affine[:, :3]
        spacing = np.linalg.norm(mat, axis=0)
        if np.any(spacing <= 0):
            raise FormatError(f"{path}: degenerate sform column")
        direction = mat / spacing
        origin = affine[:, 3]
    elif qform_code > 0:
        b, c, d = struct.unpack_from("<3f", raw, 256)
        origin = np.array(struct.unpack_from("<3f", raw, 268), dtype=np.float64)
        spacing = np.abs(np.array(pixdim[1:4], dtype=np.float64))
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        direction = _quaternion_to_matrix(b, c, d)
        direction[:, 2] *= qfac
    else:
        spacing = np.array([p if p > 0 else 1.0 for p in pixdim[1:4]], dtype=np.float64)
        origin = np.zeros(3)
        direction = np.eye(3)

    return data, tuple(float(s) for s in spacing), tuple(float(o) for o in origin), direction


def _quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(max(a2, 0.0)))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ],
        dtype=np.float64,
    )


def write_nifti(
    path: str,
    data: np.ndarray,
    spacing: tuple,
    origin: tuple,
    direction: np.ndarray,
    scl_slope: float = 1.0,
    scl_inter: float = 0.0,
) -> None:
    """Write a single-file NIfTI-1 volume.

    ``data`` must already be int16 or float32; it is stored as-is, with the
    given slope/intercept recorded in the header (readers then see
    ``stored * slope + inter``).
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise UnsupportedGeometryError(f"write expects 3-D data, got {data.ndim}-D")
    dtype = data.dtype.newbyteorder("<")
    if dtype not in _CODES:
        raise FormatError(f"write supports int16/float32 payloads, got {data.dtype}")

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in spacing], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(_VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, float(scl_slope), float(scl_inter))
    struct.pack_into("<b", hdr, 123, 2)  # spatial units: mm
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform on
    affine = np.asarray(direction, dtype=np.float64) * np.asarray(spacing, dtype=np.float64)
    for r in range(3):
        struct.pack_into("<4f", hdr, 280 + 16 * r, *affine[r], float(origin[r]))
    hdr[344:348] = b"n+1\x00"

    payload = np.asarray(data, dtype=dtype, order="F").tobytes(order="F")
    with _open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")  # no header extensions
        fh.write(payload)
