"""Minimal, strict NIfTI-1 reader and writer.

Only the subset this package produces and consumes is supported:
single-file little-endian ``.nii`` / ``.nii.gz``, 3-D, datatypes uint8,
int16, float32 and float64, no header extensions. Anything else fails
loudly with an error naming the offending field; nothing is guessed.

Writes are deterministic: the gzip stream is created with a zeroed
mtime and no filename, so saving the same volume twice yields identical
bytes.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .volume import BinaryMask, Volume

__all__ = [
    "NiftiError",
    "NiftiFormatError",
    "NiftiCorruptError",
    "load_volume",
    "load_binary_mask",
    "save_volume",
    "save_mask",
]

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# struct layout of the fixed 348-byte header, little-endian
_HEADER_FMT = (
    "<i"  # sizeof_hdr
    "10s18sihcB"  # data_type, db_name, extents, session_error, regular, dim_info
    "8h"  # dim
    "3f"  # intent_p1..p3
    "hhhh"  # intent_code, datatype, bitpix, slice_start
    "8f"  # pixdim
    "fff"  # vox_offset, scl_slope, scl_inter
    "hBB"  # slice_end, slice_code, xyzt_units
    "ffff"  # cal_max, cal_min, slice_duration, toffset
    "ii"  # glmax, glmin
    "80s24s"  # descrip, aux_file
    "hh"  # qform_code, sform_code
    "6f"  # quatern_b..d, qoffset_x..z
    "4f4f4f"  # srow_x, srow_y, srow_z
    "16s4s"  # intent_name, magic
)
assert struct.calcsize(_HEADER_FMT) == HEADER_SIZE

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}
_DTYPE_NAMES = {2: "uint8", 4: "int16", 16: "float32", 64: "float64"}


class NiftiError(Exception):
    """Base class for NIfTI I/O failures."""


class NiftiFormatError(NiftiError):
    """The file is valid NIfTI but outside the supported subset."""


class NiftiCorruptError(NiftiError):
    """The file is truncated or structurally inconsistent."""


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiCorruptError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )


def _load_raw(path: Path) -> tuple[np.ndarray, tuple[float, float, float], np.ndarray]:
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiCorruptError(
            f"{path}: file holds {len(raw)} bytes, shorter than the "
            f"{HEADER_SIZE}-byte header"
        )
    fields = struct.unpack(_HEADER_FMT, raw[:HEADER_SIZE])
    sizeof_hdr = fields[0]
    if sizeof_hdr != HEADER_SIZE:
        # 348 byte-swapped reads as 1543569408: a big-endian file
        if struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
            raise NiftiFormatError(
                f"{path}: big-endian NIfTI is not supported (little-endian only)"
            )
        raise NiftiCorruptError(
            f"{path}: sizeof_hdr is {sizeof_hdr}, not {HEADER_SIZE}; not a NIfTI-1 file"
        )

    magic = fields[-1]
    if magic == MAGIC_PAIR:
        raise NiftiFormatError(
            f"{path}: two-file (.hdr/.img) NIfTI is not supported, "
            "only single-file 'n+1'"
        )
    if magic != MAGIC_SINGLE:
        raise NiftiCorruptError(f"{path}: bad magic {magic!r}")

    dim = fields[7:15]
    if dim[0] != 3:
        # 4-D files with a trailing singleton are common; accept those alone
        if dim[0] == 4 and dim[4] == 1:
            pass
        else:
            raise NiftiFormatError(
                f"{path}: dim[0] is {dim[0]}, only 3-D volumes are supported"
            )
    shape = tuple(int(n) for n in dim[1:4])
    if min(shape) < 1:
        raise NiftiCorruptError(f"{path}: non-positive dims {shape}")

    datatype = fields[19]
    bitpix = fields[20]
    if datatype not in _DTYPES:
        raise NiftiFormatError(
            f"{path}: unsupported datatype code {datatype} "
            f"(supported: {sorted(_DTYPE_NAMES.values())})"
        )
    dtype = _DTYPES[datatype]
    if bitpix != dtype.itemsize * 8:
        raise NiftiCorruptError(
            f"{path}: bitpix {bitpix} inconsistent with datatype "
            f"{_DTYPE_NAMES[datatype]}"
        )

    pixdim = fields[22:30]
    spacing = tuple(float(p) for p in pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NiftiCorruptError(f"{path}: non-positive pixdim {spacing}")

    vox_offset = int(round(fields[30]))
    if vox_offset < HEADER_SIZE + 4:
        raise NiftiCorruptError(f"{path}: vox_offset {vox_offset} overlaps the header")
    if len(raw) >= HEADER_SIZE + 4 and raw[HEADER_SIZE] != 0:
        raise NiftiFormatError(f"{path}: header extensions are not supported")

    scl_slope, scl_inter = float(fields[31]), float(fields[32])
    qform_code, sform_code = fields[44], fields[45]
    quat = fields[46:52]
    srows = np.array(fields[52:64], dtype=np.float64).reshape(3, 4)

    if sform_code > 0:
        affine = np.vstack([srows, [0.0, 0.0, 0.0, 1.0]])
    elif qform_code > 0:
        rot = _quaternion_rotation(*quat[:3])
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        scaled = rot * np.array(spacing) * np.array([1.0, 1.0, qfac])
        affine = np.eye(4)
        affine[:3, :3] = scaled
        affine[:3, 3] = quat[3:]
    else:
        affine = np.diag([*spacing, 1.0])

    n_items = int(np.prod(shape))
    n_bytes = n_items * dtype.itemsize
    payload = raw[vox_offset : vox_offset + n_bytes]
    if len(payload) < n_bytes:
        raise NiftiCorruptError(
            f"{path}: truncated data section, expected {n_bytes} bytes at offset "
            f"{vox_offset} but only {len(payload)} present"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")

    out = np.asfortranarray(data, dtype=np.float64)
    # slope 0 means "no scaling stored" per the standard
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        out = out * slope + scl_inter
    return np.ascontiguousarray(out), spacing, affine


def load_volume(path: str | Path) -> Volume:
    """Read a supported NIfTI-1 file into a float64 :class:`Volume`.

    scl_slope / scl_inter are applied; the affine comes from the sform
    when set, else the qform, else a diagonal pixdim fallback.
    """
    data, spacing, affine = _load_raw(Path(path))
    return Volume(data, spacing, affine)


def load_binary_mask(path: str | Path) -> BinaryMask:
    """Read a mask file; any nonzero voxel is foreground."""
    data, spacing, affine = _load_raw(Path(path))
    return BinaryMask(data != 0.0, spacing, affine)


def _build_header(shape, spacing, affine, datatype: int, bitpix: int) -> bytes:
    dim = [3, *shape, 1, 1, 1, 1]
    pixdim = [1.0, *spacing, 0.0, 0.0, 0.0, 0.0]
    return struct.pack(
        _HEADER_FMT,
        HEADER_SIZE,
        b"", b"", 0, 0, b"r", 0,
        *dim,
        0.0, 0.0, 0.0,
        0,  # intent_code
        datatype,
        bitpix,
        0,
        *pixdim,
        352.0,  # vox_offset
        1.0, 0.0,  # scl_slope, scl_inter
        0, 0, 2,  # slice_end, slice_code, xyzt_units (mm)
        0.0, 0.0, 0.0, 0.0,
        0, 0,
        b"lesionforge", b"",
        0, 1,  # qform_code, sform_code
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *np.asarray(affine[:3], dtype=np.float64).ravel(),
        b"",
        MAGIC_SINGLE,
    )


def _write(path: Path, header: bytes, payload: bytes) -> None:
    blob = header + b"\x00\x00\x00\x00" + payload
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        with open(path, "wb") as fh:
            # fixed mtime and no embedded name keep the bytes reproducible
            with gzip.GzipFile(fileobj=fh, mode="wb", filename="", mtime=0) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)


def save_volume(
    volume: Volume, path: str | Path, datatype: str = "float32"
) -> None:
    """Write a volume as single-file NIfTI-1.

    float32 round-trips bit-exactly through :func:`load_volume` for data
    already representable in float32; integer datatypes round to nearest.
    Geometry is stored at float32 header precision.
    """
    dtype = np.dtype(datatype)
    if dtype not in _DTYPE_CODES:
        raise NiftiFormatError(
            f"cannot write datatype {datatype!r} "
            f"(supported: {sorted(_DTYPE_NAMES.values())})"
        )
    data = volume.data
    if dtype.kind in "iu":
        data = np.rint(data)
        info = np.iinfo(dtype)
        if data.size and (data.min() < info.min or data.max() > info.max):
            raise ValueError(
                f"data range [{data.min()}, {data.max()}] does not fit {datatype}"
            )
    payload = np.asfortranarray(data, dtype=dtype).tobytes(order="F")
    header = _build_header(
        volume.dims, volume.spacing, volume.affine,
        _DTYPE_CODES[dtype], dtype.itemsize * 8,
    )
    _write(Path(path), header, payload)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a binary mask as uint8 with values exactly 0 and 1."""
    payload = np.asfortranarray(mask.data, dtype=np.uint8).tobytes(order="F")
    header = _build_header(
        mask.dims, mask.spacing, mask.affine, _DTYPE_CODES[np.dtype(np.uint8)], 8
    )
    _write(Path(path), header, payload)
