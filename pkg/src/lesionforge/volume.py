"""Core 3-D volume types shared by every other module.

A volume couples a dense array with its scanner geometry: per-axis voxel
spacing in millimetres and a 4x4 voxel-to-world affine. All operations in
this package preserve geometry unless their contract says otherwise, and
mixing volumes from different grids is a hard error rather than a silent
resample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "GeometryMismatchError",
    "Volume",
    "BinaryMask",
    "LabeledMask",
    "default_affine",
    "same_geometry",
    "require_same_geometry",
]

# Spacing must agree with the affine's column norms to this many mm.
GEOMETRY_ATOL = 1e-4


class GeometryMismatchError(ValueError):
    """Two volumes were combined that do not live on the same grid."""


def default_affine(spacing: Sequence[float]) -> np.ndarray:
    """Diagonal voxel-to-world affine for an axis-aligned grid at the origin."""
    a = np.eye(4, dtype=np.float64)
    a[0, 0], a[1, 1], a[2, 2] = spacing
    return a


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class _Grid:
    """Shared geometry validation for volumes and masks."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"degenerate volume shape {data.shape}")
        data = self._coerce(data)
        object.__setattr__(self, "data", _freeze(data))

        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3:
            raise ValueError("spacing must have three entries")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be finite and positive, got {spacing}")
        object.__setattr__(self, "spacing", spacing)

        affine = self.affine
        if affine is None:
            affine = default_affine(spacing)
        affine = np.asarray(affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {affine.shape}")
        if not np.isfinite(affine).all():
            raise ValueError("affine contains non-finite entries")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"affine last row must be [0, 0, 0, 1], got {affine[3]}")
        norms = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))
        if np.abs(norms - spacing).max() > GEOMETRY_ATOL:
            raise ValueError(
                f"affine column norms {norms} disagree with spacing {spacing}"
            )
        object.__setattr__(self, "affine", _freeze(affine))

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        return data

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def voxel_volume_mm3(self) -> float:
        return math.prod(self.spacing)


@dataclass(frozen=True, eq=False)
class Volume(_Grid):
    """A scalar 3-D image. Data is canonically float64 and read-only."""

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if not np.isfinite(data).all():
            raise ValueError("volume data contains NaN or infinity")
        return data

    def with_data(self, data: np.ndarray) -> "Volume":
        """New volume with the same geometry and different intensities."""
        return Volume(data, self.spacing, self.affine)


@dataclass(frozen=True, eq=False)
class BinaryMask(_Grid):
    """A boolean 3-D mask on the same grid convention as :class:`Volume`."""

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        if data.dtype != np.bool_:
            if data.dtype.kind == "f":
                bad = ~np.isin(data, (0.0, 1.0))
            else:
                bad = ~np.isin(data, (0, 1))
            if bad.any():
                raise ValueError(
                    "mask data must contain only 0 and 1 values "
                    f"(found {np.asarray(data)[bad].flat[0]!r})"
                )
            data = data.astype(bool)
        return data

    def with_data(self, data: np.ndarray) -> "BinaryMask":
        return BinaryMask(data, self.spacing, self.affine)

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def volume_mm3(self) -> float:
        return self.voxel_count * self.voxel_volume_mm3


@dataclass(frozen=True, eq=False)
class LabeledMask(_Grid):
    """Integer component labels 1..count on a background of zeros."""

    count: int = 0

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        if data.dtype.kind not in "iu":
            raise ValueError(f"labels must be integers, got dtype {data.dtype}")
        data = data.astype(np.int32, copy=False)
        if data.size and data.min() < 0:
            raise ValueError("labels must be non-negative")
        return data

    def __post_init__(self) -> None:
        super().__post_init__()
        count = int(self.count)
        top = int(self.data.max()) if self.data.size else 0
        if top > count:
            raise ValueError(f"label {top} exceeds declared count {count}")
        object.__setattr__(self, "count", count)

    def component(self, label: int) -> np.ndarray:
        """Boolean support of one component."""
        if not 1 <= label <= self.count:
            raise ValueError(f"label {label} outside 1..{self.count}")
        return self.data == label

    def as_mask(self) -> BinaryMask:
        return BinaryMask(self.data > 0, self.spacing, self.affine)


def same_geometry(a: _Grid, b: _Grid, atol: float = GEOMETRY_ATOL) -> bool:
    """Whether two grids share dims, spacing and affine within ``atol``."""
    if a.dims != b.dims:
        return False
    if a.spacing != b.spacing:
        if np.abs(np.subtract(a.spacing, b.spacing)).max() > atol:
            return False
    # cheap exact check first; fall back to the tolerance compare
    if a.affine is b.affine or np.array_equal(a.affine, b.affine):
        return True
    return bool(np.abs(a.affine - b.affine).max() <= atol)


def require_same_geometry(*grids: _Grid, atol: float = GEOMETRY_ATOL) -> None:
    first = grids[0]
    for other in grids[1:]:
        if not same_geometry(first, other, atol):
            raise GeometryMismatchError(
                f"grids differ: dims {first.dims} vs {other.dims}, "
                f"spacing {first.spacing} vs {other.spacing}"
            )
