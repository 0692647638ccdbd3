"""MRI acquisition-artifact simulators.

Nine effects commonly seen in clinical scans, each driven by an immutable
parameter spec so a sampled plan can be serialized, replayed and audited:

* intensity / resolution: Gaussian blur, edge enhancement, through-plane
  mean filtering, anisotropic downsampling, additive Gaussian noise,
  multiplicative polynomial bias field;
* k-space: motion during acquisition, spike (herringbone) artifacts,
  ghosting.

All spatial filtering uses mirror padding about the edge sample, which
preserves the volume mean exactly for symmetric kernels. k-space effects
return the magnitude of the complex reconstruction, so outputs there are
real and non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import fft as sfft
from scipy import ndimage as ndi

from .volume import Volume

__all__ = [
    "ArtifactError",
    "Blur",
    "EdgeEnhance",
    "AxialMeanFilter",
    "AnisoDownsample",
    "GaussianNoise",
    "BiasField",
    "MotionTransform",
    "Motion",
    "Spike",
    "Ghosting",
    "ArtifactSpec",
    "bias_basis_size",
    "apply_artifact",
]

_PAD = "reflect"  # edge-mirrored; preserves means under symmetric kernels


class ArtifactError(ValueError):
    """Invalid artifact parameters or input domain."""


def _check_axis(axis: int) -> int:
    if axis not in (0, 1, 2):
        raise ArtifactError(f"axis must be 0, 1 or 2, got {axis}")
    return int(axis)


@dataclass(frozen=True)
class Blur:
    """Isotropic Gaussian smoothing with standard deviation ``sd`` voxels."""

    sd: float

    def validate(self) -> None:
        if not (np.isfinite(self.sd) and self.sd > 0):
            raise ArtifactError(f"blur sd must be positive, got {self.sd}")


@dataclass(frozen=True)
class EdgeEnhance:
    """Unsharp masking: 2v - blur(v), sharpening edges."""

    sd: float

    def validate(self) -> None:
        if not (np.isfinite(self.sd) and self.sd > 0):
            raise ArtifactError(f"edge-enhance sd must be positive, got {self.sd}")


@dataclass(frozen=True)
class AxialMeanFilter:
    """Mean filter with a 1x1x``sz`` window along the last axis."""

    sz: int

    def validate(self) -> None:
        if self.sz not in (2, 3, 4):
            raise ArtifactError(f"axial mean filter sz must be 2, 3 or 4, got {self.sz}")


@dataclass(frozen=True)
class AnisoDownsample:
    """Box-average downsampling by ``factor`` along one axis, then cubic
    B-spline upsampling back to the original grid."""

    axis: int
    factor: float

    def validate(self) -> None:
        _check_axis(self.axis)
        if not (np.isfinite(self.factor) and self.factor > 1.0):
            raise ArtifactError(
                f"downsample factor must be > 1, got {self.factor}"
            )


@dataclass(frozen=True)
class GaussianNoise:
    """Additive Gaussian noise. When ``relative`` the sd is a fraction of
    the robust intensity range (p99 - p1); otherwise absolute units."""

    sd: float
    relative: bool = True

    def validate(self) -> None:
        if not (np.isfinite(self.sd) and self.sd >= 0):
            raise ArtifactError(f"noise sd must be non-negative, got {self.sd}")


@dataclass(frozen=True)
class BiasField:
    """Multiplicative smooth field ``exp(p(x))`` with ``p`` a polynomial of
    total degree ``order`` over coordinates normalized to [-1, 1]^3.

    ``coefficients`` follow the monomial basis ordered by total degree,
    then lexicographically by exponent triple; the first entry is the
    constant term.
    """

    order: int
    coefficients: tuple[float, ...]

    def validate(self) -> None:
        if self.order < 1:
            raise ArtifactError(f"bias order must be >= 1, got {self.order}")
        want = bias_basis_size(self.order)
        if len(self.coefficients) != want:
            raise ArtifactError(
                f"bias field of order {self.order} needs {want} coefficients, "
                f"got {len(self.coefficients)}"
            )
        if not np.isfinite(self.coefficients).all():
            raise ArtifactError("bias coefficients must be finite")


@dataclass(frozen=True)
class MotionTransform:
    """One rigid pose: rotation in degrees (about x, y, z through the
    volume centre, composed Rz·Ry·Rx) and translation in mm."""

    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ArtifactError("rotation and translation must each have 3 entries")
        if not (np.isfinite(self.rotation).all() and np.isfinite(self.translation).all()):
            raise ArtifactError("motion parameters must be finite")


@dataclass(frozen=True)
class Motion:
    """Motion during acquisition: k-space is assembled from contiguous
    slabs along ``phase_axis``, each taken from the volume resampled under
    one pose. The first transform should normally be the identity (the
    reference pose)."""

    transforms: tuple[MotionTransform, ...]
    phase_axis: int = 1

    def validate(self) -> None:
        if len(self.transforms) < 1:
            raise ArtifactError("motion needs at least one transform")
        _check_axis(self.phase_axis)
        for t in self.transforms:
            t.validate()


@dataclass(frozen=True)
class Spike:
    """k-space spikes. Positions are fractions of the fftshifted grid in
    [0, 1]^3 (0.5, 0.5, 0.5 is DC); each spike adds
    ``intensity_factor * max|k|`` to that coefficient."""

    positions: tuple[tuple[float, float, float], ...]
    intensity_factor: float

    def validate(self) -> None:
        if len(self.positions) < 1:
            raise ArtifactError("spike needs at least one position")
        for pos in self.positions:
            if len(pos) != 3 or not all(0.0 <= float(p) <= 1.0 for p in pos):
                raise ArtifactError(
                    f"spike positions must be fractions in [0, 1]^3, got {pos}"
                )
        if not (np.isfinite(self.intensity_factor) and self.intensity_factor > 0):
            raise ArtifactError(
                f"spike intensity_factor must be positive, got {self.intensity_factor}"
            )


@dataclass(frozen=True)
class Ghosting:
    """Scale every ``n_ghosts``-th k-space plane along ``axis`` by
    ``1 - intensity``, excluding the DC-carrying plane at index 0."""

    n_ghosts: int
    axis: int
    intensity: float

    def validate(self) -> None:
        if self.n_ghosts < 2:
            raise ArtifactError(f"n_ghosts must be >= 2, got {self.n_ghosts}")
        _check_axis(self.axis)
        if not (np.isfinite(self.intensity) and 0.0 <= self.intensity <= 1.0):
            raise ArtifactError(
                f"ghosting intensity must lie in [0, 1], got {self.intensity}"
            )


ArtifactSpec = Union[
    Blur,
    EdgeEnhance,
    AxialMeanFilter,
    AnisoDownsample,
    GaussianNoise,
    BiasField,
    Motion,
    Spike,
    Ghosting,
]


def bias_basis_size(order: int) -> int:
    """Number of 3-variable monomials with total degree <= order."""
    return math.comb(order + 3, 3)


def bias_exponents(order: int) -> list[tuple[int, int, int]]:
    """Monomial exponent triples in coefficient order."""
    exps = [
        (a, b, c)
        for a in range(order + 1)
        for b in range(order + 1)
        for c in range(order + 1)
        if a + b + c <= order
    ]
    exps.sort(key=lambda e: (sum(e), e))
    return exps


# ---------------------------------------------------------------------------
# kernels

def _blur(data: np.ndarray, sd: float) -> np.ndarray:
    return ndi.gaussian_filter(data, sigma=sd, mode=_PAD)


def _edge_enhance(data: np.ndarray, sd: float) -> np.ndarray:
    return 2.0 * data - _blur(data, sd)


def _axial_mean(data: np.ndarray, sz: int) -> np.ndarray:
    return ndi.uniform_filter1d(data, size=sz, axis=2, mode=_PAD)


def _box_downsample_axis(data: np.ndarray, axis: int, factor: float) -> np.ndarray:
    """Exact box average onto a coarser grid covering the same extent."""
    moved = np.moveaxis(data, axis, -1)
    n = moved.shape[-1]
    n2 = max(1, int(round(n / factor)))
    eff = n / n2  # cover the full extent with n2 equal cells
    edges = np.arange(n2 + 1) * eff
    edges[-1] = n  # guard float drift at the top edge
    cum = np.concatenate(
        [np.zeros(moved.shape[:-1] + (1,)), np.cumsum(moved, axis=-1)], axis=-1
    )
    k = np.minimum(np.floor(edges).astype(int), n - 1)
    frac = edges - k
    # integral of the piecewise-constant signal from 0 to each edge
    integrals = cum[..., k] + frac * moved[..., k]
    out = np.diff(integrals, axis=-1) / eff
    return np.moveaxis(out, -1, axis)


def _aniso_downsample(data: np.ndarray, axis: int, factor: float) -> np.ndarray:
    n = data.shape[axis]
    low = _box_downsample_axis(data, axis, factor)
    zoom = [1.0, 1.0, 1.0]
    zoom[axis] = n / low.shape[axis]
    # mirror, not reflect: it is the one boundary whose cubic prefilter is
    # exact, so flat signals stay flat at the edges
    up = ndi.zoom(low, zoom=zoom, order=3, mode="mirror", grid_mode=True)
    if up.shape != data.shape:  # zoom rounds its output shape
        raise AssertionError(f"upsample produced {up.shape}, wanted {data.shape}")
    return up


def _gaussian_noise(
    data: np.ndarray, sd: float, relative: bool, rng: np.random.Generator
) -> np.ndarray:
    if relative:
        p1, p99 = np.percentile(data, [1.0, 99.0])
        sd = sd * float(p99 - p1)
    if sd == 0.0:
        return data
    return data + rng.standard_normal(data.shape) * sd


def _bias_field(data: np.ndarray, order: int, coefficients) -> np.ndarray:
    shape = data.shape
    axes = [
        np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape
    ]
    vander = [np.stack([ax**d for d in range(order + 1)], axis=1) for ax in axes]
    coef_cube = np.zeros((order + 1,) * 3)
    for (a, b, c), value in zip(bias_exponents(order), coefficients):
        coef_cube[a, b, c] = value
    log_field = np.einsum(
        "abc,xa,yb,zc->xyz", coef_cube, *vander, optimize=True
    )
    return data * np.exp(log_field)


def _rigid_resample(
    data: np.ndarray, spacing, transform: MotionTransform
) -> np.ndarray:
    rot = np.deg2rad(transform.rotation)
    cx, cy, cz = np.cos(rot)
    sx, sy, sz = np.sin(rot)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    rotation = rz @ ry @ rx
    if np.allclose(rotation, np.eye(3)) and not any(transform.translation):
        return data
    scale = np.diag(spacing)
    inv_scale = np.diag(1.0 / np.asarray(spacing))
    centre_mm = scale @ ((np.array(data.shape) - 1) / 2.0)
    # output voxel -> input voxel under the inverse rigid map in mm space
    matrix = inv_scale @ rotation.T @ scale
    offset = inv_scale @ (
        rotation.T @ (-centre_mm - np.asarray(transform.translation)) + centre_mm
    )
    return ndi.affine_transform(
        data, matrix=matrix, offset=offset, order=1, mode=_PAD
    )


def _motion(
    data: np.ndarray, spacing, transforms, phase_axis: int
) -> np.ndarray:
    n = data.shape[phase_axis]
    n_t = len(transforms)
    # equal contiguous slabs, remainder folded into the last one
    bounds = [i * (n // n_t) for i in range(n_t)] + [n]
    kspace = np.empty(data.shape, dtype=np.complex128)
    index = [slice(None)] * 3
    for i, t in enumerate(transforms):
        lo, hi = bounds[i], bounds[i + 1]
        if lo >= hi:
            continue
        posed = sfft.fftn(_rigid_resample(data, spacing, t))
        index[phase_axis] = slice(lo, hi)
        kspace[tuple(index)] = posed[tuple(index)]
    return np.abs(sfft.ifftn(kspace))


def _spike(data: np.ndarray, positions, intensity_factor: float) -> np.ndarray:
    kspace = sfft.fftshift(sfft.fftn(data))
    peak = np.abs(kspace).max()
    dims = np.array(data.shape)
    for pos in positions:
        idx = tuple(
            int(np.clip(round(float(p) * (n - 1)), 0, n - 1))
            for p, n in zip(pos, dims)
        )
        kspace[idx] += intensity_factor * peak
    return np.abs(sfft.ifftn(sfft.ifftshift(kspace)))


def _ghosting(data: np.ndarray, n_ghosts: int, axis: int, intensity: float) -> np.ndarray:
    kspace = sfft.fftn(data)
    idx = np.arange(data.shape[axis])
    planes = (idx % n_ghosts == 0) & (idx != 0)
    scale = np.where(planes, 1.0 - intensity, 1.0)
    shape = [1, 1, 1]
    shape[axis] = len(idx)
    kspace *= scale.reshape(shape)
    return np.abs(sfft.ifftn(kspace))


# ---------------------------------------------------------------------------

def apply_artifact(
    volume: Volume, spec: ArtifactSpec, rng: np.random.Generator | None = None
) -> Volume:
    """Apply one artifact to a volume, returning a new volume on the same
    grid. Only :class:`GaussianNoise` consumes randomness; passing ``rng``
    is then mandatory. Geometry is never altered: downsampling returns to
    the original grid by interpolation.
    """
    spec.validate()
    data = volume.data  # Volume guarantees finite float64
    if isinstance(spec, Blur):
        out = _blur(data, spec.sd)
    elif isinstance(spec, EdgeEnhance):
        out = _edge_enhance(data, spec.sd)
    elif isinstance(spec, AxialMeanFilter):
        out = _axial_mean(data, spec.sz)
    elif isinstance(spec, AnisoDownsample):
        out = _aniso_downsample(data, spec.axis, spec.factor)
    elif isinstance(spec, GaussianNoise):
        if spec.sd > 0 and rng is None:
            raise ArtifactError("GaussianNoise requires an rng")
        out = _gaussian_noise(data, spec.sd, spec.relative, rng)
    elif isinstance(spec, BiasField):
        out = _bias_field(data, spec.order, spec.coefficients)
    elif isinstance(spec, Motion):
        out = _motion(data, volume.spacing, spec.transforms, spec.phase_axis)
    elif isinstance(spec, Spike):
        out = _spike(data, spec.positions, spec.intensity_factor)
    elif isinstance(spec, Ghosting):
        out = _ghosting(data, spec.n_ghosts, spec.axis, spec.intensity)
    else:
        raise ArtifactError(f"unknown artifact spec {type(spec).__name__}")
    return volume.with_data(out)
