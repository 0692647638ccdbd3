"""Connected-component labelling and size-based lesion filtering.

Components are labelled deterministically: label 1 is the component whose
first voxel comes earliest in C scan order (axis 0 slowest), label 2 the
next, and so on. This keeps label numbering stable across library versions
so fate assignments and reports can reference labels by value.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from .volume import BinaryMask, LabeledMask

__all__ = [
    "connectivity_structure",
    "connected_components",
    "lesion_volume_mm3",
    "component_volumes_mm3",
    "filter_small_lesions",
]

_CONNECTIVITY_STEPS = {6: 1, 18: 2, 26: 3}
_STRUCTURES: dict[int, np.ndarray] = {}


def connectivity_structure(connectivity: int) -> np.ndarray:
    """3x3x3 structuring element for 6-, 18- or 26-neighbourhoods.

    The returned array is shared and read-only; copy it before mutating.
    """
    try:
        structure = _STRUCTURES[connectivity]
    except KeyError:
        try:
            steps = _CONNECTIVITY_STEPS[connectivity]
        except KeyError:
            raise ValueError(
                f"connectivity must be one of {sorted(_CONNECTIVITY_STEPS)}, "
                f"got {connectivity}"
            ) from None
        structure = ndi.generate_binary_structure(3, steps)
        structure.setflags(write=False)
        _STRUCTURES[connectivity] = structure
    return structure


def label_array(data: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Scan-order component labels of a boolean array, without the
    :class:`LabeledMask` wrapper. Returns (labels, count)."""
    structure = connectivity_structure(connectivity)
    labels, n = ndi.label(data, structure=structure)
    if n > 1:
        labels = _relabel_scan_order(labels)
    return labels, int(n)


def connected_components(mask: BinaryMask, connectivity: int = 26) -> LabeledMask:
    """Label the foreground of ``mask`` into connected components.

    Returns a :class:`LabeledMask` whose labels 1..count partition the
    foreground; an all-background mask yields count 0.
    """
    labels, n = label_array(mask.data, connectivity)
    return LabeledMask(labels, mask.spacing, mask.affine, count=n)


def _relabel_scan_order(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    values = flat[nz]
    uniq, first = np.unique(values, return_index=True)
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(uniq.max()) + 1, dtype=labels.dtype)
    lut[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=labels.dtype)
    return lut[labels]


def lesion_volume_mm3(labeled: LabeledMask, label: int) -> float:
    """Physical volume of one component in cubic millimetres."""
    support = labeled.component(label)  # validates the label range
    return float(np.count_nonzero(support)) * labeled.voxel_volume_mm3


def component_volumes_mm3(labeled: LabeledMask) -> np.ndarray:
    """Volumes of all components, indexed so entry i is label i+1."""
    counts = np.bincount(labeled.data.ravel(), minlength=labeled.count + 1)
    return counts[1:].astype(np.float64) * labeled.voxel_volume_mm3


def filter_small_lesions(
    mask: BinaryMask, min_mm3: float = 3.0, connectivity: int = 26
) -> BinaryMask:
    """Drop components strictly smaller than ``min_mm3``.

    The boundary is inclusive: a component of exactly ``min_mm3`` survives.
    """
    if min_mm3 < 0:
        raise ValueError(f"min_mm3 must be non-negative, got {min_mm3}")
    labeled = connected_components(mask, connectivity)
    if labeled.count == 0:
        return mask
    volumes = component_volumes_mm3(labeled)
    keep = np.concatenate([[False], volumes >= min_mm3])
    return BinaryMask(keep[labeled.data], mask.spacing, mask.affine)
