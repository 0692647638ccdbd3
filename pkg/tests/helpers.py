"""Independent oracles and fixture builders shared across the tests.

Nothing in here reuses library internals: the NIfTI writer packs header
fields by hand, component labeling is a naive flood fill, the metric
oracles materialize every component and apply the counting rules
literally, and the Wilcoxon oracle enumerates sign assignments. Where a
library result is compared against these, agreement is meaningful.
"""

from __future__ import annotations

import gzip
import struct
from collections import deque
from pathlib import Path

import numpy as np

# ---------------------------------------------------------------------------
# raw NIfTI-1 writer (hand-packed, field by field)

_FIELD_ORDER = [
    ("sizeof_hdr", "i"),
    ("data_type", "10s"),
    ("db_name", "18s"),
    ("extents", "i"),
    ("session_error", "h"),
    ("regular", "c"),
    ("dim_info", "B"),
    ("dim", "8h"),
    ("intent_p1", "f"),
    ("intent_p2", "f"),
    ("intent_p3", "f"),
    ("intent_code", "h"),
    ("datatype", "h"),
    ("bitpix", "h"),
    ("slice_start", "h"),
    ("pixdim", "8f"),
    ("vox_offset", "f"),
    ("scl_slope", "f"),
    ("scl_inter", "f"),
    ("slice_end", "h"),
    ("slice_code", "B"),
    ("xyzt_units", "B"),
    ("cal_max", "f"),
    ("cal_min", "f"),
    ("slice_duration", "f"),
    ("toffset", "f"),
    ("glmax", "i"),
    ("glmin", "i"),
    ("descrip", "80s"),
    ("aux_file", "24s"),
    ("qform_code", "h"),
    ("sform_code", "h"),
    ("quatern_b", "f"),
    ("quatern_c", "f"),
    ("quatern_d", "f"),
    ("qoffset_x", "f"),
    ("qoffset_y", "f"),
    ("qoffset_z", "f"),
    ("srow_x", "4f"),
    ("srow_y", "4f"),
    ("srow_z", "4f"),
    ("intent_name", "16s"),
    ("magic", "4s"),
]

DT_CODES = {"uint8": 2, "int16": 4, "float32": 16, "float64": 64}
DT_BITS = {"uint8": 8, "int16": 16, "float32": 32, "float64": 64}


def build_nifti_bytes(
    data: np.ndarray,
    spacing=(1.0, 1.0, 1.0),
    *,
    dtype: str = "float32",
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    sform: np.ndarray | None = None,
    sform_code: int = 0,
    qform_code: int = 0,
    quaternion=(0.0, 0.0, 0.0),
    qoffset=(0.0, 0.0, 0.0),
    magic: bytes = b"n+1\x00",
    dim0: int | None = None,
    dim4: int = 1,
    datatype_code: int | None = None,
    bitpix: int | None = None,
    vox_offset: float = 352.0,
    extension: bytes = b"\x00\x00\x00\x00",
    byteorder: str = "<",
    qfac: float = 1.0,
) -> bytes:
    """Pack an uncompressed single-file NIfTI-1 byte string by hand.

    Every knob a malformed-file test needs is exposed; the defaults give
    a minimal valid little-endian file with a pixdim-only geometry.
    """
    data = np.asarray(data)
    shape = data.shape
    values: dict[str, object] = {name: None for name, _ in _FIELD_ORDER}
    values.update(
        sizeof_hdr=348,
        data_type=b"",
        db_name=b"",
        extents=0,
        session_error=0,
        regular=b"r",
        dim_info=0,
        dim=[dim0 if dim0 is not None else 3, *shape, dim4, 1, 1, 1],
        intent_p1=0.0, intent_p2=0.0, intent_p3=0.0,
        intent_code=0,
        datatype=datatype_code if datatype_code is not None else DT_CODES[dtype],
        bitpix=bitpix if bitpix is not None else DT_BITS[dtype],
        slice_start=0,
        pixdim=[qfac, *spacing, 0.0, 0.0, 0.0, 0.0],
        vox_offset=vox_offset,
        scl_slope=scl_slope,
        scl_inter=scl_inter,
        slice_end=0, slice_code=0, xyzt_units=2,
        cal_max=0.0, cal_min=0.0, slice_duration=0.0, toffset=0.0,
        glmax=0, glmin=0,
        descrip=b"", aux_file=b"",
        qform_code=qform_code,
        sform_code=sform_code,
        quatern_b=quaternion[0], quatern_c=quaternion[1],
        quatern_d=quaternion[2],
        qoffset_x=qoffset[0], qoffset_y=qoffset[1], qoffset_z=qoffset[2],
        srow_x=[0.0] * 4, srow_y=[0.0] * 4, srow_z=[0.0] * 4,
        intent_name=b"", magic=magic,
    )
    if sform is not None:
        values["srow_x"] = list(np.asarray(sform)[0, :4])
        values["srow_y"] = list(np.asarray(sform)[1, :4])
        values["srow_z"] = list(np.asarray(sform)[2, :4])

    packed = b""
    for name, fmt in _FIELD_ORDER:
        v = values[name]
        if fmt[0].isdigit() and fmt[-1] != "s":
            packed += struct.pack(byteorder + fmt, *v)  # array field
        else:
            packed += struct.pack(byteorder + fmt, v)
    assert len(packed) == 348
    arr = np.asfortranarray(data, dtype=dtype)
    if byteorder == ">":
        arr = arr.byteswap()
    return packed + extension + arr.tobytes(order="F")


def write_nifti(path: Path, data, spacing=(1.0, 1.0, 1.0), **kwargs) -> Path:
    """Write :func:`build_nifti_bytes` output, gzipped iff the name says so."""
    blob = build_nifti_bytes(data, spacing, **kwargs)
    path = Path(path)
    if path.name.endswith(".gz"):
        path.write_bytes(gzip.compress(blob))
    else:
        path.write_bytes(blob)
    return path


# ---------------------------------------------------------------------------
# connected components by flood fill

def neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    offsets = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                manhattan = abs(dx) + abs(dy) + abs(dz)
                if manhattan == 0:
                    continue
                if connectivity == 6 and manhattan > 1:
                    continue
                if connectivity == 18 and manhattan > 2:
                    continue
                offsets.append((dx, dy, dz))
    return offsets


def flood_components(mask: np.ndarray, connectivity: int) -> list[set]:
    """Components as voxel-coordinate sets, ordered by first voxel in
    C scan order."""
    mask = np.asarray(mask, dtype=bool)
    offsets = neighbor_offsets(connectivity)
    seen = np.zeros(mask.shape, dtype=bool)
    components = []
    for start in np.ndindex(*mask.shape):
        if not mask[start] or seen[start]:
            continue
        comp = set()
        queue = deque([start])
        seen[start] = True
        while queue:
            vox = queue.popleft()
            comp.add(vox)
            for off in offsets:
                nb = tuple(v + o for v, o in zip(vox, off))
                if any(c < 0 or c >= n for c, n in zip(nb, mask.shape)):
                    continue
                if mask[nb] and not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        components.append(comp)
    return components


# ---------------------------------------------------------------------------
# metric oracles

def brute_dice(pred: np.ndarray, gt: np.ndarray) -> float:
    p = {tuple(v) for v in np.argwhere(pred)}
    g = {tuple(v) for v in np.argwhere(gt)}
    if not p and not g:
        return 1.0
    return 2.0 * len(p & g) / (len(p) + len(g))


def brute_lesion_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    voxel_mm3: float = 1.0,
    min_lesion_mm3: float = 3.0,
    sens_overlap: float = 0.10,
    ppv_overlap: float = 0.65,
    ppv_outside: float = 0.70,
    connectivity: int = 26,
    filter_scope: str = "both",
):
    """Literal application of the counting rules; returns
    (s_l, p_l, les_f1, n_gt, n_pred, detected, tp)."""

    def filtered(mask, side):
        comps = flood_components(mask, connectivity)
        if min_lesion_mm3 > 0 and filter_scope in ("both", side):
            comps = [c for c in comps if len(c) * voxel_mm3 >= min_lesion_mm3]
        return comps

    gt_comps = filtered(gt, "gt")
    pred_comps = filtered(pred, "pred")
    gt_support = set().union(*gt_comps) if gt_comps else set()
    pred_support = set().union(*pred_comps) if pred_comps else set()

    detected = sum(
        1 for c in gt_comps if len(c & pred_support) / len(c) >= sens_overlap
    )
    tp = sum(
        1
        for c in pred_comps
        if len(c & gt_support) / len(c) >= ppv_overlap
        and len(c - gt_support) / len(c) <= ppv_outside
    )
    s_l = detected / len(gt_comps) if gt_comps else 1.0
    p_l = tp / len(pred_comps) if pred_comps else 1.0
    les_f1 = 2.0 * s_l * p_l / (s_l + p_l) if (s_l + p_l) > 0 else 0.0
    return s_l, p_l, les_f1, len(gt_comps), len(pred_comps), detected, tp


# ---------------------------------------------------------------------------
# Wilcoxon oracle by full sign enumeration

def average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_enumerate(a, b):
    """Exact two-sided signed-rank p by enumerating all 2^n signings."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = average_ranks(np.abs(d))
    w_plus = ranks[d > 0].sum()
    w_minus = ranks[d < 0].sum()
    stat = min(w_plus, w_minus)
    total = ranks.sum()
    low = high = 0
    for bits in range(2 ** n):
        w = sum(ranks[i] for i in range(n) if bits >> i & 1)
        if w <= stat:
            low += 1
        if w >= total - stat:
            high += 1
    p = (low + high) / 2.0 ** n
    return stat, min(1.0, p)


# ---------------------------------------------------------------------------
# 1-D mean filter oracle (reflect padding about the edge sample)

def mean_filter_1d(x: np.ndarray, sz: int) -> np.ndarray:
    n = len(x)

    def reflect(i: int) -> int:
        while i < 0 or i >= n:
            i = -1 - i if i < 0 else 2 * n - 1 - i
        return i

    out = np.empty(n, dtype=float)
    left = sz // 2
    for i in range(n):
        window = [x[reflect(i - left + k)] for k in range(sz)]
        out[i] = sum(window) / sz
    return out


# ---------------------------------------------------------------------------
# lesion-count fixtures that hit published score arithmetic exactly

def score_anchor_masks(
    n_match: int,
    n_gt_only: int,
    n_pred_only: int,
    big_gt: int,
    big_pred_start: int,
    big_pred_len: int,
    patch_width: int = 40,
):
    """Masks with exact rational dice and lesion scores.

    Singleton lesions sit on a pitch-3 lattice: ``n_match`` voxels appear
    in both masks, then ``n_gt_only`` / ``n_pred_only`` in one each. One
    large component pair is drawn as raster-order cell runs of a 2-D
    patch (runs of a raster scan are 8-connected, hence single
    components): ground truth covers cells [0, big_gt), the prediction
    cells [big_pred_start, big_pred_start + big_pred_len).

    Returns (pred, gt) boolean arrays; use 2 mm spacing so singletons
    survive a 3 mm^3 size filter.
    """
    n_rows = -(-(big_gt + big_pred_len + big_pred_start) // patch_width) + 1
    sites_needed = n_match + n_gt_only + n_pred_only
    lattice = [
        (x, y, z)
        for x in range(0, 54, 3)
        for y in range(0, 54, 3)
        for z in range(0, 18, 3)
    ]
    assert len(lattice) >= sites_needed, "enlarge the lattice"
    dims = (max(54, n_rows + 2), max(54, patch_width + 2), 21)
    pred = np.zeros(dims, dtype=bool)
    gt = np.zeros(dims, dtype=bool)

    for k, site in enumerate(lattice[:sites_needed]):
        if k < n_match:
            pred[site] = gt[site] = True
        elif k < n_match + n_gt_only:
            gt[site] = True
        else:
            pred[site] = True

    z_patch = 20  # two planes above the lattice's top (z=15): not adjacent
    for cell in range(big_gt):
        gt[cell // patch_width, cell % patch_width, z_patch] = True
    for cell in range(big_pred_start, big_pred_start + big_pred_len):
        pred[cell // patch_width, cell % patch_width, z_patch] = True
    return pred, gt
