"""Voxel- and lesion-wise scoring of new-lesion segmentations.

Scores follow the evaluation used for longitudinal lesion detection:

* Dice over voxels;
* lesion-wise sensitivity S_L (a ground-truth lesion counts as detected
  when at least 10 % of it is covered) and precision P_L (a predicted
  lesion is a true positive when at least 65 % of it overlaps ground
  truth and no more than 70 % falls outside);
* LesF1, their harmonic mean, and the average of Dice and LesF1.

Components smaller than 3 mm^3 are removed before counting (inclusive
boundary: exactly 3 mm^3 survives). Empty-mask conventions: with no
ground-truth lesions S_L is 1, with no predicted lesions P_L is 1, and
two empty masks score 1.0 across the board; reports flag these cases.

Also here: ensemble consensus voting and a Wilcoxon signed-rank test
(exact null distribution for small samples, normal approximation with
tie correction otherwise) for paired method comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_DOWN, ROUND_HALF_UP, Decimal
from typing import NamedTuple, Sequence

import numpy as np

from .components import connectivity_structure, label_array
from .volume import BinaryMask, Volume, require_same_geometry

__all__ = [
    "DetectionThresholds",
    "LesionTables",
    "CaseReport",
    "dice",
    "lesion_metrics",
    "evaluate_case",
    "consensus",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
    "avg_score",
    "round_score",
]

_FILTER_SCOPES = ("both", "gt", "pred", "none")


@dataclass(frozen=True)
class DetectionThresholds:
    """Rule set for lesion counting.

    ``min_lesion_mm3`` drops small components (inclusive boundary) from
    the masks named by ``filter_scope``. The overlap thresholds are all
    inclusive fractions.
    """

    min_lesion_mm3: float = 3.0
    sens_overlap: float = 0.10
    ppv_overlap: float = 0.65
    ppv_outside: float = 0.70
    connectivity: int = 26
    filter_scope: str = "both"

    def __post_init__(self) -> None:
        if self.min_lesion_mm3 < 0:
            raise ValueError(f"min_lesion_mm3 must be >= 0, got {self.min_lesion_mm3}")
        for name in ("sens_overlap", "ppv_overlap", "ppv_outside"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.filter_scope not in _FILTER_SCOPES:
            raise ValueError(
                f"filter_scope must be one of {_FILTER_SCOPES}, got {self.filter_scope!r}"
            )
        connectivity_structure(self.connectivity)  # validates the value

    def to_dict(self) -> dict:
        return {
            "min_lesion_mm3": self.min_lesion_mm3,
            "sens_overlap": self.sens_overlap,
            "ppv_overlap": self.ppv_overlap,
            "ppv_outside": self.ppv_outside,
            "connectivity": self.connectivity,
            "filter_scope": self.filter_scope,
        }

    @staticmethod
    def from_dict(payload) -> "DetectionThresholds":
        return DetectionThresholds(**dict(payload))


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Voxel Dice overlap; both masks empty scores 1.0."""
    require_same_geometry(pred, gt)
    p = pred.data
    g = gt.data
    tp = int(np.count_nonzero(p & g))
    denom = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


@dataclass(frozen=True)
class LesionTables:
    """Lesion-wise scores plus the per-component match tables."""

    s_l: float
    p_l: float
    les_f1: float
    n_gt: int
    n_pred: int
    n_detected: int
    n_true_positive: int
    gt_rows: tuple[dict, ...] = ()
    pred_rows: tuple[dict, ...] = ()


def lesion_metrics(
    pred: BinaryMask, gt: BinaryMask, thresholds: DetectionThresholds | None = None
) -> LesionTables:
    """Lesion-wise sensitivity, precision and F1 with match tables."""
    th = thresholds or DetectionThresholds()
    require_same_geometry(pred, gt)

    lab_gt, sizes_gt = _labels_after_filter(gt, th, scope="gt")
    lab_pred, sizes_pred = _labels_after_filter(pred, th, scope="pred")
    n_gt = len(sizes_gt)
    n_pred = len(sizes_pred)

    # pairwise intersection histogram in one pass (labels 0 = background)
    pair = lab_gt.ravel().astype(np.int64) * (n_pred + 1) + lab_pred.ravel()
    inter = np.bincount(pair, minlength=(n_gt + 1) * (n_pred + 1)).reshape(
        n_gt + 1, n_pred + 1
    )

    vox_mm3 = gt.voxel_volume_mm3
    gt_rows = []
    n_detected = 0
    for i in range(1, n_gt + 1):
        size = int(sizes_gt[i - 1])
        covered = size - int(inter[i, 0])
        frac = covered / size
        detected = frac >= th.sens_overlap
        n_detected += bool(detected)
        gt_rows.append(
            {
                "label": i,
                "volume_mm3": size * vox_mm3,
                "overlap": frac,
                "detected": bool(detected),
            }
        )

    pred_rows = []
    n_tp = 0
    for j in range(1, n_pred + 1):
        size = int(sizes_pred[j - 1])
        outside = int(inter[0, j]) / size
        overlapped = (size - int(inter[0, j])) / size
        is_tp = overlapped >= th.ppv_overlap and outside <= th.ppv_outside
        n_tp += bool(is_tp)
        pred_rows.append(
            {
                "label": j,
                "volume_mm3": size * vox_mm3,
                "overlap": overlapped,
                "outside": outside,
                "true_positive": bool(is_tp),
            }
        )

    s_l = n_detected / n_gt if n_gt else 1.0
    p_l = n_tp / n_pred if n_pred else 1.0
    les_f1 = 2.0 * s_l * p_l / (s_l + p_l) if (s_l + p_l) > 0 else 0.0
    return LesionTables(
        s_l=s_l,
        p_l=p_l,
        les_f1=les_f1,
        n_gt=n_gt,
        n_pred=n_pred,
        n_detected=n_detected,
        n_true_positive=n_tp,
        gt_rows=tuple(gt_rows),
        pred_rows=tuple(pred_rows),
    )


def _labels_after_filter(mask: BinaryMask, th: DetectionThresholds, scope: str):
    """Label a mask, dropping small components when the scope says so.

    Returns (label array, voxel sizes of surviving labels in order).
    """
    labels, count = label_array(mask.data, th.connectivity)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    if th.min_lesion_mm3 > 0 and th.filter_scope in ("both", scope):
        keep = sizes * mask.voxel_volume_mm3 >= th.min_lesion_mm3
    else:
        keep = np.ones(count, dtype=bool)
    if keep.all():
        return labels, sizes
    lut = np.zeros(count + 1, dtype=np.int32)
    lut[1:][keep] = np.arange(1, int(keep.sum()) + 1)
    return lut[labels], sizes[keep]


@dataclass(frozen=True)
class CaseReport:
    """Everything measured on one case.

    ``empty_gt``/``empty_pred`` flag cases scored by the empty-mask
    conventions rather than by actual overlap.
    """

    dice: float
    tp: int
    fp: int
    fn: int
    lesion_sensitivity: float
    lesion_ppv: float
    les_f1: float
    avg_score: float
    n_gt_lesions: int
    n_pred_lesions: int
    detected_gt: int
    tp_pred: int
    empty_gt: bool
    empty_pred: bool
    gt_rows: tuple[dict, ...] = field(default_factory=tuple, repr=False)
    pred_rows: tuple[dict, ...] = field(default_factory=tuple, repr=False)

    def to_dict(self, tables: bool = True) -> dict:
        out = {
            "dice": self.dice,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "lesion_sensitivity": self.lesion_sensitivity,
            "lesion_ppv": self.lesion_ppv,
            "les_f1": self.les_f1,
            "avg_score": self.avg_score,
            "n_gt_lesions": self.n_gt_lesions,
            "n_pred_lesions": self.n_pred_lesions,
            "detected_gt": self.detected_gt,
            "tp_pred": self.tp_pred,
            "empty_gt": self.empty_gt,
            "empty_pred": self.empty_pred,
        }
        if tables:
            out["gt_lesions"] = list(self.gt_rows)
            out["pred_lesions"] = list(self.pred_rows)
        return out


def evaluate_case(
    pred: BinaryMask, gt: BinaryMask, thresholds: DetectionThresholds | None = None
) -> CaseReport:
    """Voxel Dice plus lesion-wise scores for one (prediction, truth) pair."""
    th = thresholds or DetectionThresholds()
    tables = lesion_metrics(pred, gt, th)
    d = dice(pred, gt)
    p = pred.data
    g = gt.data
    return CaseReport(
        dice=d,
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        lesion_sensitivity=tables.s_l,
        lesion_ppv=tables.p_l,
        les_f1=tables.les_f1,
        avg_score=avg_score(d, tables.les_f1),
        n_gt_lesions=tables.n_gt,
        n_pred_lesions=tables.n_pred,
        detected_gt=tables.n_detected,
        tp_pred=tables.n_true_positive,
        empty_gt=tables.n_gt == 0,
        empty_pred=tables.n_pred == 0,
        gt_rows=tables.gt_rows,
        pred_rows=tables.pred_rows,
    )


def consensus(probability_maps: Sequence[Volume], threshold: float = 0.5) -> BinaryMask:
    """Ensemble vote: mean probability >= threshold (inclusive).

    Maps must share a grid and hold values in [0, 1].
    """
    maps = list(probability_maps)
    if not maps:
        raise ValueError("consensus needs at least one probability map")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    require_same_geometry(*maps)
    stack_min = min(float(m.data.min()) for m in maps)
    stack_max = max(float(m.data.max()) for m in maps)
    if stack_min < 0.0 or stack_max > 1.0:
        raise ValueError(
            f"probability maps must lie in [0, 1], found range "
            f"[{stack_min}, {stack_max}]"
        )
    mean = maps[0].data.astype(np.float64).copy()
    for m in maps[1:]:
        mean += m.data
    mean /= len(maps)
    return BinaryMask(mean >= threshold, maps[0].spacing, maps[0].affine)


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float


def _rank_abs(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n of |values| with ties given their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_cdf_leq(ranks: np.ndarray, w: float) -> float:
    """P(W+ <= w) under the exact signed-rank null for integer ranks."""
    total = int(ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks.astype(int):
        counts[r:] += counts[:-r].copy()
    return float(counts[: int(math.floor(w)) + 1].sum() / 2.0 ** len(ranks))


def wilcoxon_signed_rank(
    a: Sequence[float], b: Sequence[float]
) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped. With 25 or fewer effective pairs and no
    tied absolute differences the p-value comes from the exact null
    distribution; otherwise from the normal approximation with tie
    correction (no continuity correction). The statistic is
    min(W+, W-).
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and equal length, "
                         f"got {x.shape} and {y.shape}")
    if len(x) == 0:
        raise ValueError("empty samples")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("samples contain non-finite values")

    diff = x - y
    diff = diff[diff != 0.0]
    n = len(diff)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0)

    magnitudes = np.abs(diff)
    ranks = _rank_abs(magnitudes)
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    statistic = min(w_plus, w_minus)

    has_ties = len(np.unique(magnitudes)) < n
    if n <= 25 and not has_ties:
        p = min(1.0, 2.0 * _exact_cdf_leq(ranks, statistic))
        return WilcoxonResult(statistic=statistic, p_value=p)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(magnitudes, return_counts=True)
    var -= (tie_counts.astype(np.float64) ** 3 - tie_counts).sum() / 48.0
    if var <= 0:
        return WilcoxonResult(statistic=statistic, p_value=1.0)
    z = (statistic - mean) / math.sqrt(var)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(statistic=statistic, p_value=p)


def avg_score(dice_value: float, les_f1_value: float) -> float:
    """Mean of Dice and LesF1, the headline per-case number."""
    return (dice_value + les_f1_value) / 2.0


def round_score(value: float, ndigits: int = 3) -> float:
    """Presentation rounding with ties-to-odd at decimal midpoints.

    Scores that land exactly on a decimal midpoint (after shortest-repr
    decimalization) round to the neighbour whose last digit is odd;
    everything else rounds to nearest. This keeps averaged tabulated
    scores consistent with their published form when the mean of two
    3-digit numbers is a midpoint.
    """
    d = Decimal(repr(float(value)))
    q = Decimal(1).scaleb(-ndigits)
    down = d.quantize(q, rounding=ROUND_HALF_DOWN)
    up = d.quantize(q, rounding=ROUND_HALF_UP)
    if down == up:
        return float(down)
    return float(up if int(up.as_tuple().digits[-1]) % 2 == 1 else down)
