"""Synthetic longitudinal pair construction.

Given one scan and its lesion mask, build a plausible (baseline,
follow-up) pair with known ground truth for *new* lesions:

1. every existing lesion component is assigned a fate: kept in both
   timepoints, removed from the baseline (so it "appears" and counts as
   new), removed from the follow-up, or removed from both;
2. extra lesion-like regions may be generated at sampled sites, either in
   the follow-up only (new) or in both timepoints (not new);
3. edits are carried out by a pluggable editor: the built-in one uses
   diffusion inpainting and intensity-model synthesis, or an external
   program can be attached through a file-based protocol;
4. each timepoint is optionally degraded through an independently sampled
   artifact plan, and the pair is jointly reoriented.

The new-lesion ground truth is exactly (components removed from the
baseline) union (regions generated in the follow-up only).
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy import ndimage as ndi

from .augment import (
    AugmentationPlan,
    SamplingPolicy,
    apply_orthogonal,
    apply_plan,
    plan_to_dict,
    policy_from_dict,
    policy_to_dict,
    sample_plan,
)
from .components import connected_components, connectivity_structure
from .nifti import load_volume, save_mask, save_volume
from .volume import BinaryMask, LabeledMask, Volume, require_same_geometry

__all__ = [
    "SynthesisError",
    "NoValidSiteError",
    "InsufficientContextError",
    "EditorFailureError",
    "LesionFate",
    "SynthesisPolicy",
    "GeneratedRegion",
    "SyntheticPair",
    "Editor",
    "BaselineEditor",
    "ExternalEditor",
    "external_editor",
    "BLEND_MARGIN",
    "RING_WIDTH",
    "blend_edit",
    "baseline_inpaint",
    "baseline_generate",
    "assign_fates",
    "sample_generation_sites",
    "synthesize_pair",
    "pair_provenance",
    "verify_new_lesion_mask",
]

log = logging.getLogger(__name__)

# voxels over which an edit ramps back into the untouched image
BLEND_MARGIN = 2

# the intensity context of an edit: its region dilated this many times
RING_WIDTH = 3

# smoothing applied inside an inpainted region, in voxels
_INPAINT_SMOOTH_SD = 0.8

# generated regions aim at ring mean times a factor from this range
_GENERATE_FACTOR_RANGE = (1.2, 1.8)

MAX_SITE_ATTEMPTS = 1000


class SynthesisError(ValueError):
    """Invalid synthesis inputs or policy."""


class NoValidSiteError(SynthesisError):
    """No voxel is eligible to host a generated lesion."""


class InsufficientContextError(SynthesisError):
    """An edit region has no surrounding tissue to take statistics from."""


class EditorFailureError(RuntimeError):
    """An external editor crashed, timed out or returned bad output."""


class LesionFate(str, Enum):
    KEEP_BOTH = "keep_both"
    REMOVE_T1 = "remove_t1"
    REMOVE_T2 = "remove_t2"
    REMOVE_BOTH = "remove_both"


_FATE_ORDER = (
    LesionFate.KEEP_BOTH,
    LesionFate.REMOVE_T1,
    LesionFate.REMOVE_T2,
    LesionFate.REMOVE_BOTH,
)


@dataclass(frozen=True)
class SynthesisPolicy:
    """Knobs for pair construction.

    ``fate_probs`` must sum to 1; the default draws each fate uniformly.
    ``n_generated`` is an inclusive integer range of extra regions to
    place. ``p_t2_only`` is the chance a generated region appears only in
    the follow-up (and therefore counts as new). ``augmentation`` of None
    disables intensity degradation entirely.
    """

    fate_probs: Mapping[LesionFate, float] = field(
        default_factory=lambda: {f: 0.25 for f in _FATE_ORDER}
    )
    n_generated: tuple[int, int] = (0, 3)
    p_t2_only: float = 0.5
    semi_axes_mm: tuple[float, float] = (1.5, 4.0)
    connectivity: int = 26
    augmentation: SamplingPolicy | None = field(default_factory=SamplingPolicy)
    spatial_augmentation: bool = True

    def __post_init__(self) -> None:
        probs = {LesionFate(k): float(v) for k, v in dict(self.fate_probs).items()}
        for fate in _FATE_ORDER:
            probs.setdefault(fate, 0.0)
        if any(p < 0 or p > 1 for p in probs.values()):
            raise SynthesisError(f"fate probabilities must lie in [0, 1]: {probs}")
        total = sum(probs.values())
        if abs(total - 1.0) > 1e-9:
            raise SynthesisError(f"fate probabilities sum to {total}, expected 1")
        object.__setattr__(self, "fate_probs", probs)

        lo, hi = (int(n) for n in self.n_generated)
        if lo < 0 or hi < lo:
            raise SynthesisError(f"bad n_generated range ({lo}, {hi})")
        object.__setattr__(self, "n_generated", (lo, hi))

        if not 0.0 <= self.p_t2_only <= 1.0:
            raise SynthesisError(f"p_t2_only must lie in [0, 1], got {self.p_t2_only}")
        a_lo, a_hi = (float(a) for a in self.semi_axes_mm)
        if not (0 < a_lo <= a_hi):
            raise SynthesisError(f"bad semi-axis range ({a_lo}, {a_hi})")
        object.__setattr__(self, "semi_axes_mm", (a_lo, a_hi))

    def to_dict(self) -> dict:
        return {
            "fate_probs": {f.value: p for f, p in self.fate_probs.items()},
            "n_generated": list(self.n_generated),
            "p_t2_only": self.p_t2_only,
            "semi_axes_mm": list(self.semi_axes_mm),
            "connectivity": self.connectivity,
            "augmentation": None
            if self.augmentation is None
            else policy_to_dict(self.augmentation),
            "spatial_augmentation": self.spatial_augmentation,
        }

    @staticmethod
    def from_dict(payload: Mapping) -> "SynthesisPolicy":
        body = dict(payload)
        aug = body.get("augmentation", "missing")
        if aug == "missing":
            augmentation = SamplingPolicy()
        elif aug is None:
            augmentation = None
        else:
            augmentation = policy_from_dict(aug)
        return SynthesisPolicy(
            fate_probs=body.get("fate_probs", {f: 0.25 for f in _FATE_ORDER}),
            n_generated=tuple(body.get("n_generated", (0, 3))),
            p_t2_only=float(body.get("p_t2_only", 0.5)),
            semi_axes_mm=tuple(body.get("semi_axes_mm", (1.5, 4.0))),
            connectivity=int(body.get("connectivity", 26)),
            augmentation=augmentation,
            spatial_augmentation=bool(body.get("spatial_augmentation", True)),
        )


@dataclass(frozen=True, eq=False)
class GeneratedRegion:
    """One synthetic lesion placement: its mask plus the parameters that
    rebuild it (the JSON provenance stores only the parameters)."""

    mask: BinaryMask = field(repr=False)
    center: tuple[int, int, int]
    semi_axes_mm: tuple[float, float, float]
    placement: str  # "t2_only" or "both"
    voxel_count: int

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "semi_axes_mm": list(self.semi_axes_mm),
            "placement": self.placement,
            "voxel_count": self.voxel_count,
        }


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    """One constructed (baseline, follow-up) pair with its ground truth
    and everything needed to audit or replay it."""

    t1: Volume
    t2: Volume
    new_lesion_mask: BinaryMask
    fate_ledger: Mapping[int, LesionFate]
    generated_regions: tuple[GeneratedRegion, ...]
    plan1: AugmentationPlan | None
    plan2: AugmentationPlan | None
    orientation_index: int = 0


# ---------------------------------------------------------------------------
# editing primitives

def blend_edit(
    base: np.ndarray,
    replacement: np.ndarray,
    region: np.ndarray,
    margin: int = BLEND_MARGIN,
) -> np.ndarray:
    """Replace ``region`` with ``replacement``, ramping over ``margin``
    voxels. Voxels outside the region dilated by ``margin`` are copied
    from ``base`` bit-for-bit, which is what keeps edits auditable.
    """
    if not region.any():
        return base.copy()
    structure = connectivity_structure(26)
    touched = ndi.binary_dilation(region, structure=structure, iterations=margin)
    dist = ndi.distance_transform_edt(~region)
    alpha = np.clip(1.0 - dist / (margin + 1.0), 0.0, 1.0)
    out = base.copy()
    out[touched] = (
        alpha[touched] * replacement[touched] + (1.0 - alpha[touched]) * base[touched]
    )
    out[region] = replacement[region]
    return out


def _ring(
    region: np.ndarray, avoid: np.ndarray | None, width: int = RING_WIDTH
) -> np.ndarray:
    """Context neighborhood of an edit: the region dilated ``width`` times,
    minus the region itself and minus ``avoid`` (other lesion voxels, so
    pathological intensities never leak into the statistics)."""
    structure = connectivity_structure(26)
    ring = ndi.binary_dilation(region, structure=structure, iterations=width)
    ring &= ~region
    if avoid is not None:
        ring &= ~avoid
    return ring


def baseline_inpaint(
    volume: Volume,
    region: BinaryMask,
    rng: np.random.Generator,
    avoid: BinaryMask | None = None,
    margin: int = BLEND_MARGIN,
) -> Volume:
    """Replace ``region`` with healthy-looking tissue.

    Region voxels are drawn from a normal fit to the surrounding ring
    (the region dilated three times, minus the region and minus
    ``avoid``), then smoothed in place with a 0.8-voxel Gaussian and
    blended back over :data:`BLEND_MARGIN` voxels. A constant input comes
    back constant; on anything else the filled region sits within the
    ring's intensity spread.

    Raises :class:`InsufficientContextError` when the ring is empty.
    """
    require_same_geometry(volume, region)
    if avoid is not None:
        require_same_geometry(volume, avoid)
    reg = region.data
    if not reg.any():
        return volume
    ring = _ring(reg, None if avoid is None else avoid.data)
    if not ring.any():
        raise InsufficientContextError(
            "inpaint region has no surrounding tissue to sample from"
        )
    mu = float(np.mean(volume.data[ring]))
    sd = float(np.std(volume.data[ring]))
    filled = volume.data.copy()
    filled[reg] = rng.normal(mu, sd, int(reg.sum())) if sd > 0 else mu
    smoothed = ndi.gaussian_filter(filled, sigma=_INPAINT_SMOOTH_SD, mode="reflect")
    replacement = volume.data.copy()
    replacement[reg] = smoothed[reg]
    return volume.with_data(blend_edit(volume.data, replacement, reg, margin))


def baseline_generate(
    volume: Volume,
    region: BinaryMask,
    rng: np.random.Generator,
    avoid: BinaryMask | None = None,
    margin: int = BLEND_MARGIN,
) -> Volume:
    """Paint a lesion-like hyperintensity over ``region``.

    The region is raised to ``ring mean x factor`` with the factor drawn
    uniformly from [1.2, 1.8], falling off smoothly over
    :data:`BLEND_MARGIN` voxels at the boundary. The ring is computed as
    in :func:`baseline_inpaint` and the same empty-ring error applies.
    """
    require_same_geometry(volume, region)
    if avoid is not None:
        require_same_geometry(volume, avoid)
    reg = region.data
    if not reg.any():
        return volume
    ring = _ring(reg, None if avoid is None else avoid.data)
    if not ring.any():
        raise InsufficientContextError(
            "generation region has no surrounding tissue to sample from"
        )
    lo, hi = _GENERATE_FACTOR_RANGE
    target = float(np.mean(volume.data[ring])) * rng.uniform(lo, hi)
    replacement = np.full(volume.dims, target)
    return volume.with_data(blend_edit(volume.data, replacement, reg, margin))


class Editor(Protocol):
    """Anything that can rewrite a masked region of a volume."""

    def inpaint(self, volume: Volume, region: BinaryMask, seed: int) -> Volume: ...

    def generate(self, volume: Volume, region: BinaryMask, seed: int) -> Volume: ...


class BaselineEditor:
    """The built-in editor: normal-fit inpainting and flat hyperintense
    synthesis, deterministic in ``seed``.

    ``avoid_mask`` marks voxels (typically all lesion support) excluded
    from ring statistics; :func:`synthesize_pair` manages it per edit.
    """

    def __init__(self, avoid_mask: BinaryMask | None = None):
        self.avoid_mask = avoid_mask

    def inpaint(self, volume: Volume, region: BinaryMask, seed: int) -> Volume:
        return baseline_inpaint(
            volume, region, np.random.default_rng(seed), avoid=self.avoid_mask
        )

    def generate(self, volume: Volume, region: BinaryMask, seed: int) -> Volume:
        return baseline_generate(
            volume, region, np.random.default_rng(seed), avoid=self.avoid_mask
        )


class ExternalEditor:
    """Bridge to an external editing program.

    Per call, a fresh exchange directory is created (under
    ``LESIONFORGE_SCRATCH`` when set, else the system temp dir) holding
    ``volume.nii.gz``, ``mask.nii.gz`` and ``request.json`` with the mode,
    seed and blend margin. The program is invoked with the directory as
    its last argument and must write ``output.nii.gz`` on the same grid
    and exit 0. Nonzero exit, timeout, missing output or a geometry
    mismatch raise :class:`EditorFailureError`.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 120.0):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = [str(c) for c in command]
        if not self.command:
            raise ValueError("external editor command is empty")
        self.timeout = float(timeout)

    def inpaint(self, volume: Volume, region: BinaryMask, seed: int) -> Volume:
        return self._run("inpaint", volume, region, seed)

    def generate(self, volume: Volume, region: BinaryMask, seed: int) -> Volume:
        return self._run("generate", volume, region, seed)

    def _run(self, mode: str, volume: Volume, region: BinaryMask, seed: int) -> Volume:
        require_same_geometry(volume, region)
        scratch = os.environ.get("LESIONFORGE_SCRATCH") or None
        if scratch:
            Path(scratch).mkdir(parents=True, exist_ok=True)
        workdir = Path(tempfile.mkdtemp(prefix="lesionforge-edit-", dir=scratch))
        try:
            save_volume(volume, workdir / "volume.nii.gz", datatype="float64")
            save_mask(region, workdir / "mask.nii.gz")
            (workdir / "request.json").write_text(
                json.dumps(
                    {"mode": mode, "seed": int(seed), "blend_margin": BLEND_MARGIN},
                    sort_keys=True,
                )
            )
            try:
                proc = subprocess.run(
                    [*self.command, str(workdir)],
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired as exc:
                raise EditorFailureError(
                    f"editor timed out after {self.timeout:g}s: {self.command}"
                ) from exc
            if proc.returncode != 0:
                tail = (proc.stderr or proc.stdout or "").strip()[-2000:]
                raise EditorFailureError(
                    f"editor exited with {proc.returncode}: {tail or '<no output>'}"
                )
            out_path = workdir / "output.nii.gz"
            if not out_path.exists():
                raise EditorFailureError(
                    f"editor exited 0 but wrote no {out_path.name}"
                )
            out = load_volume(out_path)
            if out.dims != volume.dims:
                raise EditorFailureError(
                    f"editor changed dims {volume.dims} -> {out.dims}"
                )
            if (
                np.abs(np.subtract(out.spacing, volume.spacing)).max() > 1e-4
                or np.abs(out.affine - volume.affine).max() > 1e-4
            ):
                raise EditorFailureError("editor changed the volume geometry")
            return out
        finally:
            shutil.rmtree(workdir, ignore_errors=True)


def external_editor(command: str | Sequence[str], timeout: float = 120.0) -> ExternalEditor:
    """Attach an external editing program; see :class:`ExternalEditor`."""
    return ExternalEditor(command, timeout=timeout)


# ---------------------------------------------------------------------------
# fates and site sampling

def assign_fates(
    labeled: LabeledMask, policy: SynthesisPolicy, rng: np.random.Generator
) -> dict[int, LesionFate]:
    """Draw one fate per component, labels 1..count, from the policy."""
    probs = [policy.fate_probs[f] for f in _FATE_ORDER]
    draws = rng.choice(len(_FATE_ORDER), size=labeled.count, p=probs)
    return {label: _FATE_ORDER[int(d)] for label, d in enumerate(draws, start=1)}


def _ellipsoid(
    shape: tuple[int, int, int],
    spacing: Sequence[float],
    center: Sequence[int],
    semi_axes: Sequence[float],
) -> np.ndarray | None:
    """Boolean ellipsoid, or None when it would cross the volume border."""
    half = [int(np.ceil(a / s)) for a, s in zip(semi_axes, spacing)]
    lo = [c - h for c, h in zip(center, half)]
    hi = [c + h + 1 for c, h in zip(center, half)]
    if any(l < 0 for l in lo) or any(h > n for h, n in zip(hi, shape)):
        return None
    grids = np.ogrid[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    r2 = sum(
        ((g - c) * s / a) ** 2
        for g, c, s, a in zip(grids, center, spacing, semi_axes)
    )
    out = np.zeros(shape, dtype=bool)
    out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = r2 <= 1.0
    return out


def sample_generation_sites(
    atlas: Volume | None,
    wm_mask: BinaryMask,
    exclusion: BinaryMask,
    n: int,
    semi_axes_mm: tuple[float, float],
    rng: np.random.Generator,
) -> list[tuple[BinaryMask, tuple[int, int, int], tuple[float, float, float]]]:
    """Place up to ``n`` non-overlapping ellipsoidal regions.

    Centres are drawn from ``wm_mask`` weighted by ``atlas`` when one is
    given, uniformly otherwise. A site is rejected if its ellipsoid
    crosses the volume border or touches the exclusion mask or an earlier
    site; after 1000 failed attempts for a site, sampling stops with a
    warning and returns the regions placed so far.
    """
    if n == 0:
        return []
    require_same_geometry(wm_mask, exclusion)
    weights = wm_mask.data.astype(np.float64)
    if atlas is not None:
        require_same_geometry(wm_mask, atlas)
        if atlas.data.min() < 0:
            raise SynthesisError("frequency atlas must be non-negative")
        weights = weights * atlas.data
    flat_idx = np.flatnonzero(weights)
    if flat_idx.size == 0:
        raise NoValidSiteError(
            "no candidate voxel has positive weight; cannot place regions"
        )
    p = weights.ravel()[flat_idx]
    cdf = np.cumsum(p / p.sum())
    shape = wm_mask.dims
    spacing = wm_mask.spacing
    blocked = exclusion.data.copy()
    a_lo, a_hi = semi_axes_mm

    placed = []
    for site_number in range(n):
        region = None
        for _ in range(MAX_SITE_ATTEMPTS):
            pick = min(int(np.searchsorted(cdf, rng.random())), flat_idx.size - 1)
            centre = np.unravel_index(int(flat_idx[pick]), shape)
            semis = tuple(float(a) for a in a_lo + (a_hi - a_lo) * rng.random(3))
            candidate = _ellipsoid(shape, spacing, centre, semis)
            if candidate is None or (candidate & blocked).any():
                continue
            region = (candidate, tuple(int(c) for c in centre), semis)
            break
        if region is None:
            log.warning(
                "placed %d of %d generated regions; gave up after %d attempts",
                site_number, n, MAX_SITE_ATTEMPTS,
            )
            break
        blocked |= region[0]
        placed.append(
            (BinaryMask(region[0], spacing, wm_mask.affine), region[1], region[2])
        )
    return placed


def _default_candidates(volume: Volume) -> BinaryMask:
    """Crude interior-tissue mask: above-mean voxels, eroded to keep
    generated regions away from the background boundary."""
    fg = volume.data > volume.data.mean()
    fg = ndi.binary_erosion(fg, structure=connectivity_structure(6), iterations=2)
    return BinaryMask(fg, volume.spacing, volume.affine)


# ---------------------------------------------------------------------------

def _edit(
    editor: Editor,
    mode: str,
    volume: Volume,
    region: BinaryMask,
    seed: int,
    avoid: BinaryMask,
) -> Volume:
    # the built-in editor is handed the current lesion support so ring
    # statistics never include pathological voxels; external editors get
    # only what the file protocol carries
    if isinstance(editor, BaselineEditor):
        editor = BaselineEditor(avoid_mask=avoid)
    call = editor.inpaint if mode == "inpaint" else editor.generate
    return call(volume, region, seed)


def synthesize_pair(
    volume: Volume,
    lesion_mask: BinaryMask,
    policy: SynthesisPolicy,
    rng: np.random.Generator,
    editor: Editor | None = None,
    wm_mask: BinaryMask | None = None,
    atlas: Volume | None = None,
) -> SyntheticPair:
    """Build one synthetic longitudinal pair from a single scan.

    Stages, in order: (1) one orthogonal reorientation of the scan and
    every mask, then two copies each degraded under its own sampled
    artifact plan; (2) component fates drawn and the removals inpainted
    per timepoint; (3) extra regions placed and painted into the
    follow-up alone or into both.

    Randomness comes only from ``rng`` (editors receive seeds drawn from
    it), so a fixed seed replays the identical pair, including through an
    external editor. Draw order: orientation, plan for each timepoint,
    fates, inpaint seeds, generated count, placements, sites and their
    seeds.
    """
    require_same_geometry(volume, lesion_mask)
    if wm_mask is not None:
        require_same_geometry(volume, wm_mask)
    if atlas is not None:
        require_same_geometry(volume, atlas)
    if editor is None:
        editor = BaselineEditor()

    orientation_index = 0
    if policy.spatial_augmentation:
        orientation_index = int(rng.integers(48))
        volume = apply_orthogonal(volume, orientation_index)
        lesion_mask = apply_orthogonal(lesion_mask, orientation_index)
        if wm_mask is not None:
            wm_mask = apply_orthogonal(wm_mask, orientation_index)
        if atlas is not None:
            atlas = apply_orthogonal(atlas, orientation_index)

    plan1 = plan2 = None
    t1 = t2 = volume
    if policy.augmentation is not None:
        plan1 = sample_plan(policy.augmentation, rng)
        plan2 = sample_plan(policy.augmentation, rng)
        t1 = apply_plan(volume, plan1)
        t2 = apply_plan(volume, plan2)

    labeled = connected_components(lesion_mask, policy.connectivity)
    fates = assign_fates(labeled, policy, rng)

    def support(wanted: set[LesionFate]) -> np.ndarray:
        keep = np.zeros(labeled.count + 1, dtype=bool)
        for label, fate in fates.items():
            keep[label] = fate in wanted
        return keep[labeled.data]

    t1_removed = support({LesionFate.REMOVE_T1, LesionFate.REMOVE_BOTH})
    t2_removed = support({LesionFate.REMOVE_T2, LesionFate.REMOVE_BOTH})

    geometry = (volume.spacing, volume.affine)
    lesion_support = BinaryMask(lesion_mask.data.copy(), *geometry)
    seed_t1 = int(rng.integers(2**63))
    seed_t2 = int(rng.integers(2**63))
    if t1_removed.any():
        t1 = _edit(editor, "inpaint", t1, BinaryMask(t1_removed, *geometry),
                   seed_t1, lesion_support)
    if t2_removed.any():
        t2 = _edit(editor, "inpaint", t2, BinaryMask(t2_removed, *geometry),
                   seed_t2, lesion_support)

    lo, hi = policy.n_generated
    n_gen = int(rng.integers(lo, hi + 1))
    placements = ["t2_only" if rng.random() < policy.p_t2_only else "both"
                  for _ in range(n_gen)]

    candidates = wm_mask if wm_mask is not None else _default_candidates(volume)
    exclusion_data = ndi.binary_dilation(
        lesion_mask.data,
        structure=connectivity_structure(26),
        iterations=BLEND_MARGIN,
    ) if lesion_mask.data.any() else lesion_mask.data
    exclusion = BinaryMask(exclusion_data, *geometry)
    sites = sample_generation_sites(
        atlas, candidates, exclusion, n_gen, policy.semi_axes_mm, rng
    )
    placements = placements[: len(sites)]

    regions: list[GeneratedRegion] = []
    new_mask_data = support({LesionFate.REMOVE_T1})
    occupied = lesion_mask.data.copy()
    for (site, centre, semis), placement in zip(sites, placements):
        seed_site = int(rng.integers(2**63))
        avoid = BinaryMask(occupied, *geometry)
        t2 = _edit(editor, "generate", t2, site, seed_site, avoid)
        if placement == "both":
            t1 = _edit(editor, "generate", t1, site, seed_site, avoid)
        else:
            new_mask_data = new_mask_data | site.data
        occupied = occupied | site.data
        regions.append(
            GeneratedRegion(
                mask=site,
                center=centre,
                semi_axes_mm=semis,
                placement=placement,
                voxel_count=site.voxel_count,
            )
        )

    return SyntheticPair(
        t1=t1,
        t2=t2,
        new_lesion_mask=BinaryMask(new_mask_data, *geometry),
        fate_ledger=fates,
        generated_regions=tuple(regions),
        plan1=plan1,
        plan2=plan2,
        orientation_index=orientation_index,
    )


def pair_provenance(pair: SyntheticPair, policy: SynthesisPolicy, seed: int) -> dict:
    """JSON-ready record sufficient to replay and audit a pair."""
    return {
        "seed": int(seed),
        "policy": policy.to_dict(),
        "fate_ledger": {str(k): v.value for k, v in sorted(pair.fate_ledger.items())},
        "generated_regions": [r.to_dict() for r in pair.generated_regions],
        "plan_t1": None if pair.plan1 is None else plan_to_dict(pair.plan1),
        "plan_t2": None if pair.plan2 is None else plan_to_dict(pair.plan2),
        "orientation_index": pair.orientation_index,
    }


def verify_new_lesion_mask(
    source_lesions: BinaryMask,
    new_lesion_mask: BinaryMask,
    provenance: Mapping,
) -> None:
    """Audit a written pair against its provenance record.

    Rebuilds the expected ground truth: the source lesion components whose
    recorded fate is remove_t1, plus the recorded t2-only ellipsoids; it
    must equal the stored mask voxel for voxel and stay disjoint from all
    kept/removed-elsewhere components and from both-timepoint regions.
    Raises :class:`SynthesisError` on any violation.
    """
    oriented = apply_orthogonal(source_lesions, int(provenance["orientation_index"]))
    connectivity = int(provenance["policy"].get("connectivity", 26))
    labeled = connected_components(oriented, connectivity)
    ledger = {int(k): LesionFate(v) for k, v in provenance["fate_ledger"].items()}
    if set(ledger) != set(range(1, labeled.count + 1)):
        raise SynthesisError(
            f"fate ledger labels {sorted(ledger)} do not cover components "
            f"1..{labeled.count}"
        )

    expected = np.zeros(oriented.dims, dtype=bool)
    excluded = np.zeros(oriented.dims, dtype=bool)
    for label, fate in ledger.items():
        target = expected if fate is LesionFate.REMOVE_T1 else excluded
        target |= labeled.data == label
    for record in provenance["generated_regions"]:
        region = _ellipsoid(
            oriented.dims,
            oriented.spacing,
            [int(c) for c in record["center"]],
            [float(a) for a in record["semi_axes_mm"]],
        )
        if region is None or int(region.sum()) != int(record["voxel_count"]):
            raise SynthesisError(f"generated region does not rebuild: {record}")
        if record["placement"] == "t2_only":
            expected |= region
        else:
            excluded |= region

    if not np.array_equal(expected, new_lesion_mask.data):
        diff = int(np.count_nonzero(expected ^ new_lesion_mask.data))
        raise SynthesisError(f"new-lesion mask deviates on {diff} voxel(s)")
    if (new_lesion_mask.data & excluded).any():
        raise SynthesisError("new-lesion mask overlaps kept or shared regions")
