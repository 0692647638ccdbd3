"""Sampling policies, augmentation plans and orthogonal reorientations.

A :class:`SamplingPolicy` says which artifacts may be drawn and from what
parameter ranges; :func:`sample_plan` materializes one concrete
:class:`AugmentationPlan` from it. Plans are plain data: they serialize to
JSON, and :func:`apply_plan` replays one bit-for-bit because the plan
carries its own noise seed.

Orthogonal reorientations are the 48 axis permutation + flip combinations.
They are exposed as an indexed family so the same transform can be applied
to an image and all of its masks, and recorded by index in provenance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import artifacts as art
from .volume import BinaryMask, LabeledMask, Volume

__all__ = [
    "PolicyError",
    "ArtifactRule",
    "SamplingPolicy",
    "AugmentationPlan",
    "sample_plan",
    "apply_plan",
    "plan_to_dict",
    "plan_from_dict",
    "policy_to_dict",
    "policy_from_dict",
    "spec_to_dict",
    "spec_from_dict",
    "N_ORTHOGONAL",
    "apply_orthogonal",
    "orthogonal_flip_rotate",
]


class PolicyError(ValueError):
    """A sampling policy that cannot produce any plan."""


# artifact kinds in canonical composition order
KINDS = (
    "blur",
    "edge_enhance",
    "axial_mean",
    "downsample",
    "noise",
    "bias_field",
    "motion",
    "spike",
    "ghosting",
)

# DC exclusion for spike sampling, in grid fractions: 3 voxels on the
# 64-wide training-patch convention
DC_EXCLUSION_FRAC = 3.0 / 64.0


@dataclass(frozen=True)
class ArtifactRule:
    """Sampling settings for one artifact kind.

    ``prob`` only matters in ``independent`` mode. ``ranges`` maps
    parameter names to inclusive (low, high) bounds or discrete choices;
    unspecified parameters fall back to the built-in defaults.
    """

    enabled: bool = True
    prob: float = 0.5
    ranges: Mapping[str, object] = field(default_factory=dict)

    def rng_range(self, key: str, default: tuple[float, float]) -> tuple[float, float]:
        lo, hi = self.ranges.get(key, default)  # type: ignore[misc]
        lo, hi = float(lo), float(hi)
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise PolicyError(f"bad range for {key!r}: ({lo}, {hi})")
        return lo, hi

    def choices(self, key: str, default: Sequence) -> Sequence:
        values = list(self.ranges.get(key, default))  # type: ignore[arg-type]
        if not values:
            raise PolicyError(f"empty choice list for {key!r}")
        return values


@dataclass(frozen=True)
class SamplingPolicy:
    """Which artifacts to draw and how.

    ``mode`` is ``"one-of"`` (pick exactly one enabled artifact per plan,
    the default) or ``"independent"`` (each enabled artifact is included
    with its own probability, composed in canonical order).
    """

    mode: str = "one-of"
    rules: Mapping[str, ArtifactRule] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("one-of", "independent"):
            raise PolicyError(f"unknown mode {self.mode!r}")
        unknown = set(self.rules) - set(KINDS)
        if unknown:
            raise PolicyError(f"unknown artifact kinds in policy: {sorted(unknown)}")
        object.__setattr__(self, "rules", dict(self.rules))

    def rule(self, kind: str) -> ArtifactRule:
        return self.rules.get(kind, ArtifactRule())

    def enabled_kinds(self) -> list[str]:
        return [k for k in KINDS if self.rule(k).enabled]

    @staticmethod
    def disabled() -> "SamplingPolicy":
        """Policy under which sample_plan always yields an empty plan."""
        return SamplingPolicy(
            mode="independent",
            rules={k: ArtifactRule(enabled=False) for k in KINDS},
        )


@dataclass(frozen=True)
class AugmentationPlan:
    """A fully-resolved sequence of artifact specs plus the noise seed
    consumed when applying them."""

    artifacts: tuple[art.ArtifactSpec, ...]
    rng_seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "artifacts", tuple(self.artifacts))
        if not 0 <= int(self.rng_seed) < 2**63:
            raise ValueError(f"rng_seed out of range: {self.rng_seed}")


# ---------------------------------------------------------------------------
# per-kind samplers

def _uniform(rng, lo, hi):
    return float(lo + (hi - lo) * rng.random())


def _sample_blur(rule: ArtifactRule, rng) -> art.Blur:
    return art.Blur(sd=_uniform(rng, *rule.rng_range("sd", (0.5, 1.75))))


def _sample_edge(rule: ArtifactRule, rng) -> art.EdgeEnhance:
    return art.EdgeEnhance(sd=_uniform(rng, *rule.rng_range("sd", (0.5, 1.75))))


def _sample_axial(rule: ArtifactRule, rng) -> art.AxialMeanFilter:
    sz = rule.choices("sz", (2, 3, 4))
    return art.AxialMeanFilter(sz=int(sz[rng.integers(len(sz))]))


def _sample_downsample(rule: ArtifactRule, rng) -> art.AnisoDownsample:
    axes = rule.choices("axis", (0, 1, 2))
    axis = int(axes[rng.integers(len(axes))])
    return art.AnisoDownsample(
        axis=axis, factor=_uniform(rng, *rule.rng_range("factor", (1.5, 4.0)))
    )


def _sample_noise(rule: ArtifactRule, rng) -> art.GaussianNoise:
    return art.GaussianNoise(sd=_uniform(rng, *rule.rng_range("sd", (0.02, 0.1))))


def _sample_bias(rule: ArtifactRule, rng) -> art.BiasField:
    order_lo, order_hi = rule.rng_range("order", (3, 3))
    order = int(rng.integers(int(order_lo), int(order_hi) + 1))
    lo, hi = rule.rng_range("coefficient", (-0.4, 0.4))
    n = art.bias_basis_size(order)
    coeffs = tuple(float(c) for c in lo + (hi - lo) * rng.random(n))
    return art.BiasField(order=order, coefficients=coeffs)


def _sample_motion(rule: ArtifactRule, rng) -> art.Motion:
    n_lo, n_hi = rule.rng_range("n_transforms", (2, 4))
    n = int(rng.integers(int(n_lo), int(n_hi) + 1))
    rot_lo, rot_hi = rule.rng_range("rotation_deg", (-5.0, 5.0))
    tr_lo, tr_hi = rule.rng_range("translation_mm", (-4.0, 4.0))
    transforms = [art.MotionTransform()]  # reference pose first
    for _ in range(n - 1):
        rot = tuple(float(r) for r in rot_lo + (rot_hi - rot_lo) * rng.random(3))
        tr = tuple(float(t) for t in tr_lo + (tr_hi - tr_lo) * rng.random(3))
        transforms.append(art.MotionTransform(rotation=rot, translation=tr))
    axes = rule.choices("phase_axis", (0, 1, 2))
    return art.Motion(
        transforms=tuple(transforms),
        phase_axis=int(axes[rng.integers(len(axes))]),
    )


def _sample_spike(rule: ArtifactRule, rng) -> art.Spike:
    n_lo, n_hi = rule.rng_range("n_spikes", (1, 1))
    n = int(rng.integers(int(n_lo), int(n_hi) + 1))
    positions = []
    for _ in range(n):
        while True:
            pos = rng.random(3)
            # keep clear of DC so a spike cannot act as pure re-scaling
            if np.linalg.norm(pos - 0.5) >= DC_EXCLUSION_FRAC:
                break
        positions.append(tuple(float(p) for p in pos))
    return art.Spike(
        positions=tuple(positions),
        intensity_factor=_uniform(rng, *rule.rng_range("intensity_factor", (0.1, 1.0))),
    )


def _sample_ghosting(rule: ArtifactRule, rng) -> art.Ghosting:
    n_lo, n_hi = rule.rng_range("n_ghosts", (2, 5))
    axes = rule.choices("axis", (0, 1, 2))
    return art.Ghosting(
        n_ghosts=int(rng.integers(int(n_lo), int(n_hi) + 1)),
        axis=int(axes[rng.integers(len(axes))]),
        intensity=_uniform(rng, *rule.rng_range("intensity", (0.1, 0.5))),
    )


_SAMPLERS = {
    "blur": _sample_blur,
    "edge_enhance": _sample_edge,
    "axial_mean": _sample_axial,
    "downsample": _sample_downsample,
    "noise": _sample_noise,
    "bias_field": _sample_bias,
    "motion": _sample_motion,
    "spike": _sample_spike,
    "ghosting": _sample_ghosting,
}

_KIND_OF = {
    art.Blur: "blur",
    art.EdgeEnhance: "edge_enhance",
    art.AxialMeanFilter: "axial_mean",
    art.AnisoDownsample: "downsample",
    art.GaussianNoise: "noise",
    art.BiasField: "bias_field",
    art.Motion: "motion",
    art.Spike: "spike",
    art.Ghosting: "ghosting",
}


def sample_plan(policy: SamplingPolicy, rng: np.random.Generator) -> AugmentationPlan:
    """Draw one concrete plan from a policy.

    ``one-of`` mode picks exactly one enabled kind uniformly; an all-
    disabled policy is an error there. ``independent`` mode includes each
    enabled kind with its rule's probability, so the plan may be empty.
    """
    enabled = policy.enabled_kinds()
    chosen: list[str] = []
    if policy.mode == "one-of":
        if not enabled:
            raise PolicyError("one-of policy with every artifact disabled")
        chosen = [enabled[int(rng.integers(len(enabled)))]]
    else:
        for kind in enabled:
            if rng.random() < policy.rule(kind).prob:
                chosen.append(kind)
    specs = tuple(_SAMPLERS[k](policy.rule(k), rng) for k in chosen)
    seed = int(rng.integers(2**63))
    return AugmentationPlan(artifacts=specs, rng_seed=seed)


def apply_plan(volume: Volume, plan: AugmentationPlan) -> Volume:
    """Replay a plan. Deterministic: same plan, same volume, same bytes."""
    rng = np.random.default_rng(plan.rng_seed)
    out = volume
    for spec in plan.artifacts:
        out = art.apply_artifact(out, spec, rng)
    return out


# ---------------------------------------------------------------------------
# JSON forms

def spec_to_dict(spec: art.ArtifactSpec) -> dict:
    kind = _KIND_OF[type(spec)]
    if isinstance(spec, art.Motion):
        return {
            "kind": kind,
            "transforms": [
                {"rotation": list(t.rotation), "translation": list(t.translation)}
                for t in spec.transforms
            ],
            "phase_axis": spec.phase_axis,
        }
    if isinstance(spec, art.Spike):
        return {
            "kind": kind,
            "positions": [list(p) for p in spec.positions],
            "intensity_factor": spec.intensity_factor,
        }
    if isinstance(spec, art.BiasField):
        return {
            "kind": kind,
            "order": spec.order,
            "coefficients": list(spec.coefficients),
        }
    out: dict = {"kind": kind}
    for name in spec.__dataclass_fields__:
        out[name] = getattr(spec, name)
    return out


def spec_from_dict(payload: Mapping) -> art.ArtifactSpec:
    body = dict(payload)
    kind = body.pop("kind", None)
    if kind == "blur":
        return art.Blur(sd=float(body["sd"]))
    if kind == "edge_enhance":
        return art.EdgeEnhance(sd=float(body["sd"]))
    if kind == "axial_mean":
        return art.AxialMeanFilter(sz=int(body["sz"]))
    if kind == "downsample":
        return art.AnisoDownsample(axis=int(body["axis"]), factor=float(body["factor"]))
    if kind == "noise":
        return art.GaussianNoise(
            sd=float(body["sd"]), relative=bool(body.get("relative", True))
        )
    if kind == "bias_field":
        return art.BiasField(
            order=int(body["order"]),
            coefficients=tuple(float(c) for c in body["coefficients"]),
        )
    if kind == "motion":
        return art.Motion(
            transforms=tuple(
                art.MotionTransform(
                    rotation=tuple(float(r) for r in t["rotation"]),
                    translation=tuple(float(x) for x in t["translation"]),
                )
                for t in body["transforms"]
            ),
            phase_axis=int(body["phase_axis"]),
        )
    if kind == "spike":
        return art.Spike(
            positions=tuple(
                tuple(float(x) for x in p) for p in body["positions"]
            ),
            intensity_factor=float(body["intensity_factor"]),
        )
    if kind == "ghosting":
        return art.Ghosting(
            n_ghosts=int(body["n_ghosts"]),
            axis=int(body["axis"]),
            intensity=float(body["intensity"]),
        )
    raise ValueError(f"unknown artifact kind {kind!r}")


def plan_to_dict(plan: AugmentationPlan) -> dict:
    return {
        "rng_seed": plan.rng_seed,
        "artifacts": [spec_to_dict(s) for s in plan.artifacts],
    }


def plan_from_dict(payload: Mapping) -> AugmentationPlan:
    return AugmentationPlan(
        artifacts=tuple(spec_from_dict(s) for s in payload["artifacts"]),
        rng_seed=int(payload["rng_seed"]),
    )


def policy_to_dict(policy: SamplingPolicy) -> dict:
    return {
        "mode": policy.mode,
        "rules": {
            kind: {
                "enabled": rule.enabled,
                "prob": rule.prob,
                "ranges": {k: list(v) if isinstance(v, (tuple, list)) else v
                           for k, v in rule.ranges.items()},
            }
            for kind, rule in policy.rules.items()
        },
    }


def policy_from_dict(payload: Mapping) -> SamplingPolicy:
    rules = {
        kind: ArtifactRule(
            enabled=bool(body.get("enabled", True)),
            prob=float(body.get("prob", 0.5)),
            ranges=dict(body.get("ranges", {})),
        )
        for kind, body in dict(payload.get("rules", {})).items()
    }
    return SamplingPolicy(mode=payload.get("mode", "one-of"), rules=rules)


# ---------------------------------------------------------------------------
# the 48 orthogonal reorientations

N_ORTHOGONAL = 48
_PERMS = list(itertools.permutations((0, 1, 2)))


def _decode(index: int) -> tuple[tuple[int, int, int], tuple[bool, bool, bool]]:
    if not 0 <= index < N_ORTHOGONAL:
        raise ValueError(f"orthogonal index must be in [0, 48), got {index}")
    perm = _PERMS[index // 8]
    bits = index % 8
    flips = (bool(bits & 4), bool(bits & 2), bool(bits & 1))
    return perm, flips


def apply_orthogonal(grid, index: int):
    """Apply orthogonal transform ``index`` (0..47) to a Volume or mask.

    Index 0 is the identity. The affine is updated so world coordinates of
    every voxel are unchanged; only the array layout moves.
    """
    perm, flips = _decode(index)
    data = np.transpose(grid.data, perm)
    flip_axes = [i for i, f in enumerate(flips) if f]
    if flip_axes:
        data = np.flip(data, axis=flip_axes)

    # voxel map: old = A @ new + b, fold into the affine
    lin = np.zeros((3, 3))
    off = np.zeros(3)
    for j in range(3):
        n_j = grid.data.shape[perm[j]]
        lin[perm[j], j] = -1.0 if flips[j] else 1.0
        off[perm[j]] = float(n_j - 1) if flips[j] else 0.0
    vox = np.eye(4)
    vox[:3, :3] = lin
    vox[:3, 3] = off
    affine = grid.affine @ vox
    spacing = tuple(grid.spacing[p] for p in perm)
    data = np.ascontiguousarray(data)
    if isinstance(grid, LabeledMask):
        return LabeledMask(data, spacing, affine, count=grid.count)
    return type(grid)(data, spacing, affine)


def orthogonal_flip_rotate(
    volume: Volume,
    masks: Iterable[BinaryMask],
    rng: np.random.Generator,
) -> tuple[Volume, list[BinaryMask]]:
    """Apply one of the 48 orthogonal transforms, drawn uniformly, to the
    volume and every mask identically."""
    index = int(rng.integers(N_ORTHOGONAL))
    return (
        apply_orthogonal(volume, index),
        [apply_orthogonal(m, index) for m in masks],
    )
