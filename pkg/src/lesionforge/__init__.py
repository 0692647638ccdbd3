"""lesionforge: synthetic longitudinal MRI pairs, acquisition-artifact
augmentation, and lesion-wise scoring for new-lesion segmentation.

The package is organised bottom-up:

- :mod:`lesionforge.volume`     core Volume / mask types with geometry
- :mod:`lesionforge.nifti`      strict NIfTI-1 subset I/O
- :mod:`lesionforge.components` connected components and size filtering
- :mod:`lesionforge.artifacts`  nine acquisition-artifact simulators
- :mod:`lesionforge.augment`    sampling policies, plans, reorientations
- :mod:`lesionforge.synth`      longitudinal pair construction
- :mod:`lesionforge.metrics`    Dice / lesion-wise scores, Wilcoxon test
- :mod:`lesionforge.manifest`   dataset manifests
- :mod:`lesionforge.cli`        pipeline driver
"""

from .volume import (
    BinaryMask,
    GeometryMismatchError,
    LabeledMask,
    Volume,
    default_affine,
    require_same_geometry,
    same_geometry,
)
from .nifti import (
    NiftiCorruptError,
    NiftiError,
    NiftiFormatError,
    load_binary_mask,
    load_volume,
    save_mask,
    save_volume,
)
from .components import (
    connected_components,
    component_volumes_mm3,
    filter_small_lesions,
    lesion_volume_mm3,
)
from .artifacts import (
    AnisoDownsample,
    ArtifactError,
    AxialMeanFilter,
    BiasField,
    Blur,
    EdgeEnhance,
    GaussianNoise,
    Ghosting,
    Motion,
    MotionTransform,
    Spike,
    apply_artifact,
)
from .augment import (
    ArtifactRule,
    AugmentationPlan,
    PolicyError,
    SamplingPolicy,
    apply_orthogonal,
    apply_plan,
    orthogonal_flip_rotate,
    plan_from_dict,
    plan_to_dict,
    sample_plan,
)
from .synth import (
    BaselineEditor,
    EditorFailureError,
    ExternalEditor,
    GeneratedRegion,
    InsufficientContextError,
    LesionFate,
    NoValidSiteError,
    SynthesisError,
    SynthesisPolicy,
    SyntheticPair,
    assign_fates,
    baseline_generate,
    baseline_inpaint,
    external_editor,
    pair_provenance,
    sample_generation_sites,
    synthesize_pair,
    verify_new_lesion_mask,
)
from .metrics import (
    CaseReport,
    DetectionThresholds,
    WilcoxonResult,
    avg_score,
    consensus,
    dice,
    evaluate_case,
    lesion_metrics,
    round_score,
    wilcoxon_signed_rank,
)
from .manifest import Case, DatasetManifest, ManifestError

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # volume
    "Volume", "BinaryMask", "LabeledMask", "GeometryMismatchError",
    "default_affine", "same_geometry", "require_same_geometry",
    # nifti
    "NiftiError", "NiftiFormatError", "NiftiCorruptError",
    "load_volume", "load_binary_mask", "save_volume", "save_mask",
    # components
    "connected_components", "component_volumes_mm3", "lesion_volume_mm3",
    "filter_small_lesions",
    # artifacts
    "ArtifactError", "Blur", "EdgeEnhance", "AxialMeanFilter",
    "AnisoDownsample", "GaussianNoise", "BiasField", "Motion",
    "MotionTransform", "Spike", "Ghosting", "apply_artifact",
    # augment
    "PolicyError", "ArtifactRule", "SamplingPolicy", "AugmentationPlan",
    "sample_plan", "apply_plan", "plan_to_dict", "plan_from_dict",
    "apply_orthogonal", "orthogonal_flip_rotate",
    # synth
    "SynthesisError", "NoValidSiteError", "InsufficientContextError",
    "EditorFailureError", "LesionFate", "SynthesisPolicy", "SyntheticPair",
    "GeneratedRegion", "BaselineEditor", "ExternalEditor", "external_editor",
    "baseline_inpaint", "baseline_generate", "assign_fates",
    "sample_generation_sites", "synthesize_pair", "pair_provenance",
    "verify_new_lesion_mask",
    # metrics
    "DetectionThresholds", "CaseReport", "dice", "lesion_metrics",
    "evaluate_case", "consensus", "WilcoxonResult", "wilcoxon_signed_rank",
    "avg_score", "round_score",
    # manifest
    "Case", "DatasetManifest", "ManifestError",
]
