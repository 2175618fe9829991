from .augment import NO_AUGMENT, AugmentParams, augment
from .manifest import DatasetRecord, ManifestError, component_boxes, load_manifest, write_manifest
from .split import (FoldAssignment, holdout_split, make_split, stratification_objective,
                    stratified_group_kfold)
from .synth import SHIFTS, GenerationError, SynthConfig, generate_synthetic

__all__ = [
    "AugmentParams", "NO_AUGMENT", "augment",
    "DatasetRecord", "ManifestError", "component_boxes", "load_manifest", "write_manifest",
    "FoldAssignment", "holdout_split", "make_split", "stratification_objective",
    "stratified_group_kfold",
    "SHIFTS", "GenerationError", "SynthConfig", "generate_synthetic",
]
