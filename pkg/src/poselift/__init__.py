"""Occlusion-aware 2D-to-3D human pose lifting.

Core pieces: pose-sequence types and a binary file format (core), random
occlusion plus temporal-interpolation guidance (occlusion), a minimal
autodiff substrate (autodiff, nn), the dual-view transformer fusion network
and its ablation variants (model), MPJPE training with AMSGrad (training),
evaluation protocols (metrics), a synthetic data pipeline (synth), and
scikit-learn style wrappers (estimators).
"""

from .core import (OcclusionMask, PoseDataset, PoseSequence2D, PoseSequence3D,
                   SequenceFormatError, SkeletonSpec, ValidationResult,
                   default_skeleton, load_mask, load_sequence, save_mask,
                   save_sequence, validate_sequence)
from .estimators import DtfLifter, OcclusionGuide, OcclusionInjector
from .metrics import (AlignmentError, EvalReport, SimilarityTransform, auc,
                      evaluate, mpjpe_p1, mpjpe_p2, pck, procrustes_align)
from .model import DtfModel, ModelConfig, build_model, model_forward
from .occlusion import (Fallback, GuidanceConfig, OcclusionCategory,
                        categorize, confidence_for_gap, guide_sequence,
                        inject_occlusion, zero_filled)
from .synth import (CameraSpec, MotionSpec, add_detector_noise, back_project,
                    default_motion_spec, generate_motion, load_dataset,
                    make_dataset, project_to_2d)
from .training import (OptimizerState, TrainConfig, amsgrad_step,
                       load_checkpoint, mpjpe_loss, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "CameraSpec", "DtfLifter", "DtfModel", "EvalReport",
    "Fallback", "GuidanceConfig", "ModelConfig", "MotionSpec", "OcclusionGuide",
    "OcclusionInjector", "OcclusionMask", "OcclusionCategory", "OptimizerState",
    "PoseDataset", "PoseSequence2D", "PoseSequence3D", "SequenceFormatError",
    "SimilarityTransform", "SkeletonSpec", "TrainConfig", "ValidationResult",
    "add_detector_noise", "amsgrad_step", "auc", "back_project", "build_model",
    "categorize", "confidence_for_gap", "default_motion_spec",
    "default_skeleton", "evaluate", "generate_motion", "guide_sequence",
    "inject_occlusion", "load_checkpoint", "load_dataset", "load_mask",
    "load_sequence", "make_dataset", "model_forward", "mpjpe_loss", "mpjpe_p1",
    "mpjpe_p2", "pck", "procrustes_align", "project_to_2d", "save_checkpoint",
    "save_mask", "save_sequence", "train", "validate_sequence",
]
