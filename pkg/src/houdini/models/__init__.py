from .base import InfeasibleTargetError, ModelError, StructuredModel
from .ctc import CtcLattice, CtcScore, ctc_label_score, ctc_loss, forward_backward, greedy_decode
from .keypoints import KeypointConfig, KeypointModel, keypoint_decode, keypoint_score, mse_heatmap, target_heatmaps
from .segmentation import SegmentationConfig, SegmentationModel, seg_decode, seg_nll, seg_score
from .sequence import SequenceConfig, SequenceModel
from .training import TrainingError, train_toy

MODELS = {"sequence": SequenceModel, "keypoints": KeypointModel, "segmentation": SegmentationModel}
CONFIGS = {"sequence": SequenceConfig, "keypoints": KeypointConfig, "segmentation": SegmentationConfig}


def build_model(family: str, config: dict | None = None, seed: int = 0) -> StructuredModel:
    if family not in MODELS:
        raise ModelError(f"unknown task family {family!r}; expected one of {sorted(MODELS)}")
    cfg = CONFIGS[family](**(config or {}))
    return MODELS[family].init(cfg, seed)


__all__ = [
    "CONFIGS", "MODELS", "CtcLattice", "CtcScore", "InfeasibleTargetError", "KeypointConfig", "KeypointModel",
    "ModelError", "SegmentationConfig", "SegmentationModel", "SequenceConfig", "SequenceModel", "StructuredModel",
    "TrainingError", "build_model", "ctc_label_score", "ctc_loss", "forward_backward", "greedy_decode",
    "keypoint_decode", "keypoint_score", "mse_heatmap", "seg_decode", "seg_nll", "seg_score",
    "target_heatmaps", "train_toy",
]
