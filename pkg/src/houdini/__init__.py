"""Adversarial examples for structured predictors through the Houdini task-loss surrogate."""

from .attacks import AttackResult, AttackSpec, CampaignResult, fgsm_step, project_ball, run_attack, run_campaign
from .data import SyntheticDataset, generate_dataset
from .metrics import (KeypointAnnotation, LabelMap, TokenSequence, cer, levenshtein, mean_iou, perceptibility, pckh,
                      ssim, wer)
from .models import build_model, train_toy
from .surrogates import (gaussian_tail, houdini_grad_scores, houdini_input_grad, houdini_loss, probit_loss_mc,
                         surrogate_dispatch)
from .tensor import Tape, Tensor, value_and_grad

__version__ = "0.1.0"

__all__ = [
    "AttackResult", "AttackSpec", "CampaignResult", "KeypointAnnotation", "LabelMap", "SyntheticDataset", "Tape",
    "Tensor", "TokenSequence", "build_model", "cer", "fgsm_step", "gaussian_tail", "generate_dataset",
    "houdini_grad_scores", "houdini_input_grad", "houdini_loss", "levenshtein", "mean_iou", "pckh", "perceptibility",
    "probit_loss_mc", "project_ball", "run_attack", "run_campaign", "ssim", "surrogate_dispatch", "train_toy",
    "value_and_grad", "wer",
]
