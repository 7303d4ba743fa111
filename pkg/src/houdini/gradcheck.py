"""Finite-difference verification of the end-to-end Houdini input gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .metrics import KeypointAnnotation, LabelMap, TokenSequence
from .models import (KeypointConfig, KeypointModel, SegmentationConfig, SegmentationModel, SequenceConfig,
                     SequenceModel)
from .surrogates import houdini_input_grad, houdini_objective

FAMILIES = ("sequence", "keypoints", "segmentation")


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))) if a.size else 0.0


def _random_weights(model, rng, scale):
    return model.with_params({k: rng.normal(0.0, scale, v.shape) for k, v in model.params.items()})


def random_case(family: str, rng: np.random.Generator):
    """A tiny random model, input, ground truth and competing target."""
    if family == "sequence":
        alphabet = "ab "[: rng.integers(2, 4)] if rng.random() < 0.5 else "abc "
        cfg = SequenceConfig(features=int(rng.integers(2, 6)), alphabet=alphabet, hidden=int(rng.integers(2, 7)),
                             kernel=int(rng.choice([1, 3])))
        model = _random_weights(SequenceModel.init(cfg, 0), rng, 0.6)
        n_t = int(rng.integers(3, 9))
        x = rng.normal(0.0, 1.0, (n_t, cfg.features))

        def label():
            while True:
                text = "".join(rng.choice(list(alphabet), int(rng.integers(1, n_t // 2 + 1))))
                if text.strip():
                    return TokenSequence(text)

        y = label()
        y_hat = label()
        while str(y_hat) == str(y):
            y_hat = label()
        return model, x, y, y_hat
    if family == "keypoints":
        cfg = KeypointConfig(channels=int(rng.integers(1, 4)), height=int(rng.integers(4, 8)),
                             width=int(rng.integers(4, 8)), keypoints=int(rng.integers(1, 4)),
                             hidden=int(rng.integers(2, 5)))
        model = _random_weights(KeypointModel.init(cfg, 0), rng, 0.5)
        x = rng.uniform(0.0, 1.0, (cfg.channels, cfg.height, cfg.width))

        def ann():
            pos = np.stack([rng.integers(0, cfg.height, cfg.keypoints), rng.integers(0, cfg.width, cfg.keypoints)], 1)
            return KeypointAnnotation(pos.astype(float), np.ones(cfg.keypoints, bool), 2.0)

        y, y_hat = ann(), ann()
        while model.task_loss(y_hat, y) == 0:
            y_hat = ann()
        return model, x, y, y_hat
    cfg = SegmentationConfig(channels=int(rng.integers(1, 4)), height=int(rng.integers(3, 7)),
                             width=int(rng.integers(3, 7)), classes=int(rng.integers(2, 5)),
                             hidden=int(rng.integers(2, 5)))
    model = _random_weights(SegmentationModel.init(cfg, 0), rng, 0.5)
    x = rng.uniform(0.0, 1.0, (cfg.channels, cfg.height, cfg.width))
    y = LabelMap(rng.integers(0, cfg.classes, (cfg.height, cfg.width)), cfg.classes)
    y_hat = LabelMap(rng.integers(0, cfg.classes, (cfg.height, cfg.width)), cfg.classes)
    while model.task_loss(y_hat, y) == 0:
        y_hat = LabelMap(rng.integers(0, cfg.classes, (cfg.height, cfg.width)), cfg.classes)
    return model, x, y, y_hat


@dataclass
class CheckResult:
    family: str
    index: int
    houdini_error: float
    gap_error: float
    score_gap: float


def check_case(model, x, y, y_hat, h: float = 1e-5) -> tuple[float, float, float]:
    """Relative errors of (Houdini gradient, rescaled score-gap gradient) against central differences.

    The competing target stays fixed while differencing.
    """
    loss = model.task_loss(y_hat, y)
    fn = houdini_objective(model, y, y_hat, loss)
    analytic = houdini_input_grad(model, x, y, y_hat, loss)
    numeric = T.finite_difference_gradient(lambda z: fn(T.Tensor(z)), x, h)

    def gap(z):
        out = model.forward(T.Tensor(z))
        return loss * (model.score(out, y_hat).item() - model.score(out, y).item())

    rescaled = houdini_input_grad(model, x, y, y_hat, loss, rescale=True)
    numeric_gap = T.finite_difference_gradient(gap, x, h)
    dg = model.g(x, y) - model.g(x, y_hat)
    return rel_error(analytic, numeric), rel_error(rescaled, numeric_gap), dg


def run_gradcheck(seed: int = 0, configs: int = 100, families=FAMILIES) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for fam in families:
        for i in range(configs):
            model, x, y, y_hat = random_case(fam, rng)
            he, ge, dg = check_case(model, x, y, y_hat)
            results.append(CheckResult(fam, i, he, ge, dg))
    return results
