from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..metrics import LabelMap, mean_iou
from .base import ModelError, StructuredModel


@dataclass(frozen=True)
class SegmentationConfig:
    channels: int = 3
    height: int = 12
    width: int = 12
    classes: int = 3
    hidden: int = 8
    kernel: int = 3

    def to_dict(self):
        return asdict(self)


def _check(scores, y: LabelMap):
    k, h, w = scores.shape[-3:]
    if y.shape != (h, w):
        raise ModelError(f"label map {y.shape} does not match score map {(h, w)}")
    if y.num_classes != k:
        raise ModelError(f"label map has {y.num_classes} classes, scores have {k}")


def seg_score(scores, y: LabelMap) -> T.Tensor:
    """Sum over pixels of the score assigned to the labelled class."""
    scores = T.as_tensor(scores)
    _check(scores, y)
    rows, cols = np.indices(y.shape)
    return scores[y.labels, rows, cols].sum()


def seg_decode(scores) -> LabelMap:
    s = np.asarray(getattr(scores, "data", scores))
    return LabelMap(np.argmax(s, axis=0), s.shape[0])


def seg_nll(scores, y: LabelMap) -> T.Tensor:
    """Mean per-pixel negative log-softmax of the labelled class."""
    scores = T.as_tensor(scores)
    _check(scores, y)
    logp = T.log_softmax(scores, axis=-3)
    rows, cols = np.indices(y.shape)
    return -logp[y.labels, rows, cols].mean()


class SegmentationModel(StructuredModel):
    """Two 'same' convolutions producing per-pixel class scores (K, H, W)."""

    family = "segmentation"

    @classmethod
    def init(cls, config: SegmentationConfig, seed: int) -> "SegmentationModel":
        rng = np.random.default_rng(seed)
        c, h, k, n = config.channels, config.hidden, config.kernel, config.classes
        params = {
            "conv1_w": rng.normal(0, np.sqrt(2.0 / (c * k * k)), (h, c, k, k)),
            "conv1_b": np.zeros(h),
            "conv2_w": rng.normal(0, np.sqrt(1.0 / (h * k * k)), (n, h, k, k)),
            "conv2_b": np.zeros(n),
        }
        return cls(config, params)

    def input_shape(self):
        return (self.config.channels, self.config.height, self.config.width)

    def forward(self, x, params=None) -> T.Tensor:
        self.check_input(x)
        p = self._p(params)
        hidden = T.relu(T.conv2d(x, p["conv1_w"], p["conv1_b"]))
        return T.conv2d(hidden, p["conv2_w"], p["conv2_b"])

    def score(self, out, y) -> T.Tensor:
        return seg_score(out, y)

    def decode(self, out, reference=None) -> LabelMap:
        return seg_decode(out)

    def task_loss(self, y_hat, y) -> float:
        return 1.0 - mean_iou(y_hat, y, self.config.classes)

    def train_loss(self, out, ys) -> T.Tensor:
        if out.ndim == 3:
            return seg_nll(out, ys[0] if isinstance(ys, (list, tuple)) else ys)
        scores = T.as_tensor(out)
        logp = T.log_softmax(scores, axis=1)
        labels = np.stack([y.labels for y in ys])
        b, rows, cols = np.indices(labels.shape)
        return -logp[b, labels, rows, cols].mean()
