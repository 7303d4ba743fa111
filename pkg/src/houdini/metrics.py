"""Task losses and perceptual distortion measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_K1, SSIM_K2 = 0.01, 0.03


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class KeypointAnnotation:
    """Keypoint positions as (row, col) pixel coordinates plus head size."""

    positions: np.ndarray
    visible: np.ndarray
    head_size: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        vis = np.ones(len(pos), bool) if self.visible is None else np.asarray(self.visible, dtype=bool)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visible", vis)
        if len(pos) < 1:
            raise MetricError("annotation needs at least one keypoint")
        if vis.shape != (len(pos),):
            raise MetricError(f"visibility mask has shape {vis.shape}, expected ({len(pos)},)")
        if not self.head_size > 0:
            raise MetricError(f"head size must be positive, got {self.head_size}")

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, KeypointAnnotation):
            return NotImplemented
        return (np.array_equal(self.positions, other.positions) and np.array_equal(self.visible, other.visible)
                and self.head_size == other.head_size)

    def pixels(self) -> np.ndarray:
        return np.rint(self.positions).astype(int)

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(), "visible": self.visible.astype(int).tolist(),
                "head_size": float(self.head_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointAnnotation":
        return cls(np.asarray(d["positions"], float), np.asarray(d["visible"], bool), float(d["head_size"]))


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise MetricError(f"label map must be 2-D, got shape {lab.shape}")
        lab = lab.astype(np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise MetricError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    def to_dict(self) -> dict:
        return {"num_classes": int(self.num_classes), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelMap":
        return cls(np.asarray(d["labels"], dtype=np.int64), int(d["num_classes"]))


@dataclass(frozen=True)
class TokenSequence:
    """A transcript over a finite alphabet; words are space separated."""

    text: str
    alphabet: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.alphabet is not None:
            bad = set(self.text) - set(self.alphabet)
            if bad:
                raise MetricError(f"symbols {sorted(bad)} not in alphabet {self.alphabet!r}")

    def __len__(self):
        return len(self.text)

    def __str__(self):
        return self.text

    def words(self) -> list[str]:
        return words(self.text)


def words(text: str) -> list[str]:
    t = text.strip()
    return t.split(" ") if t else []


def _tokens(s) -> Sequence:
    return s.text if isinstance(s, TokenSequence) else s


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (substitutions, insertions, deletions)."""
    a, b = _tokens(a), _tokens(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def error_rate(reference: Sequence, hypothesis: Sequence) -> float:
    """Edit distance normalized by the reference length. Not clamped to 1."""
    reference, hypothesis = _tokens(reference), _tokens(hypothesis)
    if len(reference) == 0:
        raise MetricError("error rate is undefined for an empty reference")
    return levenshtein(reference, hypothesis) / len(reference)


def wer(reference, hypothesis) -> float:
    return error_rate(words(str(reference)), words(str(hypothesis)))


def cer(reference, hypothesis) -> float:
    return error_rate(str(reference), str(hypothesis))


def pckh(pred: KeypointAnnotation, truth: KeypointAnnotation, alpha: float = 0.5) -> float:
    """Fraction of visible truth keypoints predicted strictly within alpha * head size."""
    if len(pred) != len(truth):
        raise MetricError(f"keypoint count mismatch: {len(pred)} predicted vs {len(truth)} annotated")
    if alpha <= 0:
        raise MetricError("alpha must be positive")
    vis = truth.visible
    if not vis.any():
        raise MetricError("no visible keypoints in the annotation")
    dist = np.linalg.norm(pred.positions - truth.positions, axis=1)
    hit = dist < alpha * truth.head_size
    return float(hit[vis].sum() / vis.sum())


def confusion_matrix(pred: LabelMap, truth: LabelMap, num_classes: int) -> np.ndarray:
    """counts[t, p] = number of pixels with true class t predicted as p."""
    if pred.shape != truth.shape:
        raise MetricError(f"label map dimensions differ: {pred.shape} vs {truth.shape}")
    idx = truth.labels.ravel() * num_classes + pred.labels.ravel()
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def mean_iou(pred: LabelMap, truth: LabelMap, num_classes: int | None = None) -> float:
    """Class-averaged IoU over classes present in either map."""
    c = num_classes or max(pred.num_classes, truth.num_classes)
    cm = confusion_matrix(pred, truth, c)
    tp = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - tp
    present = union > 0
    if not present.any():
        return 1.0
    return float(np.mean(tp[present] / union[present]))


def perceptibility(x, x_adv) -> float:
    """Root mean squared difference between two inputs."""
    x, x_adv = _arr(x), _arr(x_adv)
    if x.shape != x_adv.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    return float(np.sqrt(np.mean((x_adv - x) ** 2)))


def _arr(v) -> np.ndarray:
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def ssim(x, x_adv, window: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    """Mean SSIM over all ``window`` x ``window`` uniform windows.

    2-D inputs are single channel; 3-D inputs are (C, H, W) and the per
    channel means are averaged.
    """
    x, y = _arr(x), _arr(x_adv)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.ndim != 3:
        raise MetricError(f"expected (H, W) or (C, H, W) image, got shape {x.shape}")
    if x.shape[-2] < window or x.shape[-1] < window:
        raise MetricError(f"image {x.shape[-2:]} smaller than the {window}x{window} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    wx = sliding_window_view(x, (window, window), axis=(-2, -1))
    wy = sliding_window_view(y, (window, window), axis=(-2, -1))
    mx, my = wx.mean(axis=(-2, -1)), wy.mean(axis=(-2, -1))
    vx = (wx * wx).mean(axis=(-2, -1)) - mx * mx
    vy = (wy * wy).mean(axis=(-2, -1)) - my * my
    cov = (wx * wy).mean(axis=(-2, -1)) - mx * my
    s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.mean(s.mean(axis=(-2, -1))))
