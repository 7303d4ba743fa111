from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..metrics import KeypointAnnotation, pckh
from .base import ModelError, StructuredModel

TARGET_SIGMA = 1.0


@dataclass(frozen=True)
class KeypointConfig:
    channels: int = 3
    height: int = 16
    width: int = 16
    keypoints: int = 4
    hidden: int = 8
    kernel: int = 3
    alpha: float = 0.5

    def to_dict(self):
        return asdict(self)


def target_heatmaps(y: KeypointAnnotation, height: int, width: int, sigma: float = TARGET_SIGMA) -> np.ndarray:
    """Unit-peak Gaussians centred on each visible keypoint; invisible planes are zero."""
    rows, cols = np.mgrid[0:height, 0:width]
    maps = np.zeros((len(y), height, width))
    for j, ((r, c), vis) in enumerate(zip(y.positions, y.visible)):
        if vis:
            maps[j] = np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / (2 * sigma ** 2))
    return maps


def keypoint_score(heatmaps, y: KeypointAnnotation) -> T.Tensor:
    """Sum of each visible keypoint's heatmap value at its annotated pixel."""
    heatmaps = T.as_tensor(heatmaps)
    n, h, w = heatmaps.shape[-3:]
    if len(y) != n:
        raise ModelError(f"annotation has {len(y)} keypoints, heatmaps have {n} planes")
    pix = y.pixels()
    vis = np.flatnonzero(y.visible)
    r, c = pix[vis, 0], pix[vis, 1]
    if np.any((r < 0) | (r >= h) | (c < 0) | (c >= w)):
        raise ModelError(f"visible keypoint outside the {h}x{w} heatmap")
    return heatmaps[vis, r, c].sum()


def keypoint_decode(heatmaps, head_size: float) -> KeypointAnnotation:
    """Per-plane argmax pixel; ties go to the lowest row-major index."""
    hm = np.asarray(getattr(heatmaps, "data", heatmaps))
    n, h, w = hm.shape
    flat = np.argmax(hm.reshape(n, -1), axis=1)
    pos = np.stack([flat // w, flat % w], axis=1).astype(np.float64)
    return KeypointAnnotation(pos, np.ones(n, bool), head_size)


class KeypointModel(StructuredModel):
    """Two 'same' convolutions producing one score plane per keypoint."""

    family = "keypoints"

    @classmethod
    def init(cls, config: KeypointConfig, seed: int) -> "KeypointModel":
        rng = np.random.default_rng(seed)
        c, h, k, n = config.channels, config.hidden, config.kernel, config.keypoints
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
        return keypoint_score(out, y)

    def decode(self, out, reference: KeypointAnnotation | None = None) -> KeypointAnnotation:
        head = reference.head_size if reference is not None else 1.0
        return keypoint_decode(out, head)

    def task_loss(self, y_hat, y) -> float:
        return 1.0 - pckh(y_hat, y, self.config.alpha)

    def targets(self, ys) -> np.ndarray:
        return np.stack([target_heatmaps(y, self.config.height, self.config.width) for y in ys])

    def train_loss(self, out, ys) -> T.Tensor:
        """Mean squared error against Gaussian target heatmaps."""
        tgt = self.targets(ys if isinstance(ys, (list, tuple)) else [ys])
        if out.ndim == 3:
            tgt = tgt[0]
        return mse_heatmap(out, tgt)


def mse_heatmap(heatmaps, target) -> T.Tensor:
    diff = T.as_tensor(heatmaps) - T.Tensor(target)
    return T.square(diff).mean()
