"""Synthetic, seed-reproducible datasets for the three task families."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .metrics import KeypointAnnotation, LabelMap, TokenSequence

FAMILIES = ("sequence", "keypoints", "segmentation")

# Distinct colour patterns for keypoint blobs / region classes.
PALETTE = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.5, 0.5, 0.0],
])


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceParams:
    count: int = 64
    frames: int = 18
    features: int = 8
    alphabet: str = "abc "
    words: int = 2
    word_length: int = 2
    frames_per_symbol: int = 2
    noise: float = 0.1
    template_seed: int = 0


@dataclass(frozen=True)
class KeypointParams:
    count: int = 64
    channels: int = 3
    height: int = 16
    width: int = 16
    keypoints: int = 4
    head_size: float = 4.0
    blob_sigma: float = 1.0
    margin: int = 2
    min_separation: float = 4.0
    noise: float = 0.05


@dataclass(frozen=True)
class SegmentationParams:
    count: int = 64
    channels: int = 3
    height: int = 12
    width: int = 12
    classes: int = 3
    min_size: int = 3
    max_size: int = 7
    noise: float = 0.05


PARAMS = {"sequence": SequenceParams, "keypoints": KeypointParams, "segmentation": SegmentationParams}


def make_params(family: str, overrides: dict[str, Any] | None = None):
    if family not in PARAMS:
        raise DataError(f"unknown task family {family!r}; expected one of {FAMILIES}")
    cls = PARAMS[family]
    overrides = dict(overrides or {})
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise DataError(f"unknown {family} dataset parameters: {sorted(unknown)}")
    return replace(cls(), **overrides)


@dataclass
class SyntheticDataset:
    family: str
    examples: list = field(default_factory=list)
    seed: int = 0
    params: Any = None

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def inputs(self) -> np.ndarray:
        return np.stack([x for x, _ in self.examples])

    @property
    def targets(self) -> list:
        return [y for _, y in self.examples]


def _validate(family: str, p) -> None:
    def need(cond, msg):
        if not cond:
            raise DataError(f"{family}: {msg}")

    need(p.count >= 0, "count must be non-negative")
    need(p.noise >= 0, "noise must be non-negative")
    if family == "sequence":
        need(1 <= p.frames <= 32, "frames must be in [1, 32]")
        need(1 <= len(p.alphabet) <= 8, "alphabet size must be in [1, 8]")
        need(" " in p.alphabet and len(set(p.alphabet)) == len(p.alphabet), "alphabet needs unique symbols incl. space")
        need(1 <= p.features <= 32, "features must be in [1, 32]")
        need(p.words >= 1 and p.word_length >= 1 and p.frames_per_symbol >= 1, "sizes must be positive")
        chars = p.words * p.word_length + p.words - 1
        need(1 + chars * (p.frames_per_symbol + 1) <= p.frames, "transcripts do not fit in the frame budget")
    else:
        need(1 <= p.height <= 32 and 1 <= p.width <= 32, "images must be at most 32x32")
        need(1 <= p.channels <= 3, "channels must be in [1, 3]")
    if family == "keypoints":
        need(1 <= p.keypoints <= 8, "keypoints must be in [1, 8]")
        need(p.head_size > 0, "head size must be positive")
        need(2 * p.margin < min(p.height, p.width), "margin too large for image")
    if family == "segmentation":
        need(2 <= p.classes <= 6, "classes must be in [2, 6]")
        need(1 <= p.min_size <= p.max_size <= min(p.height, p.width), "region sizes out of range")


def generate_dataset(family: str, params=None, seed: int = 0) -> SyntheticDataset:
    """Build a dataset; identical (family, params, seed) give identical data."""
    if params is None or isinstance(params, dict):
        params = make_params(family, params)
    _validate(family, params)
    rng = np.random.default_rng(seed)
    gen = {"sequence": _sequence, "keypoints": _keypoints, "segmentation": _segmentation}[family]
    return SyntheticDataset(family, [gen(params, rng) for _ in range(params.count)], seed, params)


# --- sequences ----------------------------------------------------------------


def symbol_templates(p: SequenceParams) -> np.ndarray:
    """Fixed feature vector per alphabet symbol, shared across dataset seeds."""
    rng = np.random.default_rng(p.template_seed)
    return rng.uniform(0.0, 1.0, (len(p.alphabet), p.features))


def vocabulary(p: SequenceParams) -> list[str]:
    letters = [c for c in p.alphabet if c != " "]
    words = [""]
    for _ in range(p.word_length):
        words = [w + c for w in words for c in letters]
    return words


def render_transcript(text: str, p: SequenceParams, offset: int = 0) -> np.ndarray:
    """Noise-free spectrogram: each symbol held for frames_per_symbol frames, silence between."""
    templates = symbol_templates(p)
    x = np.zeros((p.frames, p.features))
    t = 1 + offset
    for ch in text:
        x[t:t + p.frames_per_symbol] = templates[p.alphabet.index(ch)]
        t += p.frames_per_symbol + 1
    return x


def _sequence(p: SequenceParams, rng):
    vocab = vocabulary(p)
    text = " ".join(vocab[i] for i in rng.integers(0, len(vocab), p.words))
    used = 1 + len(text) * (p.frames_per_symbol + 1)
    offset = int(rng.integers(0, p.frames - used + 1))
    x = render_transcript(text, p, offset)
    if p.noise > 0:
        x = x + rng.normal(0.0, p.noise, x.shape)
    return x, TokenSequence(text, p.alphabet)


# --- keypoints ------------------------------------------------------------------


def _keypoints(p: KeypointParams, rng):
    pos = []
    for _ in range(p.keypoints):
        for _attempt in range(200):
            cand = np.array([rng.integers(p.margin, p.height - p.margin), rng.integers(p.margin, p.width - p.margin)])
            if all(np.linalg.norm(cand - q) >= p.min_separation for q in pos):
                break
        pos.append(cand)
    pos = np.array(pos, dtype=np.float64)
    rows, cols = np.mgrid[0:p.height, 0:p.width]
    img = np.zeros((p.channels, p.height, p.width))
    for j, (r, c) in enumerate(pos):
        blob = np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / (2 * p.blob_sigma ** 2))
        img += PALETTE[j % len(PALETTE), :p.channels, None, None] * blob
    if p.noise > 0:
        img = img + rng.uniform(0.0, p.noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img, KeypointAnnotation(pos, np.ones(p.keypoints, bool), p.head_size)


# --- segmentation -------------------------------------------------------------


def _segmentation(p: SegmentationParams, rng):
    labels = np.zeros((p.height, p.width), dtype=np.int64)
    for k in range(1, p.classes):
        h, w = rng.integers(p.min_size, p.max_size + 1, 2)
        r0 = rng.integers(0, p.height - h + 1)
        c0 = rng.integers(0, p.width - w + 1)
        labels[r0:r0 + h, c0:c0 + w] = k
    colours = np.vstack([np.zeros((1, 3)), PALETTE])[:p.classes, :p.channels]
    img = np.moveaxis(colours[labels], -1, 0) * 0.8 + 0.1
    if p.noise > 0:
        img = img + rng.normal(0.0, p.noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img, LabelMap(labels, p.classes)
