from __future__ import annotations

import copy
from typing import Any, ClassVar

import numpy as np

from .. import tensor as T


class ModelError(ValueError):
    """Input or target incompatible with a model."""


class InfeasibleTargetError(ModelError):
    """The target cannot be scored by the model (e.g. a CTC label too long for the lattice)."""


class StructuredModel:
    """Scoring function g(x, y) with a matching argmax decoder.

    Subclasses implement ``forward`` (input -> raw network output),
    ``score`` (output, target -> scalar tensor), ``decode`` (output ->
    target), ``task_loss`` and ``train_loss``.  Parameters live in
    ``self.params`` as float64 arrays; ``forward`` takes an optional mapping
    of tensors to differentiate with respect to them.
    """

    family: ClassVar[str] = ""

    def __init__(self, config, params: dict[str, np.ndarray]):
        self.config = config
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.history: dict[str, Any] = {}

    def __repr__(self):
        n = sum(v.size for v in self.params.values())
        return f"{type(self).__name__}({self.config}, {n} params)"

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def with_params(self, params: dict[str, np.ndarray]) -> "StructuredModel":
        new = copy.copy(self)
        new.params = {k: np.asarray(params[k], dtype=np.float64) for k in self.params}
        new.history = dict(self.history)
        return new

    def _p(self, params):
        if params is None:
            return {k: T.Tensor(v) for k, v in self.params.items()}
        return params

    # -- interface ---------------------------------------------------------

    def input_shape(self) -> tuple[int, ...]:
        raise NotImplementedError

    def check_input(self, x) -> None:
        shape = tuple(np.shape(getattr(x, "data", x)))
        want = self.input_shape()
        if shape[-len(want):] != want or len(shape) not in (len(want), len(want) + 1):
            raise ModelError(f"{self.family} model expects input shape {want} (optionally batched), got {shape}")

    def forward(self, x, params=None) -> T.Tensor:
        raise NotImplementedError

    def score(self, out: T.Tensor, y) -> T.Tensor:
        raise NotImplementedError

    def decode(self, out, reference=None):
        raise NotImplementedError

    def task_loss(self, y_hat, y) -> float:
        raise NotImplementedError

    def train_loss(self, out: T.Tensor, ys) -> T.Tensor:
        """Mean training surrogate over a batch of outputs and targets."""
        raise NotImplementedError

    # -- conveniences --------------------------------------------------------

    def predict(self, x, reference=None):
        return self.decode(self.forward(x), reference)

    def metric(self, y_hat, y) -> float:
        """Task performance (PCKh, mIoU or WER)."""
        return 1.0 - self.task_loss(y_hat, y)

    def g(self, x, y) -> float:
        return self.score(self.forward(x), y).item()
