from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..metrics import TokenSequence, wer
from . import ctc
from .base import InfeasibleTargetError, ModelError, StructuredModel


@dataclass(frozen=True)
class SequenceConfig:
    features: int = 8
    alphabet: str = "abc "
    hidden: int = 16
    kernel: int = 3

    def to_dict(self):
        return asdict(self)


class SequenceModel(StructuredModel):
    """Conv1d -> Elman recurrence -> per-frame log-softmax over alphabet + blank.

    Inputs are spectrogram-like (T, F) arrays.  The score of a transcript is
    its CTC log probability; decoding is greedy.
    """

    family = "sequence"

    @classmethod
    def init(cls, config: SequenceConfig, seed: int) -> "SequenceModel":
        rng = np.random.default_rng(seed)
        f, h, k, a = config.features, config.hidden, config.kernel, len(config.alphabet) + 1
        params = {
            "conv_w": rng.normal(0, np.sqrt(2.0 / (f * k)), (h, f, k)),
            "conv_b": np.zeros(h),
            "rnn_wx": rng.normal(0, np.sqrt(1.0 / h), (h, h)),
            "rnn_wh": rng.normal(0, 0.5 / np.sqrt(h), (h, h)),
            "rnn_b": np.zeros(h),
            "out_wh": rng.normal(0, np.sqrt(1.0 / h), (h, a)),
            "out_wc": rng.normal(0, np.sqrt(1.0 / h), (h, a)),
            "out_b": np.zeros(a),
        }
        return cls(config, params)

    @property
    def alphabet(self) -> str:
        return self.config.alphabet

    @property
    def blank(self) -> int:
        return len(self.config.alphabet)

    def input_shape(self):
        return (self.config.features,)

    def check_input(self, x):
        shape = np.shape(getattr(x, "data", x))
        if len(shape) not in (2, 3) or shape[-1] != self.config.features or shape[-2] < 1:
            raise ModelError(f"sequence model expects (T, {self.config.features}) input, got {shape}")

    def forward(self, x, params=None) -> T.Tensor:
        """Per-frame log probabilities, (T, A + 1) or (B, T, A + 1)."""
        self.check_input(x)
        p = self._p(params)
        x = T.as_tensor(x)
        batched = x.ndim == 3
        axes = (0, 2, 1) if batched else (1, 0)
        c = T.relu(T.transpose(T.conv1d(T.transpose(x, axes), p["conv_w"], p["conv_b"]), axes))
        pre = T.matmul(c, p["rnn_wx"]) + p["rnn_b"]
        n_t = x.shape[-2]
        h = None
        states = []
        for t in range(n_t):
            step = pre[:, t] if batched else pre[t]
            if h is not None:
                step = step + T.matmul(h, p["rnn_wh"])
            h = T.tanh(step)
            states.append(h)
        hs = T.stack(states, axis=-2)
        logits = T.matmul(hs, p["out_wh"]) + T.matmul(c, p["out_wc"]) + p["out_b"]
        return T.log_softmax(logits, axis=-1)

    def lattice(self, x) -> ctc.CtcLattice:
        return ctc.CtcLattice(self.forward(x))

    def encode(self, y) -> list[int]:
        text = str(y)
        try:
            return [self.alphabet.index(ch) for ch in text]
        except ValueError:
            raise ModelError(f"transcript {text!r} has symbols outside alphabet {self.alphabet!r}") from None

    def to_text(self, labels) -> TokenSequence:
        return TokenSequence("".join(self.alphabet[i] for i in labels), self.alphabet)

    def score(self, out, y) -> T.Tensor:
        res = ctc.ctc_label_score(out, self.encode(y))
        if not res.feasible:
            raise InfeasibleTargetError(f"transcript {str(y)!r} does not fit in {out.shape[0]} frames")
        return res.value

    def decode(self, out, reference=None) -> TokenSequence:
        return self.to_text(ctc.greedy_decode(out))

    def task_loss(self, y_hat, y) -> float:
        return wer(y, y_hat)

    def train_loss(self, out, ys) -> T.Tensor:
        if out.ndim == 2:
            return ctc.ctc_loss(out, self.encode(ys[0] if isinstance(ys, list) else ys))
        losses = [ctc.ctc_loss(out[b], self.encode(y)) for b, y in enumerate(ys)]
        return T.stack(losses).mean()
