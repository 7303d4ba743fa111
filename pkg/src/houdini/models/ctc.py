"""CTC lattice scoring via the forward-backward recursions.

The blank symbol sits at the last column of the lattice.  A repeated label
needs an intervening blank.  The whole forward-backward pass is one
primitive on the tape: its adjoint with respect to the frame log
probabilities is the posterior state occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .. import tensor as T


@dataclass
class CtcLattice:
    """Per-frame log probabilities, shape (T, A + 1), blank in the last column."""

    logp: T.Tensor

    @property
    def frames(self) -> int:
        return self.logp.shape[0]

    @property
    def blank(self) -> int:
        return self.logp.shape[1] - 1

    def extended(self, labels: Sequence[int]) -> np.ndarray:
        return extend_labels(labels, self.blank)


class CtcScore(NamedTuple):
    value: T.Tensor
    feasible: bool


def extend_labels(labels: Sequence[int], blank: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _skip_mask(ext: np.ndarray) -> np.ndarray:
    # s -> s+2 jumps over a blank; only allowed between distinct labels
    skip = np.zeros(len(ext), dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    return skip


def forward_backward(logp: np.ndarray, labels: Sequence[int]):
    """Return (log_total_forward, log_total_backward, alpha, beta) in log space."""
    logp = np.asarray(logp, dtype=np.float64)
    n_t, n_sym = logp.shape
    for lab in labels:
        if not 0 <= lab < n_sym - 1:
            raise ValueError(f"label index {lab} outside alphabet of size {n_sym - 1}")
    ext = extend_labels(labels, n_sym - 1)
    n_s = len(ext)
    skip = _skip_mask(ext)
    lp = logp[:, ext]
    alpha = np.full((n_t, n_s), -np.inf)
    beta = np.full((n_t, n_s), -np.inf)
    with np.errstate(invalid="ignore"):
        alpha[0, 0] = lp[0, 0]
        if n_s > 1:
            alpha[0, 1] = lp[0, 1]
        for t in range(1, n_t):
            a = alpha[t - 1]
            cand = a.copy()
            cand[1:] = np.logaddexp(cand[1:], a[:-1])
            cand[2:] = np.where(skip[2:], np.logaddexp(cand[2:], a[:-2]), cand[2:])
            alpha[t] = cand + lp[t]

        beta[-1, -1] = lp[-1, -1]
        if n_s > 1:
            beta[-1, -2] = lp[-1, -2]
        for t in range(n_t - 2, -1, -1):
            b = beta[t + 1]
            cand = b.copy()
            cand[:-1] = np.logaddexp(cand[:-1], b[1:])
            cand[:-2] = np.where(skip[2:], np.logaddexp(cand[:-2], b[2:]), cand[:-2])
            beta[t] = cand + lp[t]

        fwd = alpha[-1, -1] if n_s == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
        bwd = beta[0, 0] if n_s == 1 else np.logaddexp(beta[0, 0], beta[0, 1])
    return float(fwd), float(bwd), alpha, beta


def _occupancy(logp, ext, alpha, beta, total) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        gamma = np.exp(alpha + beta - logp[:, ext] - total)
    gamma = np.nan_to_num(gamma, nan=0.0)
    grad = np.zeros_like(logp)
    np.add.at(grad, (slice(None), ext), gamma)
    return grad


def occupancy(logp: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """d log P(labels) / d logp, i.e. per-frame posterior symbol occupancy."""
    logp = np.asarray(logp, dtype=np.float64)
    total, _, alpha, beta = forward_backward(logp, labels)
    return _occupancy(logp, extend_labels(labels, logp.shape[1] - 1), alpha, beta, total)


def ctc_label_score(lattice, labels: Sequence[int]) -> CtcScore:
    """log of the summed probability of every alignment collapsing to ``labels``.

    Labels that cannot fit in the lattice yield ``CtcScore(-inf, False)``.
    """
    logp = lattice.logp if isinstance(lattice, CtcLattice) else T.as_tensor(lattice)
    labels = [int(v) for v in labels]
    if min_frames(labels) > logp.shape[0]:
        return CtcScore(T.Tensor(-np.inf), False)
    total, _, alpha, beta = forward_backward(logp.data, labels)
    ext = extend_labels(labels, logp.shape[1] - 1)

    def vjp(g):
        return (_occupancy(logp.data, ext, alpha, beta, total) * g,)

    return CtcScore(T.custom_op(np.array(total), (logp,), vjp), True)


def ctc_loss(lattice, labels: Sequence[int]) -> T.Tensor:
    score = ctc_label_score(lattice, labels)
    if not score.feasible:
        return T.Tensor(np.inf)
    return -score.value


def greedy_decode(logp) -> list[int]:
    """Frame-wise argmax, merge repeats, drop blanks."""
    logp = np.asarray(getattr(logp, "data", logp))
    best = np.argmax(logp, axis=1)
    blank = logp.shape[1] - 1
    out, prev = [], None
    for k in best:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out
