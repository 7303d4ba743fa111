"""Houdini loss, its analytical score gradient, and the comparison surrogates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import StructuredModel, ctc_loss, mse_heatmap, seg_nll, target_heatmaps

GAUSS_C = 1.0 / math.sqrt(2.0 * math.pi)
SURROGATES = ("houdini", "ctc", "mse_heatmap", "nll")
_FAMILY_OF = {"ctc": "sequence", "mse_heatmap": "keypoints", "nll": "segmentation"}


class SurrogateError(ValueError):
    pass


def gaussian_tail(t: float) -> float:
    """P[t < gamma] for gamma ~ N(0, 1)."""
    return 0.5 * math.erfc(t / math.sqrt(2.0))


@dataclass(frozen=True)
class ScorePair:
    """Scores of the ground truth and of the competing target."""

    g_truth: T.Tensor
    g_pred: T.Tensor

    def __post_init__(self):
        for name in ("g_truth", "g_pred"):
            v = T.as_tensor(getattr(self, name))
            if v.size != 1 or not np.isfinite(v.item()):
                raise SurrogateError(f"{name} must be a finite scalar, got {v.data}")
            object.__setattr__(self, name, v)

    @property
    def delta(self) -> float:
        return self.g_truth.item() - self.g_pred.item()


@dataclass(frozen=True)
class SurrogateValue:
    value: float
    task_loss: float
    margin_probability: float


def _pair(scores) -> ScorePair:
    return scores if isinstance(scores, ScorePair) else ScorePair(*scores)


def houdini_loss(scores, task_loss: float) -> SurrogateValue:
    """Probability that the score gap falls below a standard normal margin, times the task loss."""
    if task_loss < 0:
        raise SurrogateError(f"task loss must be non-negative, got {task_loss}")
    p = gaussian_tail(_pair(scores).delta)
    return SurrogateValue(p * task_loss, float(task_loss), p)


def houdini_grad_scores(scores, task_loss: float) -> tuple[float, float]:
    """(d loss / d g_truth, d loss / d g_pred)."""
    dg = _pair(scores).delta
    mag = GAUSS_C * math.exp(-0.5 * dg * dg) * task_loss
    return -mag, mag


def _houdini_tensor(g_truth: T.Tensor, g_pred: T.Tensor, task_loss: float) -> T.Tensor:
    # forward value is the exact loss; the adjoint is the analytical score gradient
    pair = ScorePair(g_truth, g_pred)
    value = houdini_loss(pair, task_loss).value
    d_truth, d_pred = houdini_grad_scores(pair, task_loss)
    return T.custom_op(np.array(value), (g_truth, g_pred), lambda g: (g * d_truth, g * d_pred))


def houdini_value_and_grad(model: StructuredModel, x, y, y_hat, task_loss: float | None = None,
                           rescale: bool = False) -> tuple[SurrogateValue, np.ndarray]:
    """Houdini loss at ``x`` and its gradient with respect to ``x``.

    The score gradient is pushed through the network by one backward pass.
    With ``rescale=True`` the common positive factor C * exp(-dg^2 / 2) is
    dropped from the gradient: the direction is unchanged, but it no longer
    underflows to zero when the score gap is large.
    """
    if task_loss is None:
        task_loss = model.task_loss(y_hat, y)
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    with T.Tape() as tape:
        xt = tape.watch(x)
        out = model.forward(xt)
        pair = ScorePair(model.score(out, y), model.score(out, y_hat))
        val = houdini_loss(pair, task_loss)
        if task_loss == 0:
            return val, np.zeros_like(x)
        if rescale:
            d_truth, d_pred = -task_loss, task_loss
        else:
            d_truth, d_pred = houdini_grad_scores(pair, task_loss)
        tape.backward(pair.g_truth * d_truth + pair.g_pred * d_pred)
    return val, xt.grad


def houdini_input_grad(model: StructuredModel, x, y, y_hat, task_loss: float | None = None,
                       rescale: bool = False) -> np.ndarray:
    return houdini_value_and_grad(model, x, y, y_hat, task_loss, rescale)[1]


def houdini_objective(model: StructuredModel, y, y_hat, task_loss: float):
    """x -> Houdini loss as a tensor function, for end-to-end differentiation."""
    def fn(x):
        out = model.forward(x)
        return _houdini_tensor(model.score(out, y), model.score(out, y_hat), task_loss)
    return fn


def probit_samples(model: StructuredModel, x, y, num_samples: int, noise_scale: float, seed: int) -> np.ndarray:
    """Task losses of decodes under Gaussian parameter perturbations."""
    if num_samples < 1 or noise_scale <= 0:
        raise SurrogateError("need num_samples >= 1 and noise_scale > 0")
    rng = np.random.default_rng(seed)
    out = np.empty(num_samples)
    for k in range(num_samples):
        noisy = {name: p + rng.normal(0.0, noise_scale, p.shape) for name, p in model.params.items()}
        m = model.with_params(noisy)
        out[k] = m.task_loss(m.predict(x, y), y)
    return out


def probit_loss_mc(model: StructuredModel, x, y, num_samples: int, noise_scale: float, seed: int) -> float:
    """Monte-Carlo structured probit loss; a baseline with no gradient path."""
    return float(probit_samples(model, x, y, num_samples, noise_scale, seed).mean())


def surrogate_dispatch(name: str, model: StructuredModel, x, y_target, y_hat=None, task_loss: float | None = None,
                       rescale: bool = False) -> tuple[float, np.ndarray]:
    """Loss value and input gradient for a named surrogate.

    ``y_target`` is the target the loss is measured against: the ground
    truth for untargeted attacks, the desired output for targeted ones.
    """
    if name not in SURROGATES:
        raise SurrogateError(f"unknown surrogate {name!r}; expected one of {SURROGATES}")
    if name == "houdini":
        if y_hat is None:
            raise SurrogateError("houdini needs a competing target y_hat")
        val, grad = houdini_value_and_grad(model, x, y_target, y_hat, task_loss, rescale)
        return val.value, grad
    if _FAMILY_OF[name] != model.family:
        raise SurrogateError(f"surrogate {name!r} is for {_FAMILY_OF[name]} models, not {model.family}")

    def fn(xt):
        out = model.forward(xt)
        if name == "ctc":
            return ctc_loss(out, model.encode(y_target))
        if name == "mse_heatmap":
            return mse_heatmap(out, target_heatmaps(y_target, *out.shape[-2:]))
        return seg_nll(out, y_target)

    value, (grad,) = T.value_and_grad(fn, np.asarray(getattr(x, "data", x), dtype=np.float64))
    return value, grad
