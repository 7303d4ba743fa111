"""Gradient-based adversarial example generation for structured models."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .metrics import MetricError, TokenSequence, perceptibility, ssim
from .models import InfeasibleTargetError, StructuredModel
from .surrogates import SURROGATES, surrogate_dispatch

NORMS = (2.0, math.inf)
MODES = ("untargeted", "targeted")
# Largest achievable task loss per family; sequences (WER) are unbounded.
MAX_TASK_LOSS = {"keypoints": 1.0, "segmentation": 1.0, "sequence": None}


class AttackError(ValueError):
    pass


class ZeroGradientError(ArithmeticError):
    """The surrogate gradient vanished; the caller decides whether to stop."""


@dataclass(frozen=True)
class AttackSpec:
    surrogate: str = "houdini"
    norm: float = math.inf
    epsilon: float = 0.1
    step: float | None = None
    max_iter: int = 1
    mode: str = "untargeted"
    target: Any = None
    project: bool = True
    clamp: tuple[float, float] = (-math.inf, math.inf)
    seed: int = 0
    patience: int = 10
    decoy: str | None = None
    name: str = ""

    def __post_init__(self):
        norm = float(self.norm)
        if norm not in NORMS:
            raise AttackError(f"norm must be 2 or inf, got {self.norm}")
        object.__setattr__(self, "norm", norm)
        if self.surrogate not in SURROGATES:
            raise AttackError(f"unknown surrogate {self.surrogate!r}; expected one of {SURROGATES}")
        if self.mode not in MODES:
            raise AttackError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epsilon < 0:
            raise AttackError("epsilon must be non-negative")
        step = self.epsilon if self.step is None else float(self.step)
        object.__setattr__(self, "step", step)
        if step < 0:
            raise AttackError("step must be non-negative")
        if self.project and step > self.epsilon:
            raise AttackError(f"step {step} exceeds epsilon {self.epsilon} with ball projection on")
        if self.max_iter < 1:
            raise AttackError("max_iter must be at least 1")
        if self.patience < 1:
            raise AttackError("patience must be at least 1")
        lo, hi = (float(v) for v in self.clamp)
        if not lo < hi:
            raise AttackError(f"clamp range must satisfy lo < hi, got {self.clamp}")
        object.__setattr__(self, "clamp", (lo, hi))
        if not self.name:
            norm_s = "inf" if norm == math.inf else "2"
            object.__setattr__(self, "name", f"{self.mode}-{self.surrogate}-L{norm_s}-eps{self.epsilon:g}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("target")
        d["norm"] = "inf" if self.norm == math.inf else 2
        d["clamp"] = [_num(v) for v in self.clamp]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise AttackError(f"unknown attack fields: {sorted(unknown)}")
        for k in ("norm", "epsilon"):
            if k in d:
                d[k] = float(d[k])
        if d.get("step") is not None:
            d["step"] = float(d["step"])
        if "clamp" in d:
            d["clamp"] = tuple(float(v) for v in d["clamp"])
        return cls(**d)


def _num(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


@dataclass
class TraceRow:
    iteration: int
    surrogate: float
    task_loss: float
    best_task_loss: float
    target_loss: float
    perceptibility: float
    ssim: float
    distance: float

    def as_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    trace: list[TraceRow]
    clean_prediction: Any
    final_prediction: Any
    clean_task_loss: float
    final_task_loss: float
    success_iteration: int | None = None
    stalled: bool = False
    half_checkpoint: dict | None = None
    final_checkpoint: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


# --- single steps ---------------------------------------------------------------


def fgsm_step(x, grad, eps: float, p: float) -> np.ndarray:
    """x + eps * sign(grad) for p = inf; x + eps * grad / ||grad||_2 for p = 2."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if x.shape != grad.shape:
        raise AttackError(f"gradient shape {grad.shape} does not match input {x.shape}")
    if float(p) == math.inf:
        return x + eps * np.sign(grad)
    if float(p) != 2.0:
        raise AttackError(f"norm must be 2 or inf, got {p}")
    peak = np.max(np.abs(grad)) if grad.size else 0.0
    if peak == 0:
        raise ZeroGradientError("zero gradient: no 2-norm ascent direction")
    unit = grad / peak  # pre-scale so the norm cannot underflow on tiny gradients
    return x + eps * (unit / np.linalg.norm(unit))


def project_ball(x_adv, x0, eps: float, p: float) -> np.ndarray:
    delta = x_adv - x0
    if p == math.inf:
        return x0 + np.clip(delta, -eps, eps)
    n = np.linalg.norm(delta)
    if n > eps:
        delta = delta * (eps / n)
    return x0 + delta


def _dist(a, b, p: float) -> float:
    d = (a - b).ravel()
    return float(np.max(np.abs(d)) if p == math.inf else np.linalg.norm(d)) if d.size else 0.0


# --- target selection -----------------------------------------------------------


def default_decoy(y: TokenSequence, alphabet: str) -> TokenSequence:
    """Shift every letter to the next non-space symbol; word structure is kept."""
    letters = [c for c in alphabet if c != " "]
    text = "".join(c if c == " " else letters[(letters.index(c) + 1) % len(letters)] for c in str(y))
    return TokenSequence(text, alphabet)


def select_untargeted(model: StructuredModel, x, y_truth, out=None, decoy=None):
    """Competing target for an untargeted attack.

    sequences: the decoded transcript if already wrong, else the decoy;
    keypoints: per joint, the best pixel farther than alpha * h from the truth;
    segmentation: per pixel, the best class other than the true one.
    """
    if out is None:
        out = model.forward(x)
    fam = model.family
    if fam == "sequence":
        dec = model.decode(out)
        if str(dec) != str(y_truth):
            return dec
        if decoy is None:
            return default_decoy(y_truth, model.alphabet)
        return decoy if isinstance(decoy, TokenSequence) else TokenSequence(str(decoy), model.alphabet)
    if fam == "keypoints":
        return select_keypoint_target(out, y_truth, model.config.alpha)
    if fam == "segmentation":
        return select_segmentation_target(out, y_truth)
    raise AttackError(f"no untargeted rule for family {fam!r}")


def select_keypoint_target(heatmaps, y_truth, alpha: float):
    from .metrics import KeypointAnnotation

    hm = np.asarray(getattr(heatmaps, "data", heatmaps))
    n, h, w = hm.shape
    rows, cols = np.mgrid[0:h, 0:w]
    radius = alpha * y_truth.head_size
    pos = y_truth.positions.copy()
    for j, (r, c) in enumerate(y_truth.pixels()):
        if not y_truth.visible[j]:
            continue
        far = np.hypot(rows - r, cols - c) > radius
        if not far.any():
            continue
        masked = np.where(far, hm[j], -np.inf)
        k = int(np.argmax(masked))
        pos[j] = (k // w, k % w)
    return KeypointAnnotation(pos, y_truth.visible.copy(), y_truth.head_size)


def select_segmentation_target(scores, y_truth):
    from .metrics import LabelMap

    s = np.array(np.asarray(getattr(scores, "data", scores)), copy=True)
    rows, cols = np.indices(y_truth.shape)
    s[y_truth.labels, rows, cols] = -np.inf
    return LabelMap(np.argmax(s, axis=0), y_truth.num_classes)


# --- iterative attack -------------------------------------------------------------


def _ssim_or_nan(x0, x) -> float:
    try:
        return ssim(x0, x)
    except MetricError:
        return float("nan")


def run_attack(model: StructuredModel, x, y_truth, spec: AttackSpec) -> AttackResult:
    """Iterated surrogate-gradient attack with optional ball projection and clamping.

    Untargeted attacks ascend the surrogate measured against ``y_truth`` and
    re-select the competing target every iteration.  Targeted attacks
    descend the surrogate measured against ``spec.target``; each iteration
    starts from the previous adversarial input.
    """
    x0 = np.asarray(getattr(x, "data", x), dtype=np.float64)
    model.check_input(x0)
    targeted = spec.mode == "targeted"
    if targeted and spec.target is None:
        raise AttackError("targeted attack needs spec.target")
    lo, hi = spec.clamp
    max_loss = MAX_TASK_LOSS.get(model.family)

    out0 = model.forward(x0)
    clean_pred = model.decode(out0, y_truth)
    clean_loss = model.task_loss(clean_pred, y_truth)
    clean_perf = 1.0 - clean_loss

    def target_loss(pred):
        return model.task_loss(pred, spec.target) if targeted else float("nan")

    res = AttackResult(x0.copy(), [], clean_pred, clean_pred, clean_loss, clean_loss)
    res.final_checkpoint = {"iteration": 0, "perceptibility": 0.0, "ssim": _ssim_or_nan(x0, x0)}
    if clean_perf <= 0:
        res.half_checkpoint = dict(res.final_checkpoint)
    if targeted and target_loss(clean_pred) == 0:
        res.success_iteration = 0
        return res

    best_x, best_pred = None, clean_pred
    best_loss, best_tgt = clean_loss, target_loss(clean_pred)
    running_max = clean_loss
    best_sur = math.inf if targeted else -math.inf
    since_improved = 0
    xk, out, pred = x0.copy(), out0, clean_pred

    for it in range(1, spec.max_iter + 1):
        try:
            if targeted:
                y_ref, y_hat = spec.target, pred
            else:
                y_ref = y_truth
                y_hat = select_untargeted(model, xk, y_truth, out, spec.decoy) if spec.surrogate == "houdini" else None
            sval, grad = surrogate_dispatch(spec.surrogate, model, xk, y_ref, y_hat, rescale=True)
            # the Houdini value underflows on confident models; track its (monotone) score margin instead
            margin = (float(model.score(out, y_hat).item() - model.score(out, y_ref).item())
                      if spec.surrogate == "houdini" else sval)
        except InfeasibleTargetError as err:
            res.notes.append(f"iteration {it}: {err}")
            res.stalled = True
            break
        direction = -grad if targeted else grad
        if not np.any(direction):
            res.notes.append(f"iteration {it}: zero gradient")
            res.stalled = True
            break
        xk = fgsm_step(xk, direction, spec.step, spec.norm)
        if spec.project:
            xk = project_ball(xk, x0, spec.epsilon, spec.norm)
        xk = np.clip(xk, lo, hi)

        out = model.forward(xk)
        pred = model.decode(out, y_truth)
        loss = model.task_loss(pred, y_truth)
        tloss = target_loss(pred)
        perc, sim = perceptibility(x0, xk), _ssim_or_nan(x0, xk)
        running_max = max(running_max, loss)
        # progress = better task loss, or a still-improving surrogate on a task-loss plateau
        improved = tloss < best_tgt if targeted else loss > best_loss
        if improved or best_x is None:
            best_x, best_pred = xk.copy(), pred
        if improved:
            best_loss, best_tgt = loss, tloss
        sur_improved = margin < best_sur if targeted else margin > best_sur
        if sur_improved:
            best_sur = margin
        since_improved = 0 if improved or sur_improved else since_improved + 1
        res.trace.append(TraceRow(it, float(sval), loss, running_max, tloss, perc, sim, _dist(xk, x0, spec.norm)))
        if res.half_checkpoint is None and 1.0 - loss <= 0.5 * clean_perf:
            res.half_checkpoint = {"iteration": it, "perceptibility": perc, "ssim": sim}

        if targeted and tloss == 0:
            res.success_iteration = it
            break
        if not targeted and max_loss is not None and loss >= max_loss:
            res.success_iteration = it
            break
        if since_improved >= spec.patience:
            break

    if best_x is None:  # stalled before the first step
        best_x = np.clip(x0, lo, hi)
        best_pred = model.decode(model.forward(best_x), y_truth)
    res.x_adv = best_x
    res.final_prediction = best_pred
    res.final_task_loss = model.task_loss(best_pred, y_truth)
    res.final_checkpoint = {"iteration": len(res.trace), "perceptibility": perceptibility(x0, best_x),
                            "ssim": _ssim_or_nan(x0, best_x)}
    return res


# --- campaigns ------------------------------------------------------------------


def task_metrics(model: StructuredModel, pred, y) -> dict[str, float]:
    """Reportable task metrics for one prediction."""
    from .metrics import cer, mean_iou, pckh, wer

    if model.family == "sequence":
        return {"wer": wer(y, pred), "cer": cer(y, pred)}
    if model.family == "keypoints":
        return {"pckh": pckh(pred, y, model.config.alpha)}
    return {"miou": mean_iou(pred, y, model.config.classes)}


def targeted_partner(i: int, n: int) -> int:
    """Pairs (0,1), (2,3), ... swap targets; a trailing odd example pairs with its predecessor."""
    if n < 2:
        return i
    j = i + 1 if i % 2 == 0 else i - 1
    return j if j < n else i - 1


def _attack_row(model, dataset, i, spec) -> dict:
    x, y = dataset[i]
    row: dict[str, Any] = {"example": i, "spec": spec.name, "surrogate": spec.surrogate, "mode": spec.mode,
                           "norm": "inf" if spec.norm == math.inf else "2", "epsilon": spec.epsilon,
                           "step": spec.step}
    try:
        s = spec
        if spec.mode == "targeted" and spec.target is None:
            s = replace(spec, target=dataset[targeted_partner(i, len(dataset))][1])
        res = run_attack(model, x, y, s)
    except Exception as err:  # recorded, campaign continues
        row["error"] = f"{type(err).__name__}: {err}"
        return row
    clean = task_metrics(model, res.clean_prediction, y)
    final = task_metrics(model, res.final_prediction, y)
    for k in clean:
        row[f"clean_{k}"] = clean[k]
        row[f"adv_{k}"] = final[k]
    half = res.half_checkpoint or {}
    row.update({
        "iterations": res.iterations,
        "success_iteration": res.success_iteration,
        "stalled": res.stalled,
        "half_iteration": half.get("iteration"),
        "perceptibility_half": half.get("perceptibility"),
        "ssim_half": half.get("ssim"),
        "perceptibility_lim": res.final_checkpoint["perceptibility"],
        "ssim_lim": res.final_checkpoint["ssim"],
        "max_distance": max((t.distance for t in res.trace), default=0.0),
        "error": None,
    })
    row["_trace"] = [t.as_dict() for t in res.trace]
    return row


@dataclass
class CampaignResult:
    rows: list[dict]
    summary: list[dict]

    def traces(self) -> dict[tuple[int, str], list[dict]]:
        return {(r["example"], r["spec"]): r.get("_trace", []) for r in self.rows}


def summarize(rows: list[dict]) -> list[dict]:
    """Mean of every numeric column per spec, in first-seen spec order."""
    order: dict[str, list[dict]] = {}
    for r in rows:
        order.setdefault(r["spec"], []).append(r)
    out = []
    for name, group in order.items():
        ok = [r for r in group if not r.get("error")]
        first = group[0]
        s = {k: first[k] for k in ("spec", "surrogate", "mode", "norm", "epsilon", "step")}
        s["examples"] = len(group)
        s["failures"] = len(group) - len(ok)
        s["successes"] = sum(1 for r in ok if r.get("success_iteration") is not None)
        keys = [k for k in (ok[0] if ok else {}) if k.startswith(("clean_", "adv_", "perceptibility", "ssim"))
                or k in ("iterations",)]
        for k in keys:
            vals = [r[k] for r in ok if isinstance(r.get(k), (int, float)) and r.get(k) is not None]
            s[k] = float(np.mean(vals)) if vals else None
        out.append(s)
    return out


def run_campaign(model: StructuredModel, dataset, specs: list[AttackSpec], workers: int = 1) -> CampaignResult:
    """Attack every example with every spec; rows are ordered (spec, example)."""
    jobs = [(i, s) for s in specs for i in range(len(dataset))]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda job: _attack_row(model, dataset, *job), jobs))
    else:
        rows = [_attack_row(model, dataset, i, s) for i, s in jobs]
    return CampaignResult(rows, summarize(rows))
