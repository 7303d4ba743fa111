from __future__ import annotations

import numpy as np

from .. import tensor as T
from .base import StructuredModel


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        self.epoch, self.loss = epoch, loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


def train_toy(model: StructuredModel, dataset, epochs: int, lr: float, seed: int = 0,
              batch_size: int | None = None) -> StructuredModel:
    """Plain gradient descent on the model's training surrogate.

    ``dataset`` is a sequence of (input, target) pairs or any object with an
    ``examples`` attribute holding them.  Returns a new model; the input model
    is left untouched.  ``history`` on the result holds the per-epoch loss and
    the final clean task metric on the training data.
    """
    examples = list(getattr(dataset, "examples", dataset))
    if not examples:
        raise ValueError("empty training set")
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in examples])
    ys = [y for _, y in examples]
    names = list(model.params)
    params = [model.params[k].copy() for k in names]
    rng = np.random.default_rng(seed)
    n = len(examples)
    bs = n if batch_size is None else min(batch_size, n)
    losses = []

    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            batch_y = [ys[i] for i in idx]

            def objective(*ps, xb=xs[idx], yb=batch_y):
                out = model.forward(T.Tensor(xb), dict(zip(names, ps)))
                return model.train_loss(out, yb)

            loss, grads = T.value_and_grad(objective, *params)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(epoch, loss)
            params = [p - lr * g for p, g in zip(params, grads)]
            total += loss * len(idx)
        losses.append(total / n)

    trained = model.with_params(dict(zip(names, params)))
    trained.history = {
        "loss": losses,
        "clean_metric": float(np.mean([trained.metric(trained.predict(x, y), y) for x, y in examples])),
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
    }
    return trained
