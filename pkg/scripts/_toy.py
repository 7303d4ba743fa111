"""Shared setup for the experiment scripts: fixed-seed data and a trained victim."""

from houdini.data import generate_dataset
from houdini.models import build_model, train_toy

RECIPES = {
    "keypoints": {"lr": 0.5, "epochs": 200, "dims": ("channels", "height", "width", "keypoints")},
    "segmentation": {"lr": 0.5, "epochs": 100, "dims": ("channels", "height", "width", "classes")},
    "sequence": {"lr": 0.05, "epochs": 100, "dims": ("features", "alphabet")},
}


def trained_victim(family, train_count=128, val_count=50, seed=0):
    r = RECIPES[family]
    train = generate_dataset(family, {"count": train_count}, seed=1)
    val = generate_dataset(family, {"count": val_count}, seed=2)
    model = build_model(family, {k: getattr(train.params, k) for k in r["dims"]}, seed=seed)
    return train_toy(model, train, r["epochs"], r["lr"], seed=seed, batch_size=16), val
