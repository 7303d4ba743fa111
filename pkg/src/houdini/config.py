from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .attacks import AttackError, AttackSpec
from .data import FAMILIES, make_params
from .models import CONFIGS
from .serialization import read_text


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    params: dict = field(default_factory=dict)
    train_count: int = 128
    val_count: int = 50
    train_seed: int = 1
    val_seed: int = 2


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.1
    batch_size: int | None = 16
    seed: int = 0


@dataclass
class RunConfig:
    task: str
    seed: int = 0
    output_dir: Path = Path("runs/default")
    model: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: list[AttackSpec] = field(default_factory=list)
    workers: int = 1

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    @property
    def checkpoint(self) -> Path:
        return self.output_dir / "model.ckpt"

    def model_config(self) -> dict:
        """Model hyperparameters with input dims filled in from the dataset params."""
        p = make_params(self.task, self.data.params)
        cfg = dict(self.model)
        if self.task == "sequence":
            cfg.setdefault("features", p.features)
            cfg.setdefault("alphabet", p.alphabet)
        elif self.task == "keypoints":
            for k in ("channels", "height", "width", "keypoints"):
                cfg.setdefault(k, getattr(p, k))
        else:
            for k in ("channels", "height", "width", "classes"):
                cfg.setdefault(k, getattr(p, k))
        return cfg


def _section(cls, raw, name):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be a mapping")
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return cls(**raw)


def parse_config(raw: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    task = raw.get("task")
    if task not in FAMILIES:
        raise ConfigError(f"task must be one of {FAMILIES}, got {task!r}")
    if "seed" not in raw:
        raise ConfigError("config needs an explicit seed")
    out = Path(raw.get("output_dir", f"runs/{task}"))
    if base_dir is not None and not out.is_absolute():
        out = (base_dir / out).resolve()
    data = _section(DataConfig, raw.get("data"), "data")
    make_params(task, data.params)
    train = _section(TrainConfig, raw.get("train"), "train")
    specs = []
    for i, a in enumerate(raw.get("attacks") or []):
        try:
            specs.append(AttackSpec.from_dict(a))
        except (AttackError, TypeError, ValueError) as err:
            raise ConfigError(f"attacks[{i}]: {err}") from None
    cfg = RunConfig(task, int(raw["seed"]), out, dict(raw.get("model") or {}), data, train, specs,
                    int(raw.get("workers", 1)))
    try:
        CONFIGS[task](**cfg.model_config())
    except TypeError as err:
        raise ConfigError(f"model: {err}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(read_text(path), path.parent)
