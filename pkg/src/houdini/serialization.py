"""Checkpoints, datasets and structured-text documents on disk.

Structured text is YAML restricted to plain mappings, lists and scalars
(``key: value`` with nested indentation), written with stable key order so
files diff cleanly and re-runs are byte-identical.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
import yaml

from . import tensor as T
from .data import SyntheticDataset, make_params
from .metrics import KeypointAnnotation, LabelMap, TokenSequence
from .models import CONFIGS, MODELS, StructuredModel

CKPT_MAGIC = b"HOUDINI-CKPT"


class FormatError(ValueError):
    pass


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into YAML-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dump_text(obj) -> str:
    return yaml.safe_dump(_plain(obj), sort_keys=False, default_flow_style=False, width=120)


def load_text(text: str):
    return yaml.safe_load(text)


def write_text(path, obj) -> None:
    Path(path).write_text(dump_text(obj))


def read_text(path):
    return load_text(Path(path).read_text())


# --- targets --------------------------------------------------------------------


def target_to_dict(y) -> dict:
    if isinstance(y, TokenSequence):
        return {"text": y.text}
    if isinstance(y, (KeypointAnnotation, LabelMap)):
        return y.to_dict()
    raise FormatError(f"cannot serialize target of type {type(y).__name__}")


def target_from_dict(family: str, d: dict, alphabet: str | None = None):
    if family == "sequence":
        return TokenSequence(d["text"], alphabet)
    if family == "keypoints":
        return KeypointAnnotation.from_dict(d)
    if family == "segmentation":
        return LabelMap.from_dict(d)
    raise FormatError(f"unknown task family {family!r}")


# --- datasets -------------------------------------------------------------------


def save_dataset(ds: SyntheticDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T.save_tensor(d / "inputs.hft", ds.inputs if len(ds) else np.zeros((0,)))
    params = {k: getattr(ds.params, k) for k in ds.params.__dataclass_fields__}
    write_text(d / "targets.yaml", {"family": ds.family, "seed": ds.seed, "params": params,
                                    "targets": [target_to_dict(y) for y in ds.targets]})


def load_dataset(directory) -> SyntheticDataset:
    d = Path(directory)
    meta = read_text(d / "targets.yaml")
    family = meta["family"]
    params = make_params(family, meta["params"])
    xs = T.load_tensor(d / "inputs.hft")
    alphabet = getattr(params, "alphabet", None)
    ys = [target_from_dict(family, t, alphabet) for t in meta["targets"] or []]
    if len(ys) and len(xs) != len(ys):
        raise FormatError(f"{d}: {len(xs)} inputs but {len(ys)} targets")
    return SyntheticDataset(family, list(zip(list(xs), ys)) if ys else [], meta["seed"], params)


# --- checkpoints ----------------------------------------------------------------


def checkpoint_bytes(model: StructuredModel) -> bytes:
    names = list(model.params)
    header = dump_text({
        "family": model.family,
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "history": {k: v for k, v in model.history.items() if k != "loss"},
    }).encode()
    body = b"".join(T.tensor_to_bytes(model.params[n]) for n in names)
    return CKPT_MAGIC + f" 1 {len(header)}\n".encode() + header + body


def model_from_bytes(data: bytes) -> StructuredModel:
    buf = io.BytesIO(data)
    first = buf.readline()
    parts = first.split()
    if len(parts) != 3 or parts[0] != CKPT_MAGIC:
        raise FormatError("not a houdini checkpoint")
    header = load_text(buf.read(int(parts[2])).decode())
    family = header["family"]
    cfg = CONFIGS[family](**header["config"])
    arrays = T.read_tensors(buf, len(header["params"]))
    params = {}
    for spec, arr in zip(header["params"], arrays):
        if list(arr.shape) != list(spec["shape"]):
            raise FormatError(f"parameter {spec['name']} has shape {arr.shape}, header says {spec['shape']}")
        params[spec["name"]] = arr
    model = MODELS[family](cfg, params)
    model.history = dict(header.get("history") or {})
    return model


def save_checkpoint(model: StructuredModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> StructuredModel:
    return model_from_bytes(Path(path).read_bytes())
