"""Record the regression-locked forward outputs in tests/golden/.

Run once after a deliberate model change; the test suite compares against
these files bit-for-bit (to 1e-12).
"""

from pathlib import Path

import numpy as np

from houdini import tensor as T
from houdini.models import build_model

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def golden_input(model, seed=0, frames=12):
    shape = model.input_shape()
    if model.family == "sequence":
        shape = (frames,) + shape  # per-frame feature vectors
    return np.random.default_rng(seed).uniform(0.0, 1.0, shape)


def golden_lattice(seed=0, frames=9, symbols=4):
    logits = np.random.default_rng(seed).normal(0.0, 2.0, (frames, symbols))
    return T.log_softmax(logits, axis=-1).data


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for family in ("sequence", "keypoints", "segmentation"):
        model = build_model(family, seed=0)
        out = model.forward(golden_input(model)).data
        T.save_tensor(GOLDEN / f"{family}_forward.hft", out)
        print(f"{family}: output {out.shape}")
    model = build_model("sequence", seed=0)
    T.save_tensor(GOLDEN / "lattice.hft", golden_lattice())
    text = str(model.decode(golden_lattice()))
    (GOLDEN / "lattice_decode.txt").write_text(text + "\n")
    print(f"lattice decode: {text!r}")


if __name__ == "__main__":
    main()
