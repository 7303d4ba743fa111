"""Mean PCKh against iteration for the unprojected Houdini and MSE attacks on the toy pose model.

    python scripts/pose_attack_curve.py --out pose_curve.csv
"""

import argparse
import csv
import math

import numpy as np

from _toy import trained_victim
from houdini.attacks import AttackSpec, run_attack


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--examples", type=int, default=50)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--step", type=float, default=0.1)
    ap.add_argument("--out", default="pose_curve.csv")
    args = ap.parse_args()

    model, val = trained_victim("keypoints", val_count=args.examples)
    curves = {}
    for sur in ("houdini", "mse_heatmap"):
        spec = AttackSpec(surrogate=sur, norm=2, epsilon=math.inf, step=args.step, max_iter=args.iters,
                          project=False, clamp=(0, 1))
        pck = np.ones((len(val), args.iters + 1))
        for i, (x, y) in enumerate(val):
            res = run_attack(model, x, y, spec)
            pck[i, 0] = 1 - res.clean_task_loss
            best = pck[i, 0]
            for t in res.trace:
                best = min(best, 1 - t.best_task_loss)
                pck[i, t.iteration] = best
            pck[i, len(res.trace) + 1:] = best
        curves[sur] = pck.mean(axis=0)
        print(f"{sur:12s} PCKh@0 {curves[sur][0]:.3f}  @50 {curves[sur][50]:.3f}  @lim {curves[sur][-1]:.3f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", *curves])
        for k in range(args.iters + 1):
            w.writerow([k, *(f"{c[k]:.4f}" for c in curves.values())])
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
