"""Untargeted and targeted segmentation attacks, Houdini against NLL, as an aligned table."""

import argparse

from _toy import trained_victim
from houdini.attacks import AttackSpec, run_campaign
from houdini.report import campaign_document, render_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--examples", type=int, default=50)
    args = ap.parse_args()

    model, val = trained_victim("segmentation", val_count=args.examples)
    specs = [AttackSpec(surrogate=s, mode=m, epsilon=args.eps, step=args.step, max_iter=args.iters, clamp=(0, 1))
             for m in ("untargeted", "targeted") for s in ("houdini", "nll")]
    print(render_report(campaign_document("segmentation", specs, run_campaign(model, val, specs))))


if __name__ == "__main__":
    main()
