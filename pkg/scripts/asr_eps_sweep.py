"""Single-step WER/CER sweep over epsilon for the CTC and Houdini surrogates on the toy recognizer."""

import argparse
import math

from _toy import trained_victim
from houdini.attacks import AttackSpec, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3])
    ap.add_argument("--norm", choices=["inf", "2"], default="inf")
    args = ap.parse_args()

    model, val = trained_victim("sequence")
    norm = math.inf if args.norm == "inf" else 2.0
    specs = [AttackSpec(surrogate=s, norm=norm, epsilon=e) for s in ("ctc", "houdini") for e in args.eps]
    print(f"{'surrogate':10s} {'eps':>6s} {'WER':>6s} {'CER':>6s} {'perc':>7s}")
    for s in run_campaign(model, val, specs).summary:
        print(f"{s['surrogate']:10s} {s['epsilon']:6.3f} {100 * s['adv_wer']:6.1f} {100 * s['adv_cer']:6.1f} "
              f"{s['perceptibility_lim']:7.4f}")


if __name__ == "__main__":
    main()
