"""Command-line entry point: gen-data, train, attack, gradcheck, report.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .attacks import AttackError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, generate_dataset
from .metrics import MetricError
from .models import ModelError, build_model, train_toy
from .serialization import (FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset,
                            write_text)

log = logging.getLogger("houdini")

GRADCHECK_TOL = 1e-4
VALIDATION_ERRORS = (ConfigError, DataError, AttackError, ModelError, MetricError, FormatError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _datasets(cfg: RunConfig, regenerate: bool = False):
    train_dir, val_dir = cfg.data_dir / "train", cfg.data_dir / "val"
    if regenerate or not (train_dir / "targets.yaml").exists() or not (val_dir / "targets.yaml").exists():
        params = dict(cfg.data.params)
        train = generate_dataset(cfg.task, {**params, "count": cfg.data.train_count}, cfg.data.train_seed)
        val = generate_dataset(cfg.task, {**params, "count": cfg.data.val_count}, cfg.data.val_seed)
        save_dataset(train, train_dir)
        save_dataset(val, val_dir)
        return train, val
    return load_dataset(train_dir), load_dataset(val_dir)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    train, val = _datasets(cfg, regenerate=True)
    print(f"wrote {len(train)} train / {len(val)} val {cfg.task} examples to {cfg.data_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train, val = _datasets(cfg)
    model = build_model(cfg.task, cfg.model_config(), cfg.seed)
    t = cfg.train
    trained = train_toy(model, train, t.epochs, t.lr, t.seed, t.batch_size)
    val_metric = sum(trained.metric(trained.predict(x, y), y) for x, y in val) / max(len(val), 1)
    trained.history["val_metric"] = float(val_metric)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(trained, cfg.checkpoint)
    write_text(cfg.output_dir / "train.yaml", {"task": cfg.task, "epochs": t.epochs, "lr": t.lr,
                                               "loss": trained.history["loss"],
                                               "clean_train_metric": trained.history["clean_metric"],
                                               "clean_val_metric": val_metric})
    print(f"trained {cfg.task} model: final loss {trained.history['loss'][-1]:.6f}, "
          f"train metric {trained.history['clean_metric']:.4f}, val metric {val_metric:.4f}")
    return 0


def cmd_attack(args) -> int:
    from .attacks import run_campaign
    from .report import write_campaign

    cfg = load_config(args.config)
    if not cfg.attacks:
        raise ConfigError("config lists no attacks")
    if not cfg.checkpoint.exists():
        raise ConfigError(f"no checkpoint at {cfg.checkpoint}; run 'train' first")
    model = load_checkpoint(cfg.checkpoint)
    _, val = _datasets(cfg)
    if args.limit is not None:
        val.examples = val.examples[: args.limit]
    result = run_campaign(model, val, cfg.attacks, workers=cfg.workers)
    files = write_campaign(cfg.output_dir, cfg.task, cfg.attacks, result)
    failed = sum(1 for r in result.rows if r.get("error"))
    print(f"{len(result.rows)} attacks ({failed} failed); wrote {files[0]} and {len(files) - 1} trace files")
    return 0


def cmd_report(args) -> int:
    from .report import write_report

    out = Path(args.dir) if args.dir else load_config(args.config).output_dir
    if not (out / "campaign.yaml").exists():
        raise ConfigError(f"no campaign.yaml in {out}; run 'attack' first")
    sys.stdout.write(write_report(out))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.seed, args.configs)
    worst = 0.0
    for fam in sorted({r.family for r in results}):
        rs = [r for r in results if r.family == fam]
        h = max(r.houdini_error for r in rs)
        g = max(r.gap_error for r in rs)
        worst = max(worst, h, g)
        print(f"{fam:<13} configs={len(rs):<4d} houdini max rel err={h:.3e}  score-gap max rel err={g:.3e}")
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error: {worst:.3e} ({'PASS' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="houdini", description="Task-loss adversarial examples for toy structured predictors.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate train/val datasets")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train the toy model")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="run the attack campaign on the validation set")
    s.add_argument("--config", required=True)
    s.add_argument("--limit", type=int, default=None, help="attack only the first N validation examples")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("report", help="render report.txt from campaign output")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("gradcheck", help="finite-difference check of the Houdini input gradient")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--configs", type=int, default=100, help="random configurations per model family")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
