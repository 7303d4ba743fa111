
import pytest

from houdini import cli
from houdini.config import ConfigError, load_config, parse_config

SMALL = """\
task: segmentation
seed: 0
output_dir: {out}
data:
  params: {{height: 8, width: 8, classes: 3, min_size: 2, max_size: 5}}
  train_count: 24
  val_count: 4
train: {{epochs: 15, lr: 0.5, batch_size: 8}}
attacks:
  - {{surrogate: houdini, norm: inf, epsilon: 0.05, step: 0.02, max_iter: 4}}
  - {{surrogate: nll, norm: inf, epsilon: 0.05, step: 0.02, max_iter: 4}}
  - {{surrogate: houdini, norm: inf, epsilon: 0.1, step: 0.02, max_iter: 4}}
  - {{surrogate: nll, norm: inf, epsilon: 0.1, step: 0.02, max_iter: 4}}
"""


def write_config(tmp_path, name="c.yaml", out="run"):
    p = tmp_path / name
    p.write_text(SMALL.format(out=out))
    return p


def run_pipeline(cfg):
    for cmd in ("gen-data", "train", "attack", "report"):
        assert cli.main([cmd, "--config", str(cfg)]) == 0, cmd


def test_pipeline_end_to_end_and_byte_identical(tmp_path, capsys):
    a = write_config(tmp_path, "a.yaml", "run_a")
    b = write_config(tmp_path, "b.yaml", "run_b")
    run_pipeline(a)
    run_pipeline(b)
    out = capsys.readouterr().out
    ra, rb = tmp_path / "run_a", tmp_path / "run_b"
    for name in ["report.txt", "campaign.yaml", "model.ckpt", "trace-0.csv", "trace-3.csv"]:
        assert (ra / name).read_bytes() == (rb / name).read_bytes(), name
    report = (ra / "report.txt").read_text()
    table = [ln for ln in report.splitlines() if ln.startswith("untargeted:")]
    assert len(table) == 4  # one row per (surrogate, epsilon)
    assert "mIoU@lim" in report and report in out


def test_config_paths_and_seed_are_required(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg.output_dir == (tmp_path / "run").resolve()
    assert cfg.checkpoint.name == "model.ckpt"
    with pytest.raises(ConfigError):
        parse_config({"task": "segmentation"})
    with pytest.raises(ConfigError):
        parse_config({"task": "video", "seed": 0})
    with pytest.raises(ConfigError):
        parse_config({"task": "segmentation", "seed": 0, "attacks": [{"norm": 3}]})
    with pytest.raises(ConfigError):
        parse_config({"task": "segmentation", "seed": 0, "train": {"momentum": 0.9}})


def test_unknown_subcommand_prints_usage(capsys):
    assert cli.main(["fly"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_validation_errors_exit_1(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("task: segmentation\nseed: 0\ndata:\n  params: {classes: 9}\n")
    assert cli.main(["gen-data", "--config", str(bad)]) == 1
    assert cli.main(["attack", "--config", str(write_config(tmp_path))]) == 1  # no checkpoint yet
    assert "error:" in capsys.readouterr().err


def test_runtime_failure_exits_2(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path)

    def boom(*_a, **_k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert cli.main(["gen-data", "--config", str(cfg)]) == 2
    assert "disk on fire" in capsys.readouterr().err


def test_gradcheck_subcommand(capsys):
    assert cli.main(["gradcheck", "--seed", "7", "--configs", "3"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "PASS" in out


def test_report_from_directory(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_pipeline(cfg)
    capsys.readouterr()
    assert cli.main(["report", "--dir", str(tmp_path / "run")]) == 0
    assert capsys.readouterr().out == (tmp_path / "run" / "report.txt").read_text()
    assert cli.main(["report", "--dir", str(tmp_path)]) == 1
