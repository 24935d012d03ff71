from pathlib import Path

import numpy as np
import pytest

from disc import cli, io
from disc.config import PipelineConfig, load_config, parse_config
from disc.errors import ConfigError

DESK_CFG = str(Path(__file__).resolve().parents[1] / "configs" / "desk.cfg")


def test_shipped_config_equals_defaults():
    assert load_config(DESK_CFG) == PipelineConfig()


def test_config_round_trip_and_overrides():
    cfg = PipelineConfig()
    assert parse_config(cfg.to_text()) == cfg
    cfg2 = parse_config("[run]\nseed = 5\n[decoder]\nlayers = 2\n")
    assert cfg2.run.seed == 5 and cfg2.decoder.layers == 2 and cfg2.queries == cfg.queries
    assert cfg2.with_overrides(seed=9, mode="train").run == type(cfg.run)(9, "train")


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[model]\nwidth = 3\n",
    "[model]\nchannels = ten\n",
    "[model]\nchannels = 10\n",
    "[queries]\nblock = 3\n",
    "[queries]\npatch = 3\n",
    "[queries]\nn_ins = 1000\n",
    "[decoder]\nn_sel = 9\n",
    "[depth]\nd_min = 0\n",
    "[depth]\nstride = 8\n",
    "[volume]\npreset = huge\n",
    "[run]\nmode = fly\n",
    "not a config",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_gen_run_eval(tmp_path):
    scene, pred, dump = tmp_path / "s.sscv1", tmp_path / "p.sscv1", tmp_path / "dump"
    assert cli.main(["gen", "--seed", "2", "--config", DESK_CFG, "--out", str(scene)]) == 0
    assert cli.main(["run", "--config", DESK_CFG, "--scene", str(scene), "--out", str(pred),
                     "--dump-intermediates", str(dump)]) == 0
    labels, k = io.load_labels(pred)
    assert labels.shape == (64, 64, 16) and k == 6
    assert io.load_tensor(dump / "logits.tens1").shape == (6, 64, 64, 16)
    assert "miou=" in (tmp_path / "p.sscv1.txt").read_text()
    report = tmp_path / "eval.txt"
    assert cli.main(["--mode", "train", "eval", "--scenes", "2", "--report", str(report)]) == 0
    text = report.read_text()
    assert "insm=" in text and "loss.total=" in text


def test_run_by_seed_matches_generated_scene(tmp_path):
    scene = tmp_path / "s.sscv1"
    cli.main(["gen", "--seed", "4", "--out", str(scene)])
    cli.main(["run", "--scene", str(scene), "--out", str(tmp_path / "a.sscv1")])
    cli.main(["run", "--scene", "4", "--out", str(tmp_path / "b.sscv1")])
    assert (tmp_path / "a.sscv1").read_bytes() == (tmp_path / "b.sscv1").read_bytes()


def test_seed_flag_position():
    a = cli.build_parser().parse_args(["--seed", "3", "gen", "--out", "x"])
    b = cli.build_parser().parse_args(["gen", "--out", "x", "--seed", "3"])
    assert a.seed == b.seed == 3


def test_exit_code_for_config_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[queries]\npatch = 3\n")
    assert cli.main(["gen", "--config", str(bad), "--out", str(tmp_path / "s.sscv1")]) == 2
    assert cli.main(["gen", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "s")]) == 2


def test_exit_code_for_nan(tmp_path, monkeypatch):
    real = cli.weights_for

    def poisoned(cfg):
        w = real(cfg)
        w.head.bias[:] = np.nan
        return w

    monkeypatch.setattr(cli, "weights_for", poisoned)
    assert cli.main(["run", "--scene", "0", "--out", str(tmp_path / "p.sscv1")]) == 3


def test_selftest_subset(capsys):
    assert cli.main(["selftest", "--only", "1", "8"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2
