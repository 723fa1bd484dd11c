import hashlib
from pathlib import Path

import pytest

import cachecast
from cachecast.cli import build_parser, load_config_file, main
from cachecast.errors import ConfigError

SMALL = ["--blocks", "12", "--events", "3000", "--windows", "40", "--period", "8", "--phase-blocks", "4"]

TINY_REPORT = """
[trace]
blocks = 12
events = 3000
period = 8
phase_blocks = 4
seed = 3

[features]
windows = 40

[models]
archs = ["lru", "lfu", "rnn", "gru", "lstm", "cnn-lstm"]
hidden = 4

[train]
epochs = 2
batch_size = 4

[experiment]
seeds = [0]
capacities = [3]
"""


@pytest.fixture
def trace(tmp_path):
    path = tmp_path / "t.csv"
    assert main(["gen", *SMALL, "--seed", "7", "-o", str(path)]) == 0
    return path


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_gen_writes_requested_rows_and_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen", "--blocks", "64", "--events", "50000", "--zipf", "1.0", "--seed", "7", "-o", str(a)]) == 0
    assert "records=50000" in capsys.readouterr().out
    assert len(a.read_text().splitlines()) == 50_001
    assert main(["gen", "--blocks", "64", "--events", "50000", "--zipf", "1.0", "--seed", "7", "-o", str(b)]) == 0
    assert digest(a) == digest(b)


def test_gen_rejects_zero_blocks(tmp_path, capsys):
    assert main(["gen", "--blocks", "0", "-o", str(tmp_path / "x.csv")]) == 2
    assert "--blocks" in capsys.readouterr().err


def test_gen_unwritable_output_is_runtime_error(tmp_path):
    assert main(["gen", *SMALL, "-o", str(tmp_path / "missing" / "x.csv")]) == 1


def test_train_writes_checkpoint_and_loss_csv(tmp_path, trace, capsys):
    ckpt = tmp_path / "m.ckpt"
    plot = tmp_path / "loss.svg"
    code = main(["train", "--arch", "cnn-lstm", "--trace", str(trace), "--windows", "40",
                 "--epochs", "3", "--hidden", "4", "-o", str(ckpt), "--plot", str(plot)])
    assert code == 0
    assert "val_mse=" in capsys.readouterr().out
    loss = ckpt.with_suffix(".loss.csv")
    assert ckpt.exists() and loss.exists() and plot.exists()
    lines = loss.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and 1 <= len(lines) - 1 <= 3


def test_train_heuristic_is_usage_error(tmp_path, trace, capsys):
    assert main(["train", "--arch", "lru", "--trace", str(trace), "-o", str(tmp_path / "m")]) == 2
    assert "heuristic models are not trainable" in capsys.readouterr().err


def test_train_unknown_arch_is_usage_error(tmp_path, trace):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--arch", "transformer", "--trace", str(trace), "-o", str(tmp_path / "m")])
    assert exc.value.code == 2


def test_simulate_lru_prints_hit_rate(tmp_path, trace, capsys):
    timeline = tmp_path / "tl.csv"
    assert main(["simulate", "--policy", "lru", "--capacity", "16", "--trace", str(trace),
                 "--timeline", str(timeline)]) == 0
    out = capsys.readouterr().out
    rate = float(out.strip().splitlines()[-1].split("=")[1])
    assert 0.0 <= rate <= 1.0
    assert timeline.read_text().splitlines()[0] == "window,policy,hit_rate"


def test_simulate_validation(trace):
    assert main(["simulate", "--policy", "predictive", "--trace", str(trace)]) == 2
    assert main(["simulate", "--capacity", "0", "--trace", str(trace)]) == 2
    assert main(["simulate", "--policy", "fifo", "--trace", str(trace)]) == 2
    assert main(["simulate", "--trace", "/nonexistent/trace.csv"]) == 1


def test_simulate_predictive_with_model(tmp_path, trace, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--arch", "gru", "--trace", str(trace), "--windows", "40", "--epochs", "2",
                 "--hidden", "3", "-o", str(ckpt)]) == 0
    out_csv = tmp_path / "sim.csv"
    assert main(["simulate", "--policy", "predictive", "--model", str(ckpt), "--capacity", "4",
                 "--trace", str(trace), "-o", str(out_csv)]) == 0
    assert out_csv.read_text().splitlines()[1].startswith("predictive,3000,")


def test_report_with_bundled_style_config(tmp_path, capsys):
    cfg = tmp_path / "desk.toml"
    cfg.write_text(TINY_REPORT)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["report", "--config", str(cfg), "--out-dir", str(out_a)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["Model", "MSE", "MAE"]
    rows = (out_a / "table1.csv").read_text().splitlines()
    assert len({r.split(",")[0] for r in rows[1:]}) == 6
    assert main(["report", "--config", str(cfg), "--out-dir", str(out_b)]) == 0
    assert digest(out_a / "table1.csv") == digest(out_b / "table1.csv")


def test_unknown_config_key_names_key_and_line(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[trace]\nblocks = 8\nbolcks = 9\n")
    assert main(["report", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "bolcks" in err and ":3:" in err


def test_unknown_section_and_bad_value(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="extras"):
        load_config_file(cfg)
    cfg.write_text("[train]\nepochs = \"many\"\n")
    with pytest.raises(ConfigError, match="train.epochs"):
        load_config_file(cfg)
    cfg.write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config_file(cfg)


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "gen.toml"
    cfg.write_text("[trace]\nevents = 100\nblocks = 8\nphase_blocks = 2\n")
    out = tmp_path / "t.csv"
    assert main(["gen", "--config", str(cfg), "--events", "250", "-o", str(out)]) == 0
    assert "records=250" in capsys.readouterr().out
    assert main(["gen", "--config", str(cfg), "-o", str(out)]) == 0
    assert "records=100" in capsys.readouterr().out


def test_every_subcommand_has_seed_and_documents_defaults():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        flags = {s for a in p._actions for s in a.option_strings}
        assert "--seed" in flags, name
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                help_text = action.help or ""
                assert "default" in help_text or action.required, (name, action.dest)


def test_bundled_desk_config_lists_six_architectures():
    path = Path(cachecast.__file__).parent / "configs" / "desk.toml"
    cfg = load_config_file(path)
    assert cfg["models"]["archs"] == ["lru", "lfu", "rnn", "gru", "lstm", "cnn-lstm"]
