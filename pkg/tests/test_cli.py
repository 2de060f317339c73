from fractions import Fraction

import pytest

from oclkit.cli import compare_runs, main, parse_axis
from oclkit.config import ExperimentConfig, load_config, parse_config
from oclkit.errors import ComparisonError, ConfigError
from oclkit.harness import read_summary

SMALL = """
length = 1500
dim = 4
classes = 3
segments = 2
batch_size = 16
buffer_size = 64
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_parse_config_roundtrip():
    cfg = parse_config(SMALL + "checkpoints = 1/2, 1\nschedule = cosine  # trailing comment\n")
    assert cfg.length == 1500 and cfg.checkpoints == (Fraction(1, 2), Fraction(1))
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,key", [
    ("bogus = 1", "bogus"),
    ("batch_size = 0", "batch_size"),
    ("lr = fast", "lr"),
    ("replay = lru", "replay"),
    ("checkpoints = 0, 1", "checkpoints"),
    ("holdout = 1.5", "holdout"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="nope.cfg"):
        load_config(tmp_path / "nope.cfg")
    assert main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_run_and_seed_override(tmp_path, cfg_file, capsys):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert "acc_O" in capsys.readouterr().out
    assert read_summary(tmp_path / "a")["seed"] == "3"
    assert "seed = 3" in (tmp_path / "a" / "config.txt").read_text()


def test_repeat_runs_are_byte_identical(tmp_path, cfg_file):
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "schedule.csv", "transfer_T1.csv", "checkpoint_T1.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_compare_self_and_mismatch(tmp_path, cfg_file):
    main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "a")])
    path = compare_runs([tmp_path / "a", tmp_path / "a"], tmp_path / "cmp")
    lines = path.read_text().splitlines()
    assert lines[0] == "step,a,a#2"
    for line in lines[1:]:
        _, x, y = line.split(",")
        assert x == y
    other = tmp_path / "other.cfg"
    other.write_text(SMALL.replace("length = 1500", "length = 1800"))
    main(["run", "--config", str(other), "--out", str(tmp_path / "b")])
    with pytest.raises(ComparisonError):
        compare_runs([tmp_path / "a", tmp_path / "b"], tmp_path / "cmp2")
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "c")]) == 1


def test_compare_aligns_different_batch_sizes(tmp_path, cfg_file):
    assert main(["ablation", "--config", str(cfg_file), "--out", str(tmp_path), "--axis", "B=8,64"]) == 0
    lines = (tmp_path / "compare.csv").read_text().splitlines()
    assert lines[0] == "examples,batch_size=8,batch_size=64"
    n = int(read_summary(tmp_path / "batch_size=8")["train_examples"])
    assert len(lines) - 1 == -(-n // 64)
    assert int(lines[-1].split(",")[0]) == n


def test_ablation_replay_capacity_axis(tmp_path, cfg_file):
    assert main(["ablation", "--config", str(cfg_file), "--out", str(tmp_path), "--axis", "R=400,4000,40000"]) == 0
    for r in ("400", "4000", "40000"):
        assert read_summary(tmp_path / f"buffer_size={r}")["status"] == "complete"
    header = (tmp_path / "compare.csv").read_text().splitlines()[0]
    assert header == "step,buffer_size=400,buffer_size=4000,buffer_size=40000"
    assert (tmp_path / "transfer_compare.csv").exists()


def test_ablation_schedule_axis(tmp_path, cfg_file):
    assert main(["ablation", "--config", str(cfg_file), "--out", str(tmp_path),
                 "--axis", "schedule=constant,cosine,polrs"]) == 0
    assert len((tmp_path / "compare.csv").read_text().splitlines()[0].split(",")) == 4


def test_ablation_rejects_stream_axis(tmp_path, cfg_file):
    assert main(["ablation", "--config", str(cfg_file), "--out", str(tmp_path), "--axis", "noise=1,2"]) == 2


def test_parse_axis():
    assert parse_axis("B=8,64") == ("batch_size", [8, 64])
    assert parse_axis("lr=0.1") == ("lr", [0.1])
    with pytest.raises(ConfigError):
        parse_axis("nonsense=1")
    with pytest.raises(ConfigError):
        parse_axis("B")


def test_gen_stream_eval_transfer_and_cells(tmp_path, cfg_file):
    assert main(["gen-stream", "--config", str(cfg_file), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "stream.txt").read_text().startswith("# oclkit-stream v1")
    main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "r")])
    assert main(["eval-transfer", "--config", str(cfg_file), "--out", str(tmp_path / "e"),
                 "--checkpoint", str(tmp_path / "r" / "checkpoint_T1.txt")]) == 0
    written = next((tmp_path / "e").glob("transfer_eval_T*.csv")).read_text()
    assert written == (tmp_path / "r" / "transfer_T1.csv").read_text()
    assert main(["build-cells", "--out", str(tmp_path / "g"), "--n-points", "2000", "--min-count", "20",
                 "--max-count", "200"]) == 0
    assert (tmp_path / "g" / "cdf.csv").read_text().splitlines()[-1].endswith(",1")


def test_plot_flag_writes_pngs(tmp_path, cfg_file):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path), "--plot"]) == 0
    assert (tmp_path / "metrics.png").stat().st_size > 0
    assert (tmp_path / "transfer_T1.png").exists()


def test_default_config_is_valid():
    assert ExperimentConfig().validate().batch_size == 16
