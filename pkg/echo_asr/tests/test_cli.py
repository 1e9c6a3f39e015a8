import json

import pytest
from click.testing import CliRunner

from echo_asr import training
from echo_asr.cli import cli
from echo_asr.persistence import load_model

TINY = ["--vocab", "3", "--feature-dim", "3", "--enc-dim", "16", "--dec-dim", "16", "--joint-dim", "8",
        "--layers", "1", "--train-size", "6", "--batch-size", "2"]
EVAL_SPLITS = ["--train-size", "6", "--test-size", "3", "--longform-k", "2", "--longform-examples", "2"]


@pytest.fixture
def runner():
    return CliRunner()


def _train(runner, out, preset="rnnt-d", *extra):
    res = runner.invoke(cli, ["train", "--config", preset, "--steps", "3", "--out", str(out), *TINY, *extra])
    assert res.exit_code == 0, res.output
    return json.loads(res.stdout)


def _error(res):
    return json.loads(res.stdout.strip().splitlines()[-1])["error"]


def test_gen_data_writes_splits(runner, tmp_path):
    res = runner.invoke(cli, ["gen-data", "--seed", "4", "--vocab", "3", "--feature-dim", "2",
                              "--train-size", "5", "--test-size", "3", "--longform-k", "2",
                              "--longform-examples", "4", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    out = json.loads(res.stdout)
    assert out["counts"] == {"train": 5, "test": 3, "longform": 4}
    assert len((tmp_path / "longform.jsonl").read_text().splitlines()) == 4
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["command"] == "gen-data" and cfg["seed"] == 4


def test_train_is_deterministic(runner, tmp_path):
    a = _train(runner, tmp_path / "a")
    b = _train(runner, tmp_path / "b")
    assert a["steps"] == 3 and a["final_loss"] == b["final_loss"]
    assert (tmp_path / "a" / "model.esrm").read_bytes() == (tmp_path / "b" / "model.esrm").read_bytes()
    assert len((tmp_path / "a" / "train_log.jsonl").read_text().splitlines()) == 3
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["preset"] == "rnnt-d" and cfg["steps"] == 3 and cfg["model"]["vocab_size"] == 3


def test_train_on_exported_dataset(runner, tmp_path):
    res = runner.invoke(cli, ["gen-data", "--vocab", "3", "--feature-dim", "3", "--train-size", "4",
                              "--test-size", "2", "--longform-k", "1", "--longform-examples", "1",
                              "--out", str(tmp_path / "data")])
    assert res.exit_code == 0, res.output
    out = _train(runner, tmp_path / "run", "baseline", "--data", str(tmp_path / "data" / "train.jsonl"))
    assert out["steps"] == 3


def test_inspect_reports_tags_and_totals(runner, tmp_path):
    _train(runner, tmp_path)
    path = tmp_path / "model.esrm"
    res = runner.invoke(cli, ["inspect", str(path), "--json"])
    assert res.exit_code == 0, res.output
    summary = json.loads(res.stdout)
    tags = {t["name"]: t["tag"] for t in summary["tensors"]}
    assert tags["decoder.0.w_res"] == "frozen" and tags["decoder.0.rho"] == "trainable"
    model = load_model(path)
    assert summary["totals"]["trainable"] == sum(p.size for p in model.trainable_parameters())
    assert summary["file"]["total"] == summary["file"]["actual"] == path.stat().st_size
    assert summary["reservoirs"][0]["spectral_radius"] == pytest.approx(1.0, abs=1e-6)

    plain = runner.invoke(cli, ["inspect", str(path)])
    assert plain.exit_code == 0 and "trainable params" in plain.stdout


def test_eval_renders_tables(runner, tmp_path):
    _train(runner, tmp_path / "d")
    _train(runner, tmp_path / "p", "progressive-1", "--layers", "2")
    res = runner.invoke(cli, ["eval", str(tmp_path / "d" / "model.esrm"), str(tmp_path / "p" / "model.esrm"),
                              *EVAL_SPLITS, "--out", str(tmp_path / "eval")])
    assert res.exit_code == 0, res.output
    assert "Dec dim" in res.stdout and "Num. ESN layers" in res.stdout
    report = json.loads((tmp_path / "eval" / "eval_report.json").read_text())
    assert [m["name"] for m in report["models"]] == ["rnnt-d", "progressive-1"]
    assert set(report["models"][0]["wer"]) == {"test", "longform"}
    assert report["models"][1]["esn_encoder_layers"] == 1


def test_bench_reports_both_configs(runner, tmp_path):
    res = runner.invoke(cli, ["bench", "--steps", "2", "--out", str(tmp_path), *TINY])
    assert res.exit_code == 0, res.output
    out = json.loads(res.stdout)
    assert set(out["configs"]) == {"rnnt-d", "baseline"}
    d, base = out["configs"]["rnnt-d"], out["configs"]["baseline"]
    assert d["gradient_tensors"] == base["gradient_tensors"] - 3 + 2
    assert d["trainable_scalars"] < base["trainable_scalars"]
    assert out["ratio"] > 0
    assert (tmp_path / "bench_report.json").exists()


# =============================================================================
# Exit codes
# =============================================================================

def test_unknown_preset_is_config_error(runner, tmp_runs):
    res = runner.invoke(cli, ["train", "--config", "transformer", "--steps", "1", *TINY])
    assert res.exit_code == 2
    err = _error(res)
    assert err["code"] == "INVALID_CONFIG"
    assert err["details"]["usage"].startswith("Usage:") and "train" in err["details"]["usage"]


def test_unwritable_out_is_io_error(runner, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = runner.invoke(cli, ["train", "--steps", "1", "--out", str(blocker / "sub"), *TINY])
    assert res.exit_code == 4
    assert _error(res)["code"] == "IO_ERROR"

    _train(runner, tmp_path / "d")
    res = runner.invoke(cli, ["eval", str(tmp_path / "d" / "model.esrm"), *EVAL_SPLITS,
                              "--out", str(blocker / "eval")])
    assert res.exit_code == 4
    assert _error(res)["code"] == "IO_ERROR"


def test_missing_model_file_is_io_error(runner, tmp_path):
    res = runner.invoke(cli, ["inspect", str(tmp_path / "absent.esrm")])
    assert res.exit_code == 4


def test_corrupt_model_file(runner, tmp_path):
    _train(runner, tmp_path)
    path = tmp_path / "model.esrm"
    data = bytearray(path.read_bytes())
    data[20] ^= 0xFF
    path.write_bytes(bytes(data))
    res = runner.invoke(cli, ["eval", str(path), *EVAL_SPLITS, "--out", str(tmp_path / "eval")])
    assert res.exit_code == 5


def test_divergence_exit_code(runner, tmp_path, monkeypatch):
    real = training.transducer_loss

    def nan_loss(lattice, labels):
        _, grad = real(lattice, labels)
        return float("nan"), grad

    monkeypatch.setattr(training, "transducer_loss", nan_loss)
    res = runner.invoke(cli, ["train", "--steps", "2", "--out", str(tmp_path), *TINY])
    assert res.exit_code == 3
    assert _error(res)["code"] == "DIVERGENCE"


def test_out_of_range_option_is_config_error(runner, tmp_path):
    res = runner.invoke(cli, ["gen-data", "--vocab", "1", "--out", str(tmp_path)])
    assert res.exit_code == 2
    assert _error(res)["code"] == "INVALID_CONFIG"
