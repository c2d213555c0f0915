import socket
import subprocess
import sys
import time

import pytest

from vsr_fdx.cli import main
from vsr_fdx.features import read_dataset
from vsr_fdx.mlp import init_model, load_model, save_model
from vsr_fdx.sim import read_trace

CAMPAIGN = """
traces_per_class = 1
settle = 0.05
span = 0.02
train_fraction = 0.2
val_fraction = 0.2
regimes = transient, synthetic
max_epochs = 3
hidden = 8, 8
"""


def run(*argv):
    return main([str(a) for a in argv])


def test_simulate_writes_trace(tmp_path, capsys):
    assert run("simulate", "--duration", "0.05", "--fault", "SaP,0.02", "--seed", "5",
               "--out", tmp_path) == 0
    tr = read_trace(tmp_path / "trace.csv")
    assert len(tr) == 1280 and tr.seed == 5 and tr.config_hash
    assert not tr.gate_bits()[tr.t >= 0.02, 0].any()
    assert "1280 records" in capsys.readouterr().out


def test_simulate_from_config(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("duration = 0.02\nseed = 3\nfault = ScN, 0.01\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
    assert read_trace(tmp_path / "trace.csv").seed == 3


def test_config_errors_exit_1(tmp_path):
    assert run("simulate", "--fault", "SzP,0.1", "--out", tmp_path) == 1
    assert run("simulate", "--config", tmp_path / "nope.cfg", "--out", tmp_path) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("wobble = 3\n")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 1
    assert run("dataset", "--config", bad, "--out", tmp_path) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """dataset -> train -> frames, shared by the CLI tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "campaign.cfg"
    cfg.write_text(CAMPAIGN)
    assert run("dataset", "--config", cfg, "--seed", 2, "--out", root / "data") == 0
    assert run("train", "--config", cfg, "--data", root / "data", "--regime", "synthetic",
               "--seed", 2, "--out", root / "model") == 0
    assert run("serve", "--fault", "SaP,0.05", "--duration", "0.2", "--seed", 1,
               "--frames-out", root / "frames.bin") == 0
    return root


def test_dataset_files(pipeline):
    for split in ("train", "val", "test"):
        for regime in ("transient", "synthetic"):
            ds = read_dataset(pipeline / "data" / f"{split}_{regime}.csv")
            assert set(ds.y) == set(range(8))
            assert ds.meta["seed"] == "2" and ds.meta["split"] == split


def test_train_and_eval(pipeline, capsys):
    model = load_model(pipeline / "model" / "model.txt")
    assert model.regime == "synthetic" and model.hidden_sizes == (8, 8)
    assert model.meta["seed"] == 2 and "config" in model.meta
    history = (pipeline / "model" / "history.csv").read_text().splitlines()
    assert "seed=2" in history[0] and len(history) == 2 + 3
    out = pipeline / "eval"
    assert run("eval", "--model", pipeline / "model" / "model.txt", "--data",
               pipeline / "data", "--out", out) == 0
    assert "macro_accuracy=" in capsys.readouterr().out
    assert (out / "confusion.csv").read_text().startswith("# seed=2")


def test_eval_regime_mismatch_and_bad_model(pipeline, tmp_path):
    model = pipeline / "model" / "model.txt"
    assert run("eval", "--model", model, "--data", pipeline / "data" / "test_transient.csv",
               "--out", tmp_path) == 1
    broken = tmp_path / "broken.txt"
    broken.write_text(model.read_text()[:200])
    assert run("eval", "--model", broken, "--data", pipeline / "data", "--out", tmp_path) == 3


def test_diagnose_file(pipeline, tmp_path, capsys):
    assert run("diagnose", "--model", pipeline / "model" / "model.txt", "--frames",
               pipeline / "frames.bin", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "final fault set:" in out
    log = (tmp_path / "diagnosis_log.csv").read_text().splitlines()
    assert log[0].startswith("# seed=2") and log[1].startswith("window_index,")
    assert len(log) == 2 + 10


def test_diagnose_rejects_timeseries_model(tmp_path, pipeline):
    path = tmp_path / "ts.txt"
    save_model(init_model(60, (4,), regime="timeseries:20"), path)
    assert run("diagnose", "--model", path, "--frames", pipeline / "frames.bin",
               "--out", tmp_path) == 1


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_socket_replay_matches_file_log(pipeline, tmp_path):
    port = _free_port()
    server = subprocess.Popen(
        [sys.executable, "-m", "vsr_fdx", "serve", "--fault", "SaP,0.05", "--duration", "0.2",
         "--seed", "1", "--pacing", "max", "--port", str(port)],
        stdout=subprocess.PIPE, text=True)
    try:
        time.sleep(0.2)
        assert run("diagnose", "--model", pipeline / "model" / "model.txt", "--connect",
                   f"127.0.0.1:{port}", "--quiet", "--out", tmp_path / "sock") == 0
        assert server.wait(30) == 0
    finally:
        server.kill()
    assert run("diagnose", "--model", pipeline / "model" / "model.txt", "--frames",
               pipeline / "frames.bin", "--quiet", "--out", tmp_path / "file") == 0
    a = (tmp_path / "sock" / "diagnosis_log.csv").read_bytes()
    b = (tmp_path / "file" / "diagnosis_log.csv").read_bytes()
    assert a == b


def test_connection_error_exit_3(pipeline, tmp_path):
    assert run("diagnose", "--model", pipeline / "model" / "model.txt", "--connect",
               f"127.0.0.1:{_free_port()}", "--connect-timeout", "0.3", "--out", tmp_path) == 3


def test_plot(pipeline, tmp_path):
    assert run("simulate", "--duration", "0.04", "--fault", "SbN,0.02", "--out", tmp_path) == 0
    scen = tmp_path / "s.cfg"
    scen.write_text("fault = SbN, 0.02\n")
    assert run("diagnose", "--model", pipeline / "model" / "model.txt", "--frames",
               pipeline / "frames.bin", "--quiet", "--out", tmp_path) == 0
    assert run("plot", "--trace", tmp_path / "trace.csv", "--config", scen, "--log",
               tmp_path / "diagnosis_log.csv", "--out", tmp_path / "fig") == 0
    for name in ("trace.svg", "diagnosis.svg"):
        assert (tmp_path / "fig" / name).read_text().lstrip().startswith("<?xml")
    assert run("plot", "--out", tmp_path) == 1


def test_serve_start_skips_transient(tmp_path):
    from vsr_fdx.stream import read_frames

    assert run("serve", "--duration", "0.2", "--start", "0.1", "--frames-out",
               tmp_path / "f.bin") == 0
    assert len(read_frames(tmp_path / "f.bin")) == 5
