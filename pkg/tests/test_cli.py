import json
import os

import numpy as np
import pytest

from cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main
from src.audio.signal import MultichannelSignal
from src.audio.wav_io import load_wav, save_wav
from src.nn.weights import load_weights
from src.schemas import ChannelLayout, ModelConfig


def _steps(run_dir):
    with open(os.path.join(run_dir, "run_log.json"), encoding="utf-8") as f:
        return json.load(f)["steps"]


@pytest.fixture
def mix_wav(tmp_path, rng):
    layout = ChannelLayout()
    samples = 0.05 * rng.standard_normal((layout.raw_channels, 4000))
    path = str(tmp_path / "mix.wav")
    save_wav(MultichannelSignal(samples.astype(np.float32), 16000, "raw_mics", layout), path)
    return path


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dataset": {"duration": 0.5, "max_order": 1, "tail_len": 0.1, "noise_sources": 2,
                                            "noise_max_order": 0, "occupancy": [1, 2]}}), encoding="utf-8")
    return str(path)


def test_init_weights_writes_a_loadable_container(tmp_path):
    out = str(tmp_path / "w" / "s.dsepw")
    assert main(["init-weights", "--out", out, "--seed", "3"]) == EXIT_OK
    store = load_weights(out, ModelConfig())
    assert store.fingerprint == ModelConfig().fingerprint()
    last = _steps(str(tmp_path / "w"))[-1]
    assert (last["step"], last["status"]) == ("init-weights", "success")


def test_separate_bf_only_writes_one_wav_per_zone(tmp_path, mix_wav):
    out = str(tmp_path / "out")
    assert main(["separate", "--in", mix_wav, "--out", out, "--mode", "bf-only"]) == EXIT_OK
    for z in range(6):
        signal = load_wav(os.path.join(out, f"zone{z + 1}.wav"))
        assert signal.channels == 1 and signal.length == 4000
    assert sorted(os.listdir(out)) == [f"zone{z + 1}.wav" for z in range(6)]
    assert _steps(str(tmp_path))[-1]["detail"]["stages"] == "bf"


def test_separate_without_weights_is_an_io_failure(tmp_path, mix_wav):
    out = str(tmp_path / "out")
    assert main(["separate", "--in", mix_wav, "--out", out]) == EXIT_IO
    assert not os.path.exists(os.path.join(out, "run_log.json"))
    last = _steps(str(tmp_path))[-1]
    assert last["status"] == "error"
    assert last["detail"]["exit_code"] == EXIT_IO


def test_missing_input_file_exits_with_io_code(tmp_path):
    assert main(["separate", "--in", str(tmp_path / "none.wav"), "--out", str(tmp_path / "o"),
                 "--mode", "bf-only"]) == EXIT_IO


@pytest.mark.parametrize("argv", [
    ["separate", "--out", "x"],
    ["init-weights", "--out", "w.dsepw", "--causal", "perhaps"],
    ["bench", "--out", "r.json", "--mode", "turbo"],
    ["frobnicate"],
])
def test_bad_arguments_exit_with_invalid_code(argv):
    assert main(argv) == EXIT_INVALID


def test_invalid_config_file_exits_with_invalid_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pipeline": {"mode": "streaming", "model": {"causal": False}}}), encoding="utf-8")
    assert main(["init-weights", "--config", str(cfg), "--out", str(tmp_path / "w.dsepw")]) == EXIT_INVALID


def test_spectrogram_rejects_unknown_extension(tmp_path, mix_wav):
    out = str(tmp_path / "img" / "spec.jpg")
    assert main(["spectrogram", "--in", mix_wav, "--out", out]) == EXIT_INVALID
    assert _steps(str(tmp_path / "img"))[-1]["detail"]["type"] == "ContractError"


def test_spectrogram_writes_one_image_per_channel(tmp_path):
    wav = str(tmp_path / "zone1.wav")
    save_wav(MultichannelSignal(np.sin(np.arange(3200) / 5.0).astype(np.float32)), wav)
    assert main(["spectrogram", "--in", wav, "--out", str(tmp_path / "zone1.png")]) == EXIT_OK
    assert os.path.isfile(tmp_path / "zone1.png")


def test_simulate_then_eval(tmp_path, small_config):
    data = str(tmp_path / "data")
    assert main(["simulate", "--config", small_config, "--count", "2", "--seed", "4", "--out", data]) == EXIT_OK
    manifest = os.path.join(data, "manifest.jsonl")
    with open(manifest, encoding="utf-8") as f:
        assert len(f.read().splitlines()) == 2

    report_path = str(tmp_path / "reports" / "bf.json")
    csv_path = str(tmp_path / "reports" / "bf.csv")
    assert main(["eval", "--in", manifest, "--out", report_path, "--mode", "bf-only", "--csv", csv_path]) == EXIT_OK
    with open(report_path, encoding="utf-8") as f:
        report = json.load(f)
    assert report["system"] == "bf"
    assert report["aggregate"]["count"] == 2
    assert os.path.isfile(csv_path)


def test_eval_missing_manifest_is_an_io_failure(tmp_path):
    assert main(["eval", "--in", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "r.json")]) == EXIT_IO


@pytest.mark.slow
def test_bench_bf_only(tmp_path):
    out = str(tmp_path / "rtf.json")
    assert main(["bench", "--out", out, "--mode", "bf-only", "--duration", "5", "--repeats", "1"]) == EXIT_OK
    with open(out, encoding="utf-8") as f:
        assert json.load(f)["repeats"] == 1
