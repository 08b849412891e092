import numpy as np
import pytest
import soundfile as sf

from src.audio.signal import MultichannelSignal
from src.audio.wav_io import load_wav, save_wav
from src.exceptions import AudioDecodeError, RateMismatchError, SignalValidationError
from src.schemas import ChannelLayout


def test_float32_round_trip_is_bit_exact(tmp_path, rng):
    layout = ChannelLayout(zones=6, mics_per_zone=4)
    sig = MultichannelSignal(rng.uniform(-1, 1, (24, 16000)).astype(np.float32), 16000, "raw_mics", layout)
    path = str(tmp_path / "mix.wav")
    save_wav(sig, path)
    back = load_wav(path, layout="raw_mics", channel_layout=layout)
    assert back.samples.shape == (24, 16000)
    assert back.sample_rate == 16000
    np.testing.assert_array_equal(back.samples, sig.samples)


def test_pcm16_round_trip_within_quantisation(tmp_path, rng):
    sig = MultichannelSignal(rng.uniform(-0.9, 0.9, 4000).astype(np.float32))
    path = str(tmp_path / "mono.wav")
    save_wav(sig, path, format="pcm16")
    back = load_wav(path)
    assert np.max(np.abs(back.samples - sig.samples)) <= 2.0 ** -15


def test_zero_length_signal_writes_valid_file(tmp_path):
    path = str(tmp_path / "empty.wav")
    save_wav(MultichannelSignal(np.zeros((1, 0))), path)
    assert load_wav(path).length == 0


def test_per_zone_output_keeps_channel_count(tmp_path):
    path = str(tmp_path / "zones.wav")
    save_wav(MultichannelSignal(np.zeros((6, 100)), 16000, "per_zone"), path)
    assert sf.info(path).channels == 6


def test_rate_mismatch_is_rejected(tmp_path):
    path = str(tmp_path / "8k.wav")
    sf.write(path, np.zeros(800, dtype=np.float32), 8000, subtype="FLOAT")
    with pytest.raises(RateMismatchError) as info:
        load_wav(path)
    assert info.value.expected == 16000
    assert info.value.actual == 8000


def test_unsupported_codec_is_rejected(tmp_path):
    path = str(tmp_path / "pcm24.wav")
    sf.write(path, np.zeros(100, dtype=np.float32), 16000, subtype="PCM_24")
    with pytest.raises(AudioDecodeError, match="unsupported codec"):
        load_wav(path)


def test_non_finite_samples_are_not_written(tmp_path):
    sig = MultichannelSignal(np.array([0.0, np.nan, 0.0]))
    with pytest.raises(SignalValidationError):
        save_wav(sig, str(tmp_path / "nan.wav"))


def test_missing_file_raises_os_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(str(tmp_path / "nope.wav"))
