import numpy as np
import pytest

from src.audio.signal import MultichannelSignal
from src.dsp.stft import ComplexSpectrogram, StreamingIstft, StreamingStft, analyze, frame_count, synthesize
from src.exceptions import ContractError, SignalValidationError
from src.schemas import StftConfig


def _signal(x: np.ndarray) -> MultichannelSignal:
    return MultichannelSignal(x.astype(np.float32), 16000, "per_zone" if x.ndim == 2 and x.shape[0] > 1 else "mono")


def test_default_config_has_257_bins():
    spec = analyze(_signal(np.zeros(16000)), StftConfig())
    assert spec.bins == 257
    assert spec.frames == frame_count(16000, StftConfig()) == 16000 // 256 + 1


def test_dc_energy_lands_in_bin_zero():
    spec = analyze(_signal(np.ones(512)), StftConfig())
    # frame 1 covers samples [0, 512) entirely
    assert int(np.argmax(np.abs(spec.data[1, :, 0]))) == 0


def test_1khz_sine_peaks_at_bin_32():
    t = np.arange(16000) / 16000
    spec = analyze(_signal(np.sin(2 * np.pi * 1000 * t)), StftConfig())
    mid = spec.frames // 2
    assert int(np.argmax(np.abs(spec.data[mid, :, 0]))) == 32


def test_frame_matches_direct_dft(rng):
    cfg = StftConfig()
    x = rng.standard_normal(2048)
    spec = analyze(_signal(x), cfg)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(512) / 512)
    # frame 3 covers samples [3·256 − 256, 3·256 + 256)
    segment = x[512:1024].astype(np.float32).astype(np.float64) * window
    n = np.arange(512)
    direct = np.array([np.sum(segment * np.exp(-2j * np.pi * k * n / 512)) for k in range(257)])
    np.testing.assert_allclose(spec.data[3, :, 0], direct, rtol=1e-4, atol=1e-4)


def test_round_trip_reconstructs_random_signal(rng):
    cfg = StftConfig()
    x = 0.5 * rng.standard_normal((3, 5000))
    out = synthesize(analyze(_signal(x), cfg))
    assert out.samples.shape == (3, 5000)
    np.testing.assert_allclose(out.samples, x.astype(np.float32), atol=1e-5)


def test_round_trip_with_small_config(rng, small_stft):
    x = rng.standard_normal(1000)
    out = synthesize(analyze(_signal(x), small_stft))
    np.testing.assert_allclose(out.samples[0], x.astype(np.float32), atol=1e-5)


def test_analysis_is_linear(rng, small_stft):
    x = rng.standard_normal(640)
    y = rng.standard_normal(640)
    a, b = 0.7, -1.3
    lhs = analyze(_signal(a * x + b * y), small_stft).data
    rhs = a * analyze(_signal(x), small_stft).data + b * analyze(_signal(y), small_stft).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_zero_spectrogram_synthesizes_silence(small_stft):
    spec = ComplexSpectrogram(np.zeros((10, small_stft.n_bins, 2), dtype=np.complex64), small_stft, 16000, 288)
    out = synthesize(spec)
    assert out.samples.shape == (2, 288)
    assert not np.any(out.samples)


def test_single_frame_is_a_windowed_segment(small_stft):
    # irfft of a unit DC bin is 1/N everywhere; one frame of WOLA leaves w·(1/N) / w²
    data = np.zeros((1, small_stft.n_bins, 1), dtype=np.complex64)
    data[0, 0, 0] = 1.0
    out = synthesize(ComplexSpectrogram(data, small_stft, 16000, small_stft.hop))
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(64) / 64)
    expected = 1.0 / (small_stft.fft_size * window[32:])
    np.testing.assert_allclose(out.samples[0], expected, rtol=1e-4)


def test_synthesize_rejects_other_config(small_stft):
    spec = analyze(_signal(np.zeros(100)), small_stft)
    with pytest.raises(SignalValidationError):
        synthesize(spec, StftConfig())


def test_spectrogram_checks_bin_count(small_stft):
    with pytest.raises(SignalValidationError):
        ComplexSpectrogram(np.zeros((4, 10, 1), dtype=np.complex64), small_stft)


def test_streaming_analysis_equals_batch(rng, small_stft):
    x = rng.standard_normal((2, 1000))
    batch = analyze(_signal(x), small_stft)
    hop = small_stft.hop
    padded = np.zeros((2, batch.frames * hop), dtype=np.float32)
    padded[:, :1000] = x
    stream = StreamingStft(small_stft, channels=2)
    frames = [stream.push_frame(padded[:, t * hop : (t + 1) * hop]) for t in range(batch.frames)]
    np.testing.assert_array_equal(np.stack(frames), batch.data)


def test_first_frame_uses_zero_history(small_stft):
    stream = StreamingStft(small_stft, channels=1)
    chunk = np.ones(small_stft.hop, dtype=np.float32)
    frame = stream.push_frame(chunk)
    expected = analyze(_signal(np.ones(small_stft.hop)), small_stft).data[0]
    np.testing.assert_array_equal(frame, expected)


def test_streaming_latency_bookkeeping():
    stream = StreamingStft(StftConfig(), channels=1)
    assert stream.latency_samples == 512
    assert stream.frame_available_after(0) == 512
    assert stream.frame_available_after(3) == 4 * 256 + 256


def test_push_frame_rejects_wrong_chunk_size(small_stft):
    stream = StreamingStft(small_stft, channels=2)
    with pytest.raises(ContractError):
        stream.push_frame(np.zeros((2, small_stft.hop + 1)))


def test_streaming_synthesis_equals_batch(rng, small_stft):
    x = rng.standard_normal((2, 777))
    spec = analyze(_signal(x), small_stft)
    istft = StreamingIstft(small_stft, channels=2)
    pieces = [istft.push_frame(spec.data[t]) for t in range(spec.frames)]
    pieces.append(istft.flush(777))
    streamed = np.concatenate(pieces, axis=1)
    assert streamed.shape == (2, 777)
    np.testing.assert_allclose(streamed, synthesize(spec).samples, atol=1e-6)
