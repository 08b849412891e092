import numpy as np
import pytest

from src.audio.signal import MultichannelSignal
from src.exceptions import ContractError, DomainError
from src.sim.mixing import add_noise_at_sdr, diffuse_noise, render_mixture
from src.sim.rir import RirSet
from src.sim.scene import build_scene
from src.sim.sources import car_noise, fit_length, speech_surrogate


def _impulse_rirs(sources: int, mics: int = 24, taps: int = 10, lag: int = 0) -> RirSet:
    rirs = np.zeros((sources, mics, taps), dtype=np.float32)
    rirs[:, :, lag] = 1.0
    return RirSet(rirs)


def test_mixture_is_the_sum_of_images(rng):
    scene = build_scene(1.6, 2.4, 1.3, 0.3, [0, 3])
    speech = [MultichannelSignal(rng.standard_normal(500).astype(np.float32)) for _ in range(2)]
    mix, refs = render_mixture(scene, _impulse_rirs(2, lag=2), speech)
    assert mix.layout == "raw_mics"
    assert mix.samples.shape == (24, 509)
    expected = np.zeros(509)
    expected[2:502] = speech[0].samples[0] + speech[1].samples[0]
    np.testing.assert_allclose(mix.samples[7], expected, atol=1e-6)
    assert len(refs) == 2
    assert refs[1].samples.shape == (4, 509)
    np.testing.assert_allclose(refs[1].samples[0, 2:502], speech[1].samples[0], atol=1e-6)


def test_refs_come_from_the_talkers_own_array(rng):
    scene = build_scene(1.6, 2.4, 1.3, 0.3, [2])
    rirs = np.zeros((1, 24, 4), dtype=np.float32)
    rirs[0, :, 0] = np.arange(24)
    speech = [MultichannelSignal(np.ones(3, dtype=np.float32))]
    _, refs = render_mixture(scene, RirSet(rirs), speech)
    np.testing.assert_array_equal(refs[0].samples[:, 0], [8, 9, 10, 11])


def test_source_count_must_match_occupied_zones(rng):
    scene = build_scene(1.6, 2.4, 1.3, 0.3, [0, 1])
    speech = [MultichannelSignal(np.zeros(10, dtype=np.float32))]
    with pytest.raises(ContractError):
        render_mixture(scene, _impulse_rirs(2), speech)


def test_noise_is_added_at_the_target_sdr(rng):
    mix = MultichannelSignal(rng.standard_normal((4, 2000)).astype(np.float32), 16000, "raw_mics")
    noise = MultichannelSignal(rng.standard_normal((4, 700)).astype(np.float32), 16000, "raw_mics")
    noisy = add_noise_at_sdr(mix, noise, -5.0)
    x = mix.samples.astype(np.float64)
    n = noisy.samples.astype(np.float64) - x
    sdr = 10 * np.log10(np.sum(x * x) / np.sum(n * n))
    assert sdr == pytest.approx(-5.0, abs=1e-3)


def test_sdr_of_silent_mixture_is_undefined(rng):
    mix = MultichannelSignal(np.zeros((2, 100), dtype=np.float32), 16000, "raw_mics")
    noise = MultichannelSignal(rng.standard_normal((2, 100)).astype(np.float32), 16000, "raw_mics")
    with pytest.raises(DomainError):
        add_noise_at_sdr(mix, noise, 0.0)


def test_diffuse_noise_covers_every_mic():
    scene = build_scene(1.6, 2.4, 1.3, 0.3, [0])
    noise = diffuse_noise(scene, 1600, np.random.default_rng(1), sources=2, max_order=1, tail_len=0.05)
    assert noise.layout == "raw_mics"
    assert noise.samples.shape == (24, 1600)
    assert np.all(np.std(noise.samples, axis=1) > 0.0)


def test_speech_surrogate_is_seeded_and_levelled():
    a = speech_surrogate(1.0, 16000, np.random.default_rng(4))
    b = speech_surrogate(1.0, 16000, np.random.default_rng(4))
    assert a.length == 16000
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.sqrt(np.mean(a.samples.astype(np.float64) ** 2)) == pytest.approx(0.1, rel=1e-3)


def test_car_noise_is_low_frequency():
    x = car_noise(16000, 16000, np.random.default_rng(0))
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1 / 16000)
    assert power[freqs < 1000].sum() / power.sum() > 0.9


def test_fit_length_tiles_and_truncates():
    np.testing.assert_array_equal(fit_length(np.array([1.0, 2.0, 3.0]), 7), [1, 2, 3, 1, 2, 3, 1])
    np.testing.assert_array_equal(fit_length(np.array([1.0, 2.0, 3.0]), 2), [1, 2])
    with pytest.raises(ContractError):
        fit_length(np.array([]), 3)
