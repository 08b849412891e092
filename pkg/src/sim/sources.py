"""Source excitations: seeded speech surrogates, optional WAV speech, low-frequency car noise."""
import glob
import os
from typing import List, Sequence

import numpy as np
from scipy.signal import butter, sosfilt

from src.audio.signal import MultichannelSignal
from src.audio.wav_io import load_wav
from src.exceptions import ContractError

SURROGATE_RMS = 0.1


def speech_surrogate(duration: float, sample_rate: int, rng: np.random.Generator) -> MultichannelSignal:
    """音声帯域（100 Hz〜4 kHz）に色付けしたガウス雑音を音節レート（〜4 Hz）で振幅変調したもの"""
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ContractError("duration must cover at least one sample")
    high = min(4000.0, 0.45 * sample_rate)
    band = butter(4, [100.0, high], btype="bandpass", fs=sample_rate, output="sos")
    carrier = sosfilt(band, rng.standard_normal(n))

    syllabic = butter(2, 4.0, btype="lowpass", fs=sample_rate, output="sos")
    envelope = np.abs(sosfilt(syllabic, rng.standard_normal(n)))
    envelope /= max(float(envelope.max()), 1e-12)
    # pauses between syllables
    envelope = np.clip(envelope - 0.15, 0.0, None)

    x = carrier * envelope
    level = float(np.sqrt(np.mean(x * x)))
    if level > 0.0:
        x *= SURROGATE_RMS / level
    return MultichannelSignal(x.astype(np.float32), sample_rate, "mono")


def car_noise(length: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """走行雑音の励振: 500 Hz 以下に集中した雑音"""
    lowpass = butter(2, 500.0, btype="lowpass", fs=sample_rate, output="sos")
    x = sosfilt(lowpass, rng.standard_normal(length))
    return x / max(float(np.sqrt(np.mean(x * x))), 1e-12)


def list_speech_files(dirs: Sequence[str]) -> List[str]:
    files: List[str] = []
    for d in dirs:
        files.extend(glob.glob(os.path.join(d, "**", "*.wav"), recursive=True))
    return sorted(files)


def fit_length(x: np.ndarray, length: int) -> np.ndarray:
    """巡回的に延長または切り詰めて length にする"""
    if x.size == 0:
        raise ContractError("cannot extend an empty signal")
    reps = -(-length // x.size)
    return np.tile(x, reps)[:length]


def draw_speech(files: Sequence[str], duration: float, sample_rate: int, rng: np.random.Generator) -> MultichannelSignal:
    """WAVがあればそこから1本選び、なければ代替信号を作る"""
    if not files:
        return speech_surrogate(duration, sample_rate, rng)
    path = files[int(rng.integers(len(files)))]
    signal = load_wav(path, expected_rate=sample_rate)
    x = signal.samples[0].astype(np.float64)
    x = fit_length(x, int(round(duration * sample_rate)))
    level = float(np.sqrt(np.mean(x * x)))
    if level > 0.0:
        x *= SURROGATE_RMS / level
    return MultichannelSignal(x.astype(np.float32), sample_rate, "mono")
