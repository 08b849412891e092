"""RIFF/WAVE読み書き（PCM16 / IEEE float32、リトルエンディアン）"""
import os
from typing import Literal, Optional

import numpy as np
import soundfile as sf

from src.audio.signal import LayoutTag, MultichannelSignal
from src.exceptions import AudioDecodeError, AudioWriteError, RateMismatchError, SignalValidationError
from src.schemas import PIPELINE_SAMPLE_RATE, ChannelLayout

WavFormat = Literal["pcm16", "float32"]

_SUBTYPES = {"pcm16": "PCM_16", "float32": "FLOAT"}
_PCM16_SCALE = 32768.0


def load_wav(
    path: str,
    *,
    expected_rate: Optional[int] = PIPELINE_SAMPLE_RATE,
    layout: Optional[LayoutTag] = None,
    channel_layout: Optional[ChannelLayout] = None,
) -> MultichannelSignal:
    """WAVを読み込み [-1, 1] の実数サンプルに正規化する。

    リサンプリングは行わない: ヘッダのサンプルレートが expected_rate と異なれば RateMismatchError。
    layout 未指定時は1chなら mono、それ以外は raw_mics とみなす。
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        info = sf.info(path)
    except RuntimeError as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}", detail={"path": path}) from exc
    if info.format != "WAV" or info.subtype not in ("PCM_16", "FLOAT"):
        raise AudioDecodeError(
            f"unsupported codec {info.format}/{info.subtype} in {path} (PCM_16 or FLOAT WAV only)",
            detail={"path": path, "format": info.format, "subtype": info.subtype},
        )
    if expected_rate is not None and info.samplerate != expected_rate:
        raise RateMismatchError(expected_rate, info.samplerate, path=path)

    try:
        if info.subtype == "PCM_16":
            raw, rate = sf.read(path, dtype="int16", always_2d=True)
            data = raw.astype(np.float32) / np.float32(_PCM16_SCALE)
        else:
            data, rate = sf.read(path, dtype="float32", always_2d=True)
    except RuntimeError as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}", detail={"path": path}) from exc

    samples = np.ascontiguousarray(data.T)
    if layout is None:
        layout = "mono" if samples.shape[0] == 1 else "raw_mics"
    return MultichannelSignal(samples, int(rate), layout, channel_layout)


def save_wav(signal: MultichannelSignal, path: str, format: WavFormat = "float32") -> None:
    """float32 はビット単位で往復一致、pcm16 は誤差 2^-15 以下。"""
    if not np.all(np.isfinite(signal.samples)):
        raise SignalValidationError(f"refusing to write non-finite samples to {path}")
    if format not in _SUBTYPES:
        raise SignalValidationError(f"unknown WAV format {format!r}")

    frames = np.ascontiguousarray(signal.samples.T)
    if format == "pcm16":
        frames = np.clip(np.round(frames.astype(np.float64) * _PCM16_SCALE), -32768, 32767).astype(np.int16)

    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
        sf.write(path, frames, signal.sample_rate, subtype=_SUBTYPES[format], format="WAV")
    except (OSError, RuntimeError) as exc:
        raise AudioWriteError(f"cannot write {path}: {exc}", detail={"path": path}) from exc
