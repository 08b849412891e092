"""対数振幅スペクトログラムのグレースケール画像（PNG / PGM）"""
import os
from typing import List

import numpy as np
from PIL import Image

from src.audio.signal import MultichannelSignal
from src.dsp.stft import analyze
from src.exceptions import AudioWriteError, ContractError
from src.schemas import StftConfig

_FORMATS = {".png": "PNG", ".pgm": "PPM"}


def log_magnitude(samples: np.ndarray, config: StftConfig, sample_rate: int) -> np.ndarray:
    """log10(|X| + 1e-8), [bins × frames], 低い周波数が下の行"""
    spec = analyze(MultichannelSignal(np.asarray(samples, dtype=np.float32), sample_rate, "mono"), config)
    mag = np.log10(np.abs(spec.data[:, :, 0]).astype(np.float64) + 1e-8).T
    return mag[::-1]


def to_image(mag: np.ndarray) -> Image.Image:
    lo, hi = float(mag.min()), float(mag.max())
    norm = (mag - lo) / (hi - lo) if hi > lo else np.zeros_like(mag)
    return Image.fromarray(np.round(norm * 255.0).astype(np.uint8))


def render_spectrograms(signal: MultichannelSignal, config: StftConfig) -> List[Image.Image]:
    """チャネルごとに1枚（高さ = ビン数、幅 = フレーム数）"""
    return [to_image(log_magnitude(row, config, signal.sample_rate)) for row in signal.samples]


def channel_paths(out_path: str, channels: int) -> List[str]:
    if channels == 1:
        return [out_path]
    stem, ext = os.path.splitext(out_path)
    return [f"{stem}_ch{c + 1}{ext}" for c in range(channels)]


def save_spectrograms(signal: MultichannelSignal, out_path: str, config: StftConfig) -> List[str]:
    ext = os.path.splitext(out_path)[1].lower()
    if ext not in _FORMATS:
        raise ContractError(f"spectrogram output must end in .png or .pgm, got {out_path!r}")
    paths = channel_paths(out_path, signal.channels)
    parent = os.path.dirname(os.path.abspath(out_path))
    try:
        os.makedirs(parent, exist_ok=True)
        for image, path in zip(render_spectrograms(signal, config), paths):
            image.save(path, format=_FORMATS[ext])
    except OSError as exc:
        raise AudioWriteError(f"cannot write {out_path}: {exc}", detail={"path": out_path}) from exc
    return paths
