"""
STFT / iSTFT（発話全体とフレーム単位ストリーミングの両API）

分析・合成ともにHann窓、合成は Σw² による重み付き重畳加算で正規化する。
左側に win−hop 個のゼロを詰めるため、フレーム t は t·hop + win − 1 以前のサンプルのみに依存する。
バッチ処理もストリーミングもフレーム単位の同じ演算を同じ順序で行う。
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import get_window

from src.audio.signal import MultichannelSignal
from src.exceptions import ContractError, SignalValidationError
from src.schemas import PIPELINE_SAMPLE_RATE, StftConfig

_DEN_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """data: complex64 [frames T × bins F × channels]"""

    data: np.ndarray
    config: StftConfig
    sample_rate: int = PIPELINE_SAMPLE_RATE
    length: Optional[int] = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise SignalValidationError(f"spectrogram must be [T x F x C], got shape {data.shape}")
        if data.shape[1] != self.config.n_bins:
            raise SignalValidationError(f"expected {self.config.n_bins} bins, got {data.shape[1]}")
        object.__setattr__(self, "data", data.astype(np.complex64, copy=False))

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def bins(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    def replace(self, data: np.ndarray) -> "ComplexSpectrogram":
        return ComplexSpectrogram(data, self.config, self.sample_rate, self.length)


def _window(config: StftConfig) -> np.ndarray:
    return get_window(config.window, config.win_length).astype(np.float64)


def frame_count(length: int, config: StftConfig) -> int:
    """ceil(N/hop) + 1: every sample is covered by the overlap of two frames."""
    return -(-length // config.hop) + 1


def _frame_spectrum(segment: np.ndarray, window: np.ndarray, fft_size: int) -> np.ndarray:
    # segment [C × win] → [F × C]
    return np.fft.rfft(segment * window, n=fft_size, axis=-1).T


def analyze(signal: MultichannelSignal, config: StftConfig) -> ComplexSpectrogram:
    """片側スペクトル: フレーム t はパディング後の [t·hop, t·hop+win) を覆う"""
    window = _window(config)
    pad_left = config.win_length - config.hop
    n_frames = frame_count(signal.length, config)
    padded = np.zeros((signal.channels, pad_left + n_frames * config.hop), dtype=np.float64)
    padded[:, pad_left : pad_left + signal.length] = signal.samples

    out = np.empty((n_frames, config.n_bins, signal.channels), dtype=np.complex64)
    for t in range(n_frames):
        start = t * config.hop
        out[t] = _frame_spectrum(padded[:, start : start + config.win_length], window, config.fft_size)
    return ComplexSpectrogram(out, config, signal.sample_rate, signal.length)


def synthesize(spec: ComplexSpectrogram, config: Optional[StftConfig] = None) -> MultichannelSignal:
    """重み付き重畳加算で時間波形に戻し、分析時のパディングを取り除く"""
    if config is not None and config != spec.config:
        raise SignalValidationError("spectrogram was analysed with a different STFT config",
                                    detail={"stored": spec.config.model_dump(), "given": config.model_dump()})
    if spec.frames < 1:
        raise ContractError("synthesize needs at least one frame")
    cfg = spec.config
    window = _window(cfg)
    pad_left = cfg.win_length - cfg.hop
    total = (spec.frames - 1) * cfg.hop + cfg.win_length
    num = np.zeros((spec.channels, total), dtype=np.float64)
    den = np.zeros(total, dtype=np.float64)
    wsq = window * window
    for t in range(spec.frames):
        start = t * cfg.hop
        frame = np.fft.irfft(spec.data[t].T.astype(np.complex128), n=cfg.fft_size, axis=-1)[:, : cfg.win_length]
        num[:, start : start + cfg.win_length] += frame * window
        den[start : start + cfg.win_length] += wsq
    out = _normalize(num, den)
    length = spec.length if spec.length is not None else spec.frames * cfg.hop - cfg.hop
    out = out[:, pad_left : pad_left + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return MultichannelSignal(out.astype(np.float32), spec.sample_rate, "per_zone" if spec.channels > 1 else "mono")


def _normalize(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    safe = np.where(den > _DEN_FLOOR, den, 1.0)
    return np.where(den > _DEN_FLOOR, num / safe, 0.0)


class StreamingStft:
    """フレームプッシュ型の分析器（1ストリーム1オブジェクト、単一所有）"""

    def __init__(self, config: StftConfig, channels: int) -> None:
        self.config = config
        self.channels = channels
        self._window = _window(config)
        self.reset()

    def reset(self) -> None:
        self._buffer = np.zeros((self.channels, self.config.win_length), dtype=np.float64)
        self.frames_emitted = 0

    @property
    def latency_samples(self) -> int:
        """Algorithmic latency of analysis + overlap-add synthesis: one window."""
        return self.config.win_length

    def frame_available_after(self, t: int) -> int:
        """Padded-stream sample count after which frame t can be computed."""
        return (t + 1) * self.config.hop + (self.config.win_length - self.config.hop)

    def push_frame(self, hop_samples: np.ndarray) -> Optional[np.ndarray]:
        """hop個のサンプル [C × hop] を受け取り、1フレーム [F × C] を返す"""
        chunk = np.asarray(hop_samples, dtype=np.float32)
        if chunk.ndim == 1 and self.channels == 1:
            chunk = chunk[None, :]
        if chunk.shape != (self.channels, self.config.hop):
            raise ContractError(
                f"push_frame expects [{self.channels} x {self.config.hop}] samples, got {chunk.shape}",
                detail={"expected": [self.channels, self.config.hop], "actual": list(chunk.shape)},
            )
        hop = self.config.hop
        self._buffer[:, :-hop] = self._buffer[:, hop:]
        self._buffer[:, -hop:] = chunk
        self.frames_emitted += 1
        return _frame_spectrum(self._buffer, self._window, self.config.fft_size).astype(np.complex64)


class StreamingIstft:
    """重畳加算バッファを保持し、フレームごとに確定した hop 個のサンプルを返す"""

    def __init__(self, config: StftConfig, channels: int) -> None:
        self.config = config
        self.channels = channels
        self._window = _window(config)
        self._wsq = self._window * self._window
        self.reset()

    def reset(self) -> None:
        self._num = np.zeros((self.channels, self.config.win_length), dtype=np.float64)
        self._den = np.zeros(self.config.win_length, dtype=np.float64)
        self._skip = self.config.win_length - self.config.hop
        self.samples_emitted = 0

    def push_frame(self, frame: np.ndarray) -> np.ndarray:
        """frame [F × C] → 確定サンプル [C × k]（先頭のパディング分は捨てる）"""
        cfg = self.config
        spectrum = np.asarray(frame).astype(np.complex128)
        if spectrum.shape != (cfg.n_bins, self.channels):
            raise ContractError(f"expected a [{cfg.n_bins} x {self.channels}] frame, got {spectrum.shape}")
        segment = np.fft.irfft(spectrum.T, n=cfg.fft_size, axis=-1)[:, : cfg.win_length]
        self._num += segment * self._window
        self._den += self._wsq
        ready = _normalize(self._num[:, : cfg.hop], self._den[: cfg.hop])
        self._num[:, : -cfg.hop] = self._num[:, cfg.hop :]
        self._num[:, -cfg.hop :] = 0.0
        self._den[: -cfg.hop] = self._den[cfg.hop :]
        self._den[-cfg.hop :] = 0.0
        return self._emit(ready)

    def flush(self, total_length: int) -> np.ndarray:
        """残りのバッファを出力し、累計が total_length になるよう切り詰める"""
        tail = _normalize(self._num, self._den)
        self._num[:] = 0.0
        self._den[:] = 0.0
        out = self._emit(tail)
        remaining = max(total_length - (self.samples_emitted - out.shape[1]), 0)
        out = out[:, :remaining]
        self.samples_emitted = total_length
        return out.astype(np.float32)

    def _emit(self, block: np.ndarray) -> np.ndarray:
        if self._skip:
            drop = min(self._skip, block.shape[1])
            block = block[:, drop:]
            self._skip -= drop
        self.samples_emitted += block.shape[1]
        return block.astype(np.float32)
