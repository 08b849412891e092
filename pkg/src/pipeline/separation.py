"""
分離パイプライン: 24ch生マイク → 遅延和BF → STFT → IVA → DualSep → マスク ⊙ Y_bf → iSTFT

stages で途中までの DSP のみの動作（"bf", "bf_iva"）も選べる。ストリーミングは hop 単位で入力し、
IVA ブロックが揃うたびにそのブロック分の分離信号を返す。
"""
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional

import numpy as np

from src.audio.signal import MultichannelSignal, split_channels
from src.audio.wav_io import save_wav
from src.dsp.beamform import StreamingDelayAndSum, delay_and_sum, latency_samples
from src.dsp.iva import BlockOnlineIva, run_block_online, run_iva
from src.dsp.stft import ComplexSpectrogram, StreamingIstft, StreamingStft, analyze, synthesize
from src.exceptions import ContractError, WeightLoadError
from src.nn.model import DualSepNet, prepare
from src.nn.weights import WeightStore, load_weights, write_container
from src.schemas import PipelineConfig


@dataclass
class StageTimings:
    """ステージ別の処理時間 [秒]"""

    beamform: float = 0.0
    stft: float = 0.0
    iva: float = 0.0
    nn: float = 0.0
    istft: float = 0.0

    @property
    def total(self) -> float:
        return self.beamform + self.stft + self.iva + self.nn + self.istft

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    @contextmanager
    def measure(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            setattr(self, stage, getattr(self, stage) + time.perf_counter() - start)


def resolve_weights(config: PipelineConfig, weights: Optional[WeightStore] = None) -> Optional[WeightStore]:
    """NNモードでは重みが必須。DSPのみのモードでは重みを読まない"""
    if config.stages != "dualsep":
        return None
    if weights is not None:
        prepare(weights, config.model)
        return weights
    if not config.weights_path:
        raise WeightLoadError("the dualsep stage needs a weight file (weights_path or --weights)")
    if not os.path.isfile(config.weights_path):
        raise FileNotFoundError(f"no such weight file: {config.weights_path}")
    return load_weights(config.weights_path, expected=config.model)


def _check_input(mix: MultichannelSignal, config: PipelineConfig) -> MultichannelSignal:
    layout = config.layout
    if mix.channels != layout.raw_channels:
        raise ContractError(
            f"expected {layout.raw_channels} raw microphone channels, got {mix.channels}",
            detail={"expected": layout.raw_channels, "actual": mix.channels},
        )
    if mix.sample_rate != config.sample_rate:
        raise ContractError(
            f"input is {mix.sample_rate} Hz, pipeline runs at {config.sample_rate} Hz",
            detail={"expected": config.sample_rate, "actual": mix.sample_rate},
        )
    if mix.layout != "raw_mics" or mix.channel_layout is None:
        mix = mix.with_layout("raw_mics", layout)
    return mix


def _dump(config: PipelineConfig, y_bf: MultichannelSignal, spec_iva: Optional[ComplexSpectrogram],
          masks: Optional[np.ndarray]) -> None:
    if not config.dump_dir:
        return
    save_wav(y_bf, os.path.join(config.dump_dir, "y_bf.wav"))
    if spec_iva is not None:
        save_wav(synthesize(spec_iva), os.path.join(config.dump_dir, "y_iva.wav"))
    if masks is not None:
        write_container(os.path.join(config.dump_dir, "masks.dsepw"),
                        {"mask.real": masks.real, "mask.imag": masks.imag},
                        fingerprint=config.model.fingerprint(), config=config.model.model_dump(mode="json"))


def separate_offline(mix: MultichannelSignal, config: PipelineConfig, *, weights: Optional[WeightStore] = None,
                     timings: Optional[StageTimings] = None) -> List[MultichannelSignal]:
    """ゾーンごとの分離信号 x̂_i（M本、入力と同じ長さ）"""
    mix = _check_input(mix, config)
    store = resolve_weights(config, weights)
    timings = timings if timings is not None else StageTimings()

    with timings.measure("beamform"):
        y_bf = delay_and_sum(mix, config.zone_steering())
    with timings.measure("stft"):
        spec_bf = analyze(y_bf, config.stft)
    spec_out = spec_bf
    spec_iva = None
    masks = None
    if config.stages != "bf":
        with timings.measure("iva"):
            if config.iva_mode == "batch":
                spec_iva, _ = run_iva(spec_bf, config.iva)
            else:
                spec_iva = run_block_online(spec_bf, config.online)
        spec_out = spec_iva
    if config.stages == "dualsep":
        with timings.measure("nn"):
            masks, spec_out = prepare(store, config.model).forward(spec_bf, spec_iva)
    with timings.measure("istft"):
        out = synthesize(spec_out)
    _dump(config, y_bf, spec_iva, masks)
    return split_channels(out)


def describe_latency(config: PipelineConfig) -> Dict[str, float]:
    """アルゴリズム遅延 [ms]: 窓長 + IVAブロック（+ 小数遅延BFの共通遅延）"""
    sr = float(config.sample_rate)
    window = config.stft.win_length / sr * 1000.0
    block = 0.0 if config.stages == "bf" else config.online.block_frames * config.stft.hop / sr * 1000.0
    beam = latency_samples(config.zone_steering(), config.sample_rate) / sr * 1000.0
    return {"stft_window_ms": window, "iva_block_ms": block, "beamform_ms": beam,
            "total_ms": window + block + beam}


class SeparationStream:
    """ストリームハンドル（1スレッド1ハンドル）。push は hop サンプルずつ、最後に flush"""

    def __init__(self, config: PipelineConfig, weights: Optional[WeightStore] = None) -> None:
        if config.stages != "bf" and config.iva_mode != "block_online":
            raise ContractError("streaming needs block-online IVA (iva_mode='block_online')")
        if config.stages == "dualsep" and not config.model.causal:
            raise ContractError("streaming needs a causal model config")
        self.config = config
        self.steering = config.zone_steering()
        store = resolve_weights(config, weights)
        self._net: Optional[DualSepNet] = prepare(store, config.model) if store is not None else None
        self.timings = StageTimings()
        self.reset()

    @property
    def hop(self) -> int:
        return self.config.stft.hop

    @property
    def latency_ms(self) -> float:
        return describe_latency(self.config)["total_ms"]

    def reset(self) -> None:
        cfg = self.config
        zones = cfg.layout.zones
        self._das = StreamingDelayAndSum(self.steering, cfg.sample_rate)
        self._stft = StreamingStft(cfg.stft, zones)
        self._istft = StreamingIstft(cfg.stft, zones)
        self._iva = BlockOnlineIva(cfg.stft.n_bins, zones, cfg.online) if cfg.stages != "bf" else None
        self._state = self._net.new_state() if self._net is not None else None
        self._pending_bf: List[np.ndarray] = []
        self.samples_in = 0
        self.samples_out = 0
        self.closed = False

    def push(self, block: np.ndarray) -> np.ndarray:
        """[P·M × hop] → [M × k]（IVAブロックが揃うまでは k = 0）"""
        if self.closed:
            raise ContractError("push after flush")
        x = np.asarray(block, dtype=np.float32)
        expected = (self.config.layout.raw_channels, self.hop)
        if x.shape != expected:
            raise ContractError(f"push expects a {list(expected)} block, got {list(x.shape)}",
                                detail={"expected": list(expected), "actual": list(x.shape)})
        self.samples_in += self.hop
        return self._process_hop(x)

    def flush(self, tail: Optional[np.ndarray] = None) -> np.ndarray:
        """残りの端数（hop 未満）を受け取り、末尾までの出力を返す。以後 push はできない"""
        if self.closed:
            raise ContractError("stream already flushed")
        raw = self.config.layout.raw_channels
        emitted = self.samples_out
        parts = []
        if tail is not None:
            tail = np.asarray(tail, dtype=np.float32)
            if tail.ndim != 2 or tail.shape[0] != raw or tail.shape[1] >= self.hop:
                raise ContractError(f"flush tail must be [{raw} x k] with k < {self.hop}, got {list(tail.shape)}")
            padded = np.zeros((raw, self.hop), dtype=np.float32)
            padded[:, : tail.shape[1]] = tail
            self.samples_in += tail.shape[1]
            parts.append(self._process_hop(padded))
        # one extra hop so the last samples are covered by two frames
        parts.append(self._process_hop(np.zeros((raw, self.hop), dtype=np.float32)))
        if self._iva is not None:
            with self.timings.measure("iva"):
                frames = self._iva.flush()
            parts.append(self._emit(self._finish_block(frames)))
        with self.timings.measure("istft"):
            parts.append(self._istft.flush(self.samples_in))
        self.closed = True
        out = np.concatenate(parts, axis=1)[:, : max(self.samples_in - emitted, 0)]
        self.samples_out = emitted + out.shape[1]
        return out

    def _process_hop(self, x: np.ndarray) -> np.ndarray:
        with self.timings.measure("beamform"):
            y = self._das.push(x)
        with self.timings.measure("stft"):
            frame = self._stft.push_frame(y)
        if self._iva is None:
            return self._emit([frame])
        self._pending_bf.append(frame)
        with self.timings.measure("iva"):
            frames = self._iva.push_frame(frame)
        return self._emit(self._finish_block(frames))

    def _finish_block(self, iva_frames: List[np.ndarray]) -> List[np.ndarray]:
        if not iva_frames:
            return []
        n = len(iva_frames)
        bf = np.stack(self._pending_bf[:n])
        del self._pending_bf[:n]
        iva = np.stack(iva_frames)
        if self._net is None:
            return list(iva)
        with self.timings.measure("nn"):
            separated = self._net.process_chunk(bf, iva, self._state)
        return list(separated)

    def _emit(self, frames: List[np.ndarray]) -> np.ndarray:
        zones = self.config.layout.zones
        if not frames:
            return np.zeros((zones, 0), dtype=np.float32)
        with self.timings.measure("istft"):
            parts = [self._istft.push_frame(f) for f in frames]
        out = np.concatenate(parts, axis=1)
        self.samples_out += out.shape[1]
        return out


def open_stream(config: PipelineConfig, weights: Optional[WeightStore] = None) -> SeparationStream:
    return SeparationStream(config, weights)


def push(handle: SeparationStream, block: np.ndarray) -> np.ndarray:
    return handle.push(block)


def flush(handle: SeparationStream, tail: Optional[np.ndarray] = None) -> np.ndarray:
    return handle.flush(tail)


def run_stream(mix: MultichannelSignal, config: PipelineConfig, *, weights: Optional[WeightStore] = None,
               timings: Optional[StageTimings] = None) -> List[MultichannelSignal]:
    """発話全体を hop ごとに push して flush する（オフライン版と比較するための入口）"""
    mix = _check_input(mix, config)
    handle = open_stream(config, weights)
    if timings is not None:
        handle.timings = timings
    hop = handle.hop
    full = mix.length // hop
    parts = [handle.push(mix.samples[:, i * hop : (i + 1) * hop]) for i in range(full)]
    rest = mix.samples[:, full * hop :]
    parts.append(handle.flush(rest if rest.shape[1] else None))
    out = np.concatenate(parts, axis=1)
    signal = MultichannelSignal(out, mix.sample_rate, "per_zone")
    return split_channels(signal)
