"""
固定遅延和ビームフォーマ: P·M 本の生マイク信号をゾーンごとの M チャネルに縮約する

y_bf,i(t) = (1/P) Σ_p y_p,i(t − τ_p)。全遅延が整数サンプルなら厳密なシフト、
小数遅延を含む場合は33タップの窓付きsincで補間し、全チャネルに共通の16サンプルの遅れを足して因果にする。
"""
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from src.audio.signal import MultichannelSignal
from src.dsp.fractional_delay import DEFAULT_TAPS, delay_filter
from src.exceptions import ContractError
from src.schemas import SPEED_OF_SOUND, ChannelLayout, SteeringSpec

_INTEGER_TOL = 1e-9


def delays_for_direction(mics: int, spacing: float, azimuth: float, *,
                         speed_of_sound: float = SPEED_OF_SOUND) -> SteeringSpec:
    """Plane-wave steering delays for a line array; azimuth 0 is broadside.

    τ_p = p·spacing·sin(azimuth)/c, re-referenced so the smallest delay is 0.
    """
    if abs(azimuth) > np.pi / 2 + 1e-12:
        raise ContractError(f"azimuth {azimuth} outside [-pi/2, pi/2]")
    raw = np.arange(mics) * spacing * np.sin(azimuth) / speed_of_sound
    return SteeringSpec(delays=[float(v) for v in raw - raw.min()])


class _ZonePlan:
    """Per-microphone delays in samples plus the common latency needed to keep them causal."""

    def __init__(self, steering: Sequence[SteeringSpec], sample_rate: int) -> None:
        self.delays = np.array([[tau * sample_rate for tau in s.delays] for s in steering], dtype=np.float64)
        # negative delays would need future samples
        self.delays -= min(0.0, float(self.delays.min()))
        self.gains = np.array([1.0 / s.mics if s.gain_norm == "1/P" else 1.0 for s in steering])
        self.integer = bool(np.all(np.abs(self.delays - np.round(self.delays)) < _INTEGER_TOL))
        self.latency = 0 if self.integer else DEFAULT_TAPS // 2
        total = self.delays + self.latency
        self.filter_len = int(np.ceil(total.max())) + DEFAULT_TAPS // 2 + 1
        if self.integer:
            self.shifts = np.round(self.delays).astype(np.int64)
            self.filters = None
        else:
            self.shifts = None
            self.filters = np.stack([
                np.stack([delay_filter(d, self.filter_len) for d in zone]) for zone in total
            ])

    @property
    def history(self) -> int:
        """Past samples a streaming beamformer must keep."""
        return int(self.shifts.max()) if self.integer else self.filter_len - 1


def _check_layout(raw: MultichannelSignal, steering: Sequence[SteeringSpec]) -> ChannelLayout:
    if raw.layout != "raw_mics":
        raise ContractError(f"delay_and_sum needs a raw_mics signal, got {raw.layout}")
    mics = {s.mics for s in steering}
    if len(mics) != 1:
        raise ContractError("all zones must steer the same number of microphones")
    layout = ChannelLayout(zones=len(steering), mics_per_zone=mics.pop())
    if raw.channels != layout.raw_channels:
        raise ContractError(
            f"expected {layout.raw_channels} raw channels ({layout.zones} zones x {layout.mics_per_zone} mics), got {raw.channels}",
            detail={"expected": layout.raw_channels, "actual": raw.channels},
        )
    if raw.channel_layout is not None and raw.channel_layout != layout:
        raise ContractError("signal channel layout disagrees with the steering table")
    return layout


def _sum_zone(rows: np.ndarray, gain: float) -> np.ndarray:
    if gain == 1.0:
        return rows.sum(axis=0)
    return rows.sum(axis=0) / rows.shape[0]


def delay_and_sum(raw: MultichannelSignal, steering: Sequence[SteeringSpec]) -> MultichannelSignal:
    """遅延和（1/P正規化）。出力はゾーンごとの M チャネル。"""
    layout = _check_layout(raw, steering)
    plan = _ZonePlan(steering, raw.sample_rate)
    p = layout.mics_per_zone
    x = raw.samples.astype(np.float64)
    n = raw.length
    out = np.zeros((layout.zones, n), dtype=np.float64)
    for zone in range(layout.zones):
        rows = x[zone * p : (zone + 1) * p]
        if plan.integer:
            aligned = np.zeros_like(rows)
            for mic, shift in enumerate(plan.shifts[zone]):
                if shift < n:
                    aligned[mic, shift:] = rows[mic, : n - shift]
        else:
            aligned = np.stack([lfilter(plan.filters[zone, mic], [1.0], rows[mic]) for mic in range(p)])
        out[zone] = _sum_zone(aligned, plan.gains[zone])
    return MultichannelSignal(out.astype(np.float32), raw.sample_rate, "per_zone",
                              ChannelLayout(zones=layout.zones, mics_per_zone=1))


def latency_samples(steering: Sequence[SteeringSpec], sample_rate: int) -> int:
    """Common delay added by fractional steering (0 when every delay is a whole sample)."""
    return _ZonePlan(steering, sample_rate).latency


class StreamingDelayAndSum:
    """ブロック単位の遅延和。同じ入力ならオフライン版と同じ値を返す。"""

    def __init__(self, steering: Sequence[SteeringSpec], sample_rate: int) -> None:
        self.steering: List[SteeringSpec] = list(steering)
        self.sample_rate = sample_rate
        self._plan = _ZonePlan(self.steering, sample_rate)
        self.layout = ChannelLayout(zones=len(self.steering), mics_per_zone=self.steering[0].mics)
        self.reset()

    def reset(self) -> None:
        p = self.layout.mics_per_zone
        self._history = np.zeros((self.layout.raw_channels, self._plan.history), dtype=np.float64)
        self._zi: Optional[np.ndarray] = None
        if not self._plan.integer:
            self._zi = np.zeros((self.layout.zones, p, self._plan.filter_len - 1))

    def push(self, block: np.ndarray) -> np.ndarray:
        """block [P·M × k] → [M × k]"""
        x = np.asarray(block, dtype=np.float32).astype(np.float64)
        if x.ndim != 2 or x.shape[0] != self.layout.raw_channels:
            raise ContractError(f"expected [{self.layout.raw_channels} x k] raw samples, got {x.shape}")
        p = self.layout.mics_per_zone
        k = x.shape[1]
        out = np.zeros((self.layout.zones, k), dtype=np.float64)
        if self._plan.integer:
            joined = np.concatenate([self._history, x], axis=1)
            h = self._history.shape[1]
            for zone in range(self.layout.zones):
                rows = np.stack([
                    joined[zone * p + mic, h - shift : h - shift + k]
                    for mic, shift in enumerate(self._plan.shifts[zone])
                ])
                out[zone] = _sum_zone(rows, self._plan.gains[zone])
            if h:
                self._history = joined[:, -h:]
        else:
            for zone in range(self.layout.zones):
                rows = []
                for mic in range(p):
                    y, self._zi[zone, mic] = lfilter(self._plan.filters[zone, mic], [1.0],
                                                     x[zone * p + mic], zi=self._zi[zone, mic])
                    rows.append(y)
                out[zone] = _sum_zone(np.stack(rows), self._plan.gains[zone])
        return out.astype(np.float32)
