"""Time-domain multichannel containers shared by every stage."""
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence

import numpy as np

from src.exceptions import ContractError, DomainError, SignalValidationError
from src.schemas import PIPELINE_SAMPLE_RATE, ChannelLayout

LayoutTag = Literal["raw_mics", "per_zone", "mono"]


@dataclass(frozen=True, eq=False)
class MultichannelSignal:
    """Real samples [channels × length] stored as float32.

    raw_mics channels are zone-major, mic-minor: zone 0 mics 0..P-1, zone 1 mics 0..P-1, ...
    """

    samples: np.ndarray
    sample_rate: int = PIPELINE_SAMPLE_RATE
    layout: LayoutTag = "mono"
    channel_layout: Optional[ChannelLayout] = field(default=None)

    def __post_init__(self) -> None:
        data = np.asarray(self.samples, dtype=np.float32)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise SignalValidationError(f"samples must be [channels x length], got shape {data.shape}")
        if self.sample_rate <= 0:
            raise SignalValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        expected = _expected_rows(self.layout, self.channel_layout)
        if expected is not None and data.shape[0] != expected:
            raise SignalValidationError(
                f"layout {self.layout} expects {expected} channels, got {data.shape[0]}",
                detail={"layout": self.layout, "channels": int(data.shape[0])},
            )
        if data is self.samples:
            data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)

    @property
    def channels(self) -> int:
        return int(self.samples.shape[0])

    @property
    def length(self) -> int:
        return int(self.samples.shape[1])

    @property
    def duration(self) -> float:
        return self.length / float(self.sample_rate)

    def channel(self, index: int) -> "MultichannelSignal":
        if not 0 <= index < self.channels:
            raise ContractError(f"channel {index} out of range for {self.channels} channels")
        return MultichannelSignal(self.samples[index : index + 1], self.sample_rate, "mono")

    def with_layout(self, layout: LayoutTag, channel_layout: Optional[ChannelLayout] = None) -> "MultichannelSignal":
        """Reinterpret the channel axis; validates the channel count."""
        return MultichannelSignal(self.samples, self.sample_rate, layout, channel_layout)

    def zone_block(self, zone: int) -> np.ndarray:
        """The P microphone rows of one zone (raw_mics only)."""
        if self.layout != "raw_mics" or self.channel_layout is None:
            raise ContractError("zone_block needs a raw_mics signal with a channel layout")
        p = self.channel_layout.mics_per_zone
        return self.samples[zone * p : (zone + 1) * p]


def _expected_rows(layout: str, channel_layout: Optional[ChannelLayout]) -> Optional[int]:
    if layout == "mono":
        return 1
    if layout not in ("raw_mics", "per_zone"):
        raise SignalValidationError(f"unknown layout tag {layout!r}")
    if channel_layout is None:
        return None
    return channel_layout.raw_channels if layout == "raw_mics" else channel_layout.zones


def stack_mono(signals: Sequence[MultichannelSignal], layout: LayoutTag = "per_zone",
               channel_layout: Optional[ChannelLayout] = None) -> MultichannelSignal:
    """Stacks mono signals of equal length and rate into one container."""
    if not signals:
        raise ContractError("nothing to stack")
    rates = {s.sample_rate for s in signals}
    lengths = {s.length for s in signals}
    if len(rates) != 1 or len(lengths) != 1:
        raise ContractError("signals must share sample rate and length", detail={"rates": sorted(rates), "lengths": sorted(lengths)})
    rows = np.concatenate([s.samples for s in signals], axis=0)
    return MultichannelSignal(rows, signals[0].sample_rate, layout, channel_layout)


def split_channels(signal: MultichannelSignal) -> List[MultichannelSignal]:
    return [signal.channel(c) for c in range(signal.channels)]


def rms(signal: MultichannelSignal, channel: int = 0) -> float:
    """sqrt(mean(x²)) of one channel, linear amplitude."""
    if not 0 <= channel < signal.channels:
        raise ContractError(f"channel {channel} out of range for {signal.channels} channels")
    if signal.length == 0:
        raise DomainError("rms of an empty signal is undefined")
    x = signal.samples[channel].astype(np.float64)
    return float(np.sqrt(np.mean(x * x)))
