"""Feature tensors with named axes [time T, freq F', zone Z, feat D]."""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.dsp.stft import ComplexSpectrogram
from src.exceptions import ContractError, SignalValidationError

AXES = ("time", "freq", "zone", "feat")


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4 or min(data.shape) < 1:
            raise SignalValidationError(f"feature tensor must be non-empty [T x F x Z x D], got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return tuple(int(v) for v in self.data.shape)  # type: ignore[return-value]

    @property
    def sizes(self) -> dict:
        return dict(zip(AXES, self.shape))

    def flat_channels(self) -> np.ndarray:
        """[T × F × Z·D]: zone-major flattening of the channel axis."""
        t, f, z, d = self.shape
        return self.data.reshape(t, f, z * d)


TensorLike = Union[FeatureTensor, np.ndarray]


def as_array(x: TensorLike) -> np.ndarray:
    return x.data if isinstance(x, FeatureTensor) else np.asarray(x, dtype=np.float32)


def like(template: TensorLike, data: np.ndarray) -> TensorLike:
    return FeatureTensor(data) if isinstance(template, FeatureTensor) else data


def spectra_planes(data: np.ndarray) -> np.ndarray:
    """complex [T × F × M] → float32 [T × F × M × 2] (real, imag)"""
    return np.stack([data.real, data.imag], axis=-1).astype(np.float32)


def features_from_spectra(spec: ComplexSpectrogram, zones: Optional[int] = None) -> FeatureTensor:
    """ゾーンごとに実部・虚部の2面を並べる"""
    if zones is not None and spec.channels != zones:
        raise ContractError(f"expected {zones} zone channels, got {spec.channels}")
    return FeatureTensor(spectra_planes(spec.data))


def complex_mask(planes: np.ndarray) -> np.ndarray:
    """[T × F × M × 2] → complex64 [T × F × M]"""
    if planes.shape[-1] != 2:
        raise ContractError(f"mask needs 2 planes per zone, got {planes.shape[-1]}")
    return (planes[..., 0] + 1j * planes[..., 1]).astype(np.complex64)
