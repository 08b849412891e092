"""Windowed-sinc fractional delays shared by the beamformer and the image-source simulator."""
from typing import Tuple

import numpy as np

DEFAULT_TAPS = 33


def sinc_taps(delay: float, n_taps: int = DEFAULT_TAPS) -> Tuple[int, np.ndarray]:
    """Hann-windowed sinc centred on ``delay`` samples.

    Returns (first sample index, taps). An integer delay yields an exact unit impulse.
    """
    if n_taps < 1 or n_taps % 2 == 0:
        raise ValueError("n_taps must be a positive odd number")
    half = n_taps // 2
    centre = int(np.round(delay))
    n = np.arange(centre - half, centre + half + 1)
    t = n - delay
    window = 0.5 * (1.0 + np.cos(np.pi * t / (half + 1)))
    return centre - half, window * _exact_sinc(t)


def sinc_taps_batch(delays: np.ndarray, n_taps: int = DEFAULT_TAPS) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised ``sinc_taps``: returns (indices [K × n_taps], taps [K × n_taps])."""
    half = n_taps // 2
    delays = np.asarray(delays, dtype=np.float64)
    centre = np.round(delays).astype(np.int64)
    offsets = np.arange(-half, half + 1)
    n = centre[:, None] + offsets[None, :]
    t = n - delays[:, None]
    window = 0.5 * (1.0 + np.cos(np.pi * t / (half + 1)))
    return n, window * _exact_sinc(t)


def delay_filter(delay: float, length: int, n_taps: int = DEFAULT_TAPS) -> np.ndarray:
    """Causal FIR of ``length`` taps delaying by ``delay`` samples (delay >= n_taps // 2)."""
    start, taps = sinc_taps(delay, n_taps)
    if start < 0 or start + len(taps) > length:
        raise ValueError(f"delay {delay} does not fit a causal filter of {length} taps")
    h = np.zeros(length)
    h[start : start + len(taps)] = taps
    return h


def _exact_sinc(t: np.ndarray) -> np.ndarray:
    # np.sinc leaves ~1e-17 residue at nonzero integers
    s = np.sinc(t)
    on_grid = t == np.round(t)
    s[on_grid] = (t[on_grid] == 0).astype(np.float64)
    return s
