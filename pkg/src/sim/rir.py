"""
鏡像法による室内インパルス応答（RIR）の生成

反射率は Eyring の式 α = 1 − exp(−0.161·V/(S·RT60)) から β = sqrt(1 − α) を全壁共通で求める。
鏡像源は全反射次数 max_order まで展開し、各パスを 33タップの窓付きsincで分数遅延として置く。
max_order > 0 の場合は、鏡像法が完全に網羅する時間 t_diff 以降に exp(−13.8·t/RT60) で
減衰する拡散テール（鏡像法のエネルギーにレベル合わせ）を足す。
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import linregress

from src.dsp.fractional_delay import DEFAULT_TAPS, sinc_taps_batch
from src.exceptions import ContractError, DomainError, SignalValidationError
from src.schemas import PIPELINE_SAMPLE_RATE, SPEED_OF_SOUND
from src.sim.scene import CabinScene

_DECAY_60DB = 6.907755278982137  # ln(1000): amplitude decay over rt60


@dataclass(frozen=True, eq=False)
class RirSet:
    """rirs: float32 [sources N × mics P·M × taps]"""

    rirs: np.ndarray
    sample_rate: int = PIPELINE_SAMPLE_RATE

    def __post_init__(self) -> None:
        data = np.asarray(self.rirs, dtype=np.float32)
        if data.ndim != 3:
            raise SignalValidationError(f"rirs must be [sources x mics x taps], got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SignalValidationError("rirs contain non-finite taps")
        object.__setattr__(self, "rirs", data)

    @property
    def sources(self) -> int:
        return int(self.rirs.shape[0])

    @property
    def mics(self) -> int:
        return int(self.rirs.shape[1])

    @property
    def taps(self) -> int:
        return int(self.rirs.shape[2])


def eyring_reflection(dims: np.ndarray, rt60: float) -> float:
    """壁の振幅反射率 β"""
    if rt60 <= 0.0:
        return 0.0
    w, l, h = (float(v) for v in dims)
    volume = w * l * h
    surface = 2.0 * (w * l + w * h + l * h)
    alpha = 1.0 - np.exp(-0.161 * volume / (surface * rt60))
    return float(np.sqrt(max(1.0 - alpha, 0.0)))


def _axis_images(coord: float, size: float, max_order: int) -> Tuple[np.ndarray, np.ndarray]:
    # image at (1 − 2q)·coord + 2n·size reflects |2n − q| times
    reach = max_order // 2 + 1
    n = np.arange(-reach, reach + 1)
    positions = []
    counts = []
    for q in (0, 1):
        order = np.abs(2 * n - q)
        keep = order <= max_order
        positions.append((1 - 2 * q) * coord + 2 * n[keep] * size)
        counts.append(order[keep])
    return np.concatenate(positions), np.concatenate(counts)


def image_sources(source: np.ndarray, dims: np.ndarray, max_order: int) -> Tuple[np.ndarray, np.ndarray]:
    """鏡像源の座標 [K, 3] と反射回数 [K]（全反射次数 ≤ max_order）"""
    axes = [_axis_images(float(source[a]), float(dims[a]), max_order) for a in range(3)]
    px, py, pz = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing="ij")
    cx, cy, cz = np.meshgrid(axes[0][1], axes[1][1], axes[2][1], indexing="ij")
    counts = (cx + cy + cz).ravel()
    keep = counts <= max_order
    positions = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)[keep]
    return positions, counts[keep]


def image_source_response(source: np.ndarray, mics: np.ndarray, dims: np.ndarray, beta: float,
                          max_order: int, n_taps: int, sample_rate: int,
                          speed_of_sound: float = SPEED_OF_SOUND) -> np.ndarray:
    """1音源から全マイクへの鏡像法RIR [mics × n_taps]（float64）

    各鏡像は到達時刻を中心とする33タップの窓付きsincで置く。時刻0は音源の発音時刻で、
    到達が DEFAULT_TAPS // 2 サンプル未満（16 kHz で約0.34 m 以内）の鏡像は負の時刻に当たる前側のタップが切り捨てられる。
    n_taps 以降のタップも同様に捨てる。
    """
    positions, counts = image_sources(np.asarray(source, dtype=np.float64), dims, max_order)
    mics = np.asarray(mics, dtype=np.float64).reshape(-1, 3)
    dist = np.linalg.norm(positions[:, None, :] - mics[None, :, :], axis=2)  # [K, mics]
    dist = np.maximum(dist, 1e-3)
    amplitude = (beta ** counts)[:, None] / (4.0 * np.pi * dist)
    delays = dist * sample_rate / speed_of_sound

    n_mics = mics.shape[0]
    idx, taps = sinc_taps_batch(delays.T.ravel(), DEFAULT_TAPS)      # [mics·K, taps]
    values = taps * amplitude.T.ravel()[:, None]
    rows = np.repeat(np.arange(n_mics), positions.shape[0])[:, None]
    valid = (idx >= 0) & (idx < n_taps)
    flat = (rows * n_taps + idx)[valid]
    out = np.zeros(n_mics * n_taps)
    np.add.at(out, flat, values[valid])
    return out.reshape(n_mics, n_taps)


def add_diffuse_tail(rir: np.ndarray, rt60: float, max_order: int, min_dim: float, sample_rate: int,
                     rng: np.random.Generator, speed_of_sound: float = SPEED_OF_SOUND) -> np.ndarray:
    """t_diff = max_order·min_dim/c 以降に指数減衰ノイズを足す（レベルは [t_diff/2, t_diff) の平均パワー）"""
    if max_order == 0 or rt60 <= 0.0:
        return rir
    n_taps = rir.shape[-1]
    start = int(round(max_order * min_dim / speed_of_sound * sample_rate))
    if start < 2 or start >= n_taps:
        return rir
    out = rir.copy()
    centre = 0.75 * start
    n = np.arange(start, n_taps)
    envelope = np.exp(-_DECAY_60DB * (n - centre) / (rt60 * sample_rate))
    for row in range(out.shape[0]):
        power = float(np.mean(out[row, start // 2 : start] ** 2))
        if power <= 0.0:
            continue
        out[row, start:] += rng.standard_normal(n.size) * np.sqrt(power) * envelope
    return out


def rir_length(scene: CabinScene, tail_len: float, sample_rate: int) -> int:
    span = float(np.linalg.norm(scene.dims))
    direct = int(np.ceil(span / scene.speed_of_sound * sample_rate)) + DEFAULT_TAPS
    return max(int(np.ceil(tail_len * sample_rate)), direct)


def generate_rirs(scene: CabinScene, max_order: int = 10, tail_len: float = 0.6, *,
                  sample_rate: int = PIPELINE_SAMPLE_RATE, sources: Optional[np.ndarray] = None,
                  stream: int = 0) -> RirSet:
    """シーンの各音源から P·M 本の全マイクへのRIR

    sources を渡すと（雑音源など）シーンの話者位置の代わりに使う。stream は乱数系列の区別用。
    """
    if max_order < 0:
        raise ContractError("max_order must be >= 0")
    if max_order > 0 and scene.rt60 <= 0.0:
        raise ContractError("rt60 must be > 0 unless max_order = 0 (anechoic)")
    positions = scene.sources if sources is None else np.asarray(sources, dtype=np.float64).reshape(-1, 3)
    scene.check_inside(positions, "source")
    n_taps = rir_length(scene, tail_len, sample_rate)
    beta = eyring_reflection(scene.dims, scene.rt60) if max_order > 0 else 0.0
    mics = scene.mic_positions
    out = np.zeros((positions.shape[0], mics.shape[0], n_taps), dtype=np.float32)
    for i, position in enumerate(positions):
        h = image_source_response(position, mics, scene.dims, beta, max_order, n_taps, sample_rate,
                                  scene.speed_of_sound)
        rng = np.random.default_rng([scene.seed, stream, i])
        h = add_diffuse_tail(h, scene.rt60, max_order, float(scene.dims.min()), sample_rate, rng,
                             scene.speed_of_sound)
        out[i] = h
    return RirSet(out, sample_rate)


def schroeder_curve(rir: np.ndarray) -> np.ndarray:
    """後ろ向き積分したエネルギー減衰曲線 [dB]（先頭で 0 dB）"""
    energy = np.cumsum(np.asarray(rir, dtype=np.float64)[::-1] ** 2)[::-1]
    if energy[0] <= 0.0:
        raise DomainError("impulse response has no energy")
    return 10.0 * np.log10(np.maximum(energy / energy[0], 1e-300))


def estimate_rt60(rir: np.ndarray, sample_rate: int = PIPELINE_SAMPLE_RATE,
                  upper_db: float = -5.0, lower_db: float = -25.0) -> float:
    """Schroeder 積分の −5 dB〜−25 dB 区間に直線を当て、−60 dB までの時間に換算する"""
    curve = schroeder_curve(rir)
    idx = np.flatnonzero((curve <= upper_db) & (curve >= lower_db))
    if idx.size < 2:
        raise DomainError(f"decay curve never spans {upper_db} to {lower_db} dB")
    fit = linregress(idx / float(sample_rate), curve[idx])
    if fit.slope >= 0.0:
        raise DomainError("decay curve is not decreasing")
    return float(-60.0 / fit.slope)
