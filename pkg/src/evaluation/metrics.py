"""
分離性能の指標: SiSNR、SiSNR改善量、最良置換でのSIR、スペクトルMSE
"""
import itertools
from typing import List, Sequence, Tuple, Union

import numpy as np

from src.audio.signal import MultichannelSignal
from src.dsp.stft import analyze
from src.exceptions import ContractError, DomainError
from src.schemas import StftConfig

CLAMP_DB = 60.0

SignalLike = Union[MultichannelSignal, np.ndarray]


def _vector(x: SignalLike) -> np.ndarray:
    if isinstance(x, MultichannelSignal):
        if x.channels != 1:
            raise ContractError(f"expected a mono signal, got {x.channels} channels")
        return x.samples[0].astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"expected a 1-D signal, got shape {arr.shape}")
    return arr


def sisnr(est: SignalLike, ref: SignalLike) -> float:
    """10·log10(‖s_t‖²/‖est − s_t‖²), s_t = (⟨est, ref⟩/‖ref‖²)·ref（両方ゼロ平均化、±60 dB でクリップ）"""
    e = _vector(est)
    r = _vector(ref)
    if e.shape != r.shape or e.size == 0:
        raise ContractError(f"sisnr needs equal non-empty lengths, got {e.size} and {r.size}")
    e = e - e.mean()
    r = r - r.mean()
    energy = float(np.dot(r, r))
    if energy <= 0.0:
        raise DomainError("SiSNR is undefined for a silent reference")
    target = (np.dot(e, r) / energy) * r
    residual = e - target
    p_target = float(np.dot(target, target))
    p_residual = float(np.dot(residual, residual))
    if p_target <= 0.0:
        return -CLAMP_DB
    if p_residual <= 0.0:
        return CLAMP_DB
    return float(np.clip(10.0 * np.log10(p_target / p_residual), -CLAMP_DB, CLAMP_DB))


def sisnr_improvement(est: SignalLike, mix: SignalLike, ref: SignalLike) -> float:
    return sisnr(est, ref) - sisnr(mix, ref)


def sir_best_perm(est: Sequence[SignalLike], refs: Sequence[SignalLike]) -> Tuple[float, List[int]]:
    """全ての割り当て（M ≤ 6 なら最大720通り）で平均SiSNRを最大化する。perm[i] = 参照 i に割り当てた出力"""
    m, n = len(est), len(refs)
    if n == 0:
        raise ContractError("at least one reference is required")
    if n > m:
        raise ContractError(f"{n} references exceed {m} estimates")
    scores = np.array([[sisnr(e, r) for r in refs] for e in est])  # [M, N]
    best_value = -np.inf
    best_perm: Tuple[int, ...] = tuple(range(n))
    for perm in itertools.permutations(range(m), n):
        value = float(np.mean(scores[list(perm), np.arange(n)]))
        if value > best_value:
            best_value, best_perm = value, perm
    return best_value, list(best_perm)


def spectral_mse(est: SignalLike, ref: SignalLike, config: StftConfig, sample_rate: int = 16000) -> float:
    """複素スペクトルの平均二乗誤差 mean |X_est − X_ref|²"""
    e = _vector(est)
    r = _vector(ref)
    if e.shape != r.shape:
        raise ContractError("spectral_mse needs equal lengths")
    xe = analyze(MultichannelSignal(e.astype(np.float32), sample_rate, "mono"), config).data
    xr = analyze(MultichannelSignal(r.astype(np.float32), sample_rate, "mono"), config).data
    diff = xe.astype(np.complex128) - xr.astype(np.complex128)
    return float(np.mean(np.abs(diff) ** 2))


def zone_reference(image: MultichannelSignal) -> np.ndarray:
    """ゾーン自身のアレイでの残響像をゼロ遅延の遅延和（チャネル平均）で1本にする"""
    return image.samples.astype(np.float64).mean(axis=0)
