"""
勾配法による周波数領域IVA（独立ベクトル分析）

W_f = I で初期化し、球面ラプラス型の非線形関数 g(y)_f = y_f / max(‖y‖, ε) を用いて
W ← W − η·(E[g(Y)Yᴴ]·W⁻ᴴ − I) で更新する（update="plain"）。
この更新の停留点は E[g(Y)Xᴴ] = I なので、混合行列が対角でない限り分離解に留まらない。
run_iva とブロックオンライン処理の既定は相対形 W ← W − η·(E[g(Y)Yᴴ] − I)·W（update="natural"）で、
W = I の時点では両者の1ステップは一致する。
最後に最小歪み原理 W ← diag(W⁻¹)·W でスケールを決め、出力をゾーンに割り当てる。
行列演算は complex128、それ以外は32ビット。
"""
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from src.dsp.stft import ComplexSpectrogram
from src.exceptions import ContractError, IvaConvergenceError, NumericalError
from src.schemas import BlockOnlineParams, IvaParams, IvaUpdateRule


@dataclass(frozen=True, eq=False)
class UnmixingState:
    """W: complex128 [F × M × M]"""

    W: np.ndarray
    eta: float = 0.1
    iterations: int = 0
    contrast: str = "spherical_laplace"
    epsilon: float = 1e-8
    flags: Tuple[str, ...] = ()
    objective_history: Tuple[float, ...] = field(default=())

    @property
    def bins(self) -> int:
        return int(self.W.shape[0])

    @property
    def channels(self) -> int:
        return int(self.W.shape[1])


def init_identity(bins: int, channels: int, *, eta: float = 0.1, epsilon: float = 1e-8) -> UnmixingState:
    """全周波数ビンで単位行列"""
    if bins < 1 or channels < 1:
        raise ContractError("bins and channels must be >= 1")
    W = np.tile(np.eye(channels, dtype=np.complex128), (bins, 1, 1))
    return UnmixingState(W=W, eta=eta, epsilon=epsilon)


def _to_fmt(spec_data: np.ndarray) -> np.ndarray:
    # [T, F, M] → [F, M, T]
    return np.ascontiguousarray(np.transpose(spec_data, (1, 2, 0))).astype(np.complex128)


def _from_fmt(x: np.ndarray) -> np.ndarray:
    return np.transpose(x, (2, 0, 1)).astype(np.complex64)


def _check_shapes(state: UnmixingState, spec: ComplexSpectrogram) -> None:
    if spec.bins != state.bins or spec.channels != state.channels:
        raise ContractError(
            f"spectrogram [{spec.bins} bins x {spec.channels} ch] does not match unmixing state "
            f"[{state.bins} x {state.channels}]",
        )


def apply_unmixing(state: UnmixingState, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """フレーム t・ビン f ごとに W_f · Y_bf"""
    _check_shapes(state, spec)
    return spec.replace(_from_fmt(state.W @ _to_fmt(spec.data)))


def spherical_contrast(Y: np.ndarray, epsilon: float) -> np.ndarray:
    """g(y)_f = y_f / max(sqrt(Σ_f' |y_f'|²), ε), computed per source-frame vector. Y: [F, M, T]"""
    r = np.sqrt(np.sum(np.abs(Y) ** 2, axis=0))
    return Y / np.maximum(r, epsilon)[None, :, :]


def objective(W: np.ndarray, X: np.ndarray) -> float:
    """mean_t Σ_k ‖y_k,t‖ − Σ_f log|det W_f|  (X: [F, M, T])"""
    Y = W @ X
    r = np.sqrt(np.sum(np.abs(Y) ** 2, axis=0))
    _, logabsdet = np.linalg.slogdet(W)
    return float(np.mean(np.sum(r, axis=0)) - np.sum(logabsdet))


def _update(W: np.ndarray, X: np.ndarray, eta: float, epsilon: float, rule: IvaUpdateRule = "plain") -> np.ndarray:
    T = X.shape[2]
    Y = W @ X
    G = spherical_contrast(Y, epsilon)
    C = (G @ np.conj(np.transpose(Y, (0, 2, 1)))) / T
    eye = np.eye(W.shape[1], dtype=np.complex128)
    if rule == "natural":
        return W - eta * ((C - eye) @ W)
    try:
        W_inv_h = np.linalg.inv(W).conj().swapaxes(-1, -2)
    except np.linalg.LinAlgError as exc:
        raise IvaConvergenceError("unmixing matrix is singular", detail={"reason": str(exc)}) from exc
    return W - eta * (C @ W_inv_h - eye)


def _guard(W: np.ndarray, epsilon: float, iteration: int) -> Tuple[np.ndarray, bool]:
    """Regularise bins whose W_f is singular within tolerance; raise if that does not help."""
    if not np.all(np.isfinite(W)):
        raise NumericalError("non-finite unmixing matrix", iteration=iteration)
    sv = np.linalg.svd(W, compute_uv=False)
    bad = sv[:, -1] <= epsilon * np.maximum(sv[:, 0], epsilon)
    if not np.any(bad):
        return W, False
    eye = np.eye(W.shape[1], dtype=np.complex128)
    fixed = W.copy()
    fixed[bad] = W[bad] + epsilon * eye
    sv = np.linalg.svd(fixed[bad], compute_uv=False)
    if np.any(sv[:, -1] <= epsilon * np.maximum(sv[:, 0], epsilon) * 1e-3):
        raise IvaConvergenceError("unmixing matrices stay singular after regularisation",
                                  iteration=iteration, detail={"bins": np.flatnonzero(bad).tolist()})
    return fixed, True


def gradient_step(state: UnmixingState, spec_bf: ComplexSpectrogram, rule: IvaUpdateRule = "plain") -> UnmixingState:
    """更新式の1ステップ（学習率 state.eta、半減なし）

    plain では W⁻ᴴ を使うため、特異に近い W は先に ε·I で正則化して flags に残す。
    """
    _check_shapes(state, spec_bf)
    if spec_bf.frames < 1:
        raise ContractError("gradient_step needs at least one frame")
    X = _to_fmt(spec_bf.data)
    iteration = state.iterations + 1
    W, regularised = _guard(state.W, state.epsilon, iteration) if rule == "plain" else (state.W, False)
    W, after = _guard(_update(W, X, state.eta, state.epsilon, rule), state.epsilon, iteration)
    flags = state.flags + (f"regularised@{iteration}",) if regularised or after else state.flags
    return replace(state, W=W, iterations=iteration, flags=flags)


def _normalise_bins(X: np.ndarray) -> np.ndarray:
    """Scale each bin to per-bin amplitude sqrt(F) so the contrast's fixed point sits near unit scale.

    Minimal-distortion rescaling afterwards removes any per-bin scale, so outputs do not depend on it.
    """
    F = X.shape[0]
    power = np.sqrt(np.mean(np.abs(X) ** 2, axis=(1, 2)))
    peak = float(power.max()) if power.size else 0.0
    if peak <= 0.0:
        return X
    floor = np.maximum(power, peak * 1e-6)
    return X * (np.sqrt(F) / floor)[:, None, None]


def _iterate(W: np.ndarray, X: np.ndarray, *, eta: float, n_iter: int, tol: float, epsilon: float,
             max_halvings: int, rule: IvaUpdateRule, start_iteration: int = 0) -> Tuple[np.ndarray, int, List[str], List[float]]:
    flags: List[str] = []
    history = [objective(W, X)]
    done = 0
    for it in range(n_iter):
        iteration = start_iteration + it + 1
        step_eta = eta
        accepted: Optional[np.ndarray] = None
        for _ in range(max_halvings + 1):
            candidate = _update(W, X, step_eta, epsilon, rule)
            if not np.all(np.isfinite(candidate)):
                raise NumericalError("non-finite values during IVA update", iteration=iteration)
            candidate, regularised = _guard(candidate, epsilon, iteration)
            value = objective(candidate, X)
            if not np.isfinite(value):
                raise NumericalError("non-finite IVA objective", iteration=iteration)
            if value <= history[-1]:
                accepted = candidate
                if regularised:
                    flags.append(f"regularised@{iteration}")
                break
            step_eta *= 0.5
        if accepted is None:
            flags.append(f"stalled@{iteration}")
            break
        change = np.linalg.norm(accepted - W) / max(np.linalg.norm(W), epsilon)
        W = accepted
        history.append(value)
        done += 1
        if change < tol:
            break
    return W, done, flags, history


def minimal_distortion(W: np.ndarray, epsilon: float) -> np.ndarray:
    """W ← diag(W⁻¹)·W per bin."""
    W, _ = _guard(W, epsilon, -1)
    A = np.linalg.inv(W)
    d = np.diagonal(A, axis1=1, axis2=2)
    return d[:, :, None] * W


def zone_permutation(Y: np.ndarray, X: np.ndarray) -> List[int]:
    """Greedy max-correlation matching of |Y| channels to |X| channels; ties keep identity.

    Returns perm with perm[zone] = output channel assigned to that zone. Y, X: [F, M, T].
    """
    M = Y.shape[1]
    a = np.abs(Y).transpose(1, 0, 2).reshape(M, -1)
    b = np.abs(X).transpose(1, 0, 2).reshape(M, -1)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    corr = (a @ b.T) / np.maximum(np.outer(na, nb), 1e-30)
    candidates = sorted(
        ((corr[k, j], k, j) for k in range(M) for j in range(M)),
        key=lambda item: (-round(float(item[0]), 12), item[1] != item[2], item[1], item[2]),
    )
    perm = [-1] * M
    used = set()
    for _, k, j in candidates:
        if perm[j] == -1 and k not in used:
            perm[j] = k
            used.add(k)
    return perm


def _finalise(W_raw: np.ndarray, X: np.ndarray, epsilon: float, match_zones: bool) -> Tuple[np.ndarray, List[int]]:
    W = minimal_distortion(W_raw, epsilon)
    perm = list(range(W.shape[1]))
    if match_zones:
        perm = zone_permutation(W @ X, X)
        if perm != list(range(W.shape[1])):
            W = minimal_distortion(W_raw[:, perm, :], epsilon)
    return W, perm


def run_iva(spec_bf: ComplexSpectrogram, params: Optional[IvaParams] = None) -> Tuple[ComplexSpectrogram, UnmixingState]:
    """収束（‖ΔW‖_F/‖W‖_F < tol）または max_iter まで反復し、最小歪みスケーリングを適用する"""
    params = params or IvaParams()
    if spec_bf.frames < 1:
        raise ContractError("run_iva needs at least one frame")
    X = _to_fmt(spec_bf.data)
    state = init_identity(spec_bf.bins, spec_bf.channels, eta=params.eta, epsilon=params.epsilon)
    W_raw, done, flags, history = _iterate(
        state.W, _normalise_bins(X), eta=params.eta, n_iter=params.max_iter, tol=params.tol,
        epsilon=params.epsilon, max_halvings=params.max_halvings, rule=params.update,
    )
    W, perm = _finalise(W_raw, X, params.epsilon, params.match_zones)
    if perm != list(range(len(perm))):
        flags.append("permutation=" + ",".join(str(p) for p in perm))
    final = replace(state, W=W, iterations=done, flags=tuple(flags), objective_history=tuple(history))
    return spec_bf.replace(_from_fmt(W @ X)), final


class BlockOnlineIva:
    """ブロックオンラインIVA: 前ブロックのWから開始し、ブロックごとに inner_iters 回更新する

    ストリーミングと同じブロック境界でオフライン処理しても同じ結果になる。単一所有。
    """

    def __init__(self, bins: int, channels: int, params: Optional[BlockOnlineParams] = None) -> None:
        self.params = params or BlockOnlineParams()
        self.bins = bins
        self.channels = channels
        self.reset()

    def reset(self) -> None:
        self._W = init_identity(self.bins, self.channels).W
        self._pending: List[np.ndarray] = []
        self.blocks_done = 0
        self.iterations = 0
        self.flags: List[str] = []

    def latency_frames(self) -> int:
        return self.params.block_frames

    def push_frame(self, frame: np.ndarray) -> List[np.ndarray]:
        """frame [F × M] → 分離済みフレームのリスト（ブロックが揃うまで空）"""
        frame = np.asarray(frame)
        if frame.shape != (self.bins, self.channels):
            raise ContractError(f"expected a [{self.bins} x {self.channels}] frame, got {frame.shape}")
        self._pending.append(frame)
        if len(self._pending) < self.params.block_frames:
            return []
        return self._process()

    def flush(self) -> List[np.ndarray]:
        return self._process() if self._pending else []

    def _process(self) -> List[np.ndarray]:
        block = np.stack(self._pending)  # [T, F, M]
        self._pending = []
        X = _to_fmt(block)
        p = self.params
        self._W, done, flags, _ = _iterate(
            self._W, _normalise_bins(X), eta=p.eta, n_iter=p.inner_iters, tol=0.0,
            epsilon=p.epsilon, max_halvings=p.max_halvings, rule=p.update, start_iteration=self.iterations,
        )
        self.iterations += done
        self.flags.extend(flags)
        W, _ = _finalise(self._W, X, p.epsilon, p.match_zones)
        self.blocks_done += 1
        return list(_from_fmt(W @ X))

    def state(self) -> UnmixingState:
        return UnmixingState(W=self._W.copy(), eta=self.params.eta, iterations=self.iterations,
                             epsilon=self.params.epsilon, flags=tuple(self.flags))


def iter_block_online(frames: Iterable[np.ndarray], bins: int, channels: int,
                      params: Optional[BlockOnlineParams] = None) -> Iterator[np.ndarray]:
    """フレーム列 → 分離済みフレーム列（レイテンシ block_frames·hop）"""
    online = BlockOnlineIva(bins, channels, params)
    for frame in frames:
        yield from online.push_frame(frame)
    yield from online.flush()


def run_block_online(spec_bf: ComplexSpectrogram, params: Optional[BlockOnlineParams] = None) -> ComplexSpectrogram:
    """ストリーミングと同じブロック分割でスペクトログラム全体を処理する"""
    frames = list(iter_block_online(iter(spec_bf.data), spec_bf.bins, spec_bf.channels, params))
    return spec_bf.replace(np.stack(frames) if frames else spec_bf.data[:0])


def block_latency_seconds(params: BlockOnlineParams, hop: int, sample_rate: int) -> float:
    """例: 62フレーム × 16 ms = 0.992 s"""
    return params.block_frames * hop / float(sample_rate)
