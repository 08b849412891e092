"""
推論専用のレイヤ群（numpy, float32）

テンソルは [time T, freq F, zone Z, feat C]。ゾーン軸はバッチとして扱い、重みは全ゾーンで共有する。
時間方向に広がりを持つ畳み込みは cache（dict）を渡すとストリーミング動作になり、
直前の (kt−1)·dt フレームを cache[key] に保持する。cache なしの因果畳み込みは左側ゼロ詰めで、
ゼロ初期化した cache から始めた場合と同じ値になる。
"""
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.exceptions import ContractError
from src.nn.tensors import TensorLike, as_array, like

Params = Mapping[str, np.ndarray]
Cache = Optional[Dict[str, np.ndarray]]

LN_EPS = 1e-5


def sub(params: Params, prefix: str) -> Dict[str, np.ndarray]:
    """prefix. で始まるパラメータを prefix を外して取り出す"""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def freq_padding(f_in: int, kernel: int, stride: int, dilation: int = 1) -> Tuple[int, int, int]:
    """(出力サイズ ⌈F/s⌉, 左パディング, 右パディング)"""
    f_out = -(-f_in // stride)
    total = max((f_out - 1) * stride + (kernel - 1) * dilation + 1 - f_in, 0)
    return f_out, total // 2, total - total // 2


def _time_context(x: np.ndarray, span: int, causal: bool, cache: Cache, key: str) -> np.ndarray:
    if span == 0:
        return x
    if cache is not None:
        if not causal:
            raise ContractError("streaming caches need causal layers")
        ctx = cache.get(key)
        if ctx is None:
            ctx = np.zeros((span,) + x.shape[1:], dtype=np.float32)
        elif ctx.shape != (span,) + x.shape[1:]:
            raise ContractError(f"cache {key!r} has shape {ctx.shape}, expected {(span,) + x.shape[1:]}")
        ext = np.concatenate([ctx, x], axis=0)
        cache[key] = ext[-span:].copy()
        return ext
    left = span if causal else span // 2
    return np.pad(x, ((left, span - left), (0, 0), (0, 0), (0, 0)))


def conv2d_tf(x: TensorLike, params: Params, *, stride: Tuple[int, int] = (1, 1),
              dilation: Tuple[int, int] = (1, 1), causal: bool = True,
              cache: Cache = None, key: str = "") -> TensorLike:
    """2次元畳み込み（周波数 × 時間）。weight [C_out, C_in, kf, kt]

    周波数軸は ⌈F/sf⌉ 出力になるよう対称にパディング、時間軸は (kt−1)·dt を因果なら左のみ、
    非因果なら左右に分けて詰める。
    """
    arr = as_array(x)
    weight = params["weight"]
    bias = params.get("bias")
    c_out, c_in, kf, kt = weight.shape
    if arr.shape[-1] != c_in:
        raise ContractError(f"conv expects {c_in} input features, got {arr.shape[-1]}")
    sf, st = stride
    df, dt = dilation
    if st != 1:
        raise ContractError("time stride must be 1")
    frames = arr.shape[0]
    xt = _time_context(arr, (kt - 1) * dt, causal, cache, key)
    f_out, left, right = freq_padding(arr.shape[1], kf, sf, df)
    if left or right:
        xt = np.pad(xt, ((0, 0), (left, right), (0, 0), (0, 0)))

    if kf == 1 and kt == 1 and sf == 1:
        y = xt @ weight[:, :, 0, 0].T
    else:
        cols = []
        for i in range(kf):
            f0 = i * df
            for j in range(kt):
                t0 = j * dt
                cols.append(xt[t0 : t0 + frames, f0 : f0 + sf * (f_out - 1) + 1 : sf])
        matrix = weight.transpose(2, 3, 1, 0).reshape(kf * kt * c_in, c_out)
        y = np.concatenate(cols, axis=-1) @ matrix
    if bias is not None:
        y = y + bias
    return like(x, y.astype(np.float32, copy=False))


def depthwise_conv2d_tf(x: TensorLike, params: Params, *, dilation: Tuple[int, int] = (1, 1),
                        causal: bool = True, cache: Cache = None, key: str = "") -> TensorLike:
    """チャネルごとの畳み込み。weight [C, 1, kf, kt]"""
    arr = as_array(x)
    weight = params["weight"]
    bias = params.get("bias")
    c, _, kf, kt = weight.shape
    if arr.shape[-1] != c:
        raise ContractError(f"depthwise conv expects {c} features, got {arr.shape[-1]}")
    df, dt = dilation
    frames, freqs = arr.shape[:2]
    xt = _time_context(arr, (kt - 1) * dt, causal, cache, key)
    _, left, right = freq_padding(freqs, kf, 1, df)
    if left or right:
        xt = np.pad(xt, ((0, 0), (left, right), (0, 0), (0, 0)))
    y = np.zeros(arr.shape, dtype=np.float32)
    for i in range(kf):
        for j in range(kt):
            y += xt[j * dt : j * dt + frames, i * df : i * df + freqs] * weight[:, 0, i, j]
    if bias is not None:
        y += bias
    return like(x, y)


def conv_transpose_tf(x: TensorLike, params: Params, *, stride: Tuple[int, int] = (2, 1), out_freq: int,
                      crop_left: int, causal: bool = True, cache: Cache = None, key: str = "") -> TensorLike:
    """周波数方向の転置畳み込み。weight [C_in, C_out, kf, kt]

    全長 (F−1)·sf + kf に散布してから、対応するダウンサンプル層の左パディング分を切り落とす。
    """
    arr = as_array(x)
    weight = params["weight"]
    bias = params.get("bias")
    c_in, c_out, kf, kt = weight.shape
    if arr.shape[-1] != c_in:
        raise ContractError(f"transposed conv expects {c_in} input features, got {arr.shape[-1]}")
    sf = stride[0]
    frames, f_in, zones = arr.shape[:3]
    full = (f_in - 1) * sf + kf
    if crop_left + out_freq > full:
        raise ContractError(f"cannot crop {out_freq} bins at offset {crop_left} from {full}")
    xt = _time_context(arr, kt - 1, causal, cache, key)
    y = np.zeros((frames, full, zones, c_out), dtype=np.float32)
    for j in range(kt):
        xj = xt[j : j + frames]
        for i in range(kf):
            y[:, i : i + sf * (f_in - 1) + 1 : sf] += xj @ weight[:, :, i, j]
    y = y[:, crop_left : crop_left + out_freq]
    if bias is not None:
        y = y + bias
    return like(x, np.ascontiguousarray(y, dtype=np.float32))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """特徴軸（最後の軸）で正規化"""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + eps) * gamma + beta).astype(np.float32, copy=False)


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, alpha * x).astype(np.float32, copy=False)


def _norm_act(h: np.ndarray, params: Params) -> np.ndarray:
    return prelu(layer_norm(h, params["norm.weight"], params["norm.bias"]), params["act"])


def tfcm_forward(x: TensorLike, params: Params, dilation: int, causal: bool = True,
                 cache: Cache = None, key: str = "") -> TensorLike:
    """点畳み込み → 周波数方向の膨張畳み込み（k=3） → 時間方向の膨張畳み込み（k=3）、各 LN + PReLU、残差"""
    arr = as_array(x)
    pw = sub(params, "pw")
    h = _norm_act(as_array(conv2d_tf(arr, pw, causal=causal)), pw)
    fconv = sub(params, "fconv")
    h = _norm_act(as_array(depthwise_conv2d_tf(h, fconv, dilation=(dilation, 1), causal=causal)), fconv)
    tconv = sub(params, "tconv")
    h = as_array(conv2d_tf(h, tconv, dilation=(1, dilation), causal=causal, cache=cache, key=f"{key}.tconv"))
    h = _norm_act(h, tconv)
    return like(x, arr + h)


def _gate(y: np.ndarray) -> np.ndarray:
    half = y.shape[-1] // 2
    return (y[..., :half] * expit(y[..., half:])).astype(np.float32, copy=False)


def gated_block_forward(x: TensorLike, params: Params, direction: str, causal: bool = True, *,
                        dilations: Sequence[int] = (1, 2, 4, 8), stride: Tuple[int, int] = (2, 1),
                        out_freq: Optional[int] = None, crop_left: int = 0,
                        cache: Cache = None, key: str = "") -> TensorLike:
    """down: ゲート付きストライド畳み込み → TFCM × len(dilations)
    up:   TFCM × len(dilations) → ゲート付き転置畳み込み

    up は down の順序を反転した鏡像で、TFCM は入力側（転置畳み込みの前）のチャネル数で動く。
    最終デコーダブロックではゲート付き転置畳み込みの出力がそのままマスクになる。

    ゲート: 畳み込みが 2C チャネルを出し、content ⊙ sigmoid(gate)。
    """
    arr = as_array(x)
    conv = sub(params, "conv")
    if direction == "down":
        h = _gate(as_array(conv2d_tf(arr, conv, stride=stride, causal=causal, cache=cache, key=f"{key}.conv")))
        for layer, d in enumerate(dilations):
            h = as_array(tfcm_forward(h, sub(params, f"tfcm.{layer}"), d, causal, cache, f"{key}.tfcm.{layer}"))
    elif direction == "up":
        if out_freq is None:
            raise ContractError("an up block needs the target frequency size")
        h = arr
        for layer, d in enumerate(dilations):
            h = as_array(tfcm_forward(h, sub(params, f"tfcm.{layer}"), d, causal, cache, f"{key}.tfcm.{layer}"))
        h = _gate(as_array(conv_transpose_tf(h, conv, stride=stride, out_freq=out_freq, crop_left=crop_left,
                                             causal=causal, cache=cache, key=f"{key}.conv")))
    else:
        raise ContractError(f"direction must be 'down' or 'up', got {direction!r}")
    return like(x, h)


def gru_sequence(x: np.ndarray, params: Params, h0: Optional[np.ndarray] = None,
                 reverse: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """GRU over axis 1 of x [B, L, In] → (outputs [B, L, H], last hidden [B, H]).

    r = σ(W_ir x + b_ir + W_hr h + b_hr), z = σ(W_iz x + b_iz + W_hz h + b_hz),
    n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn)), h' = (1 − z) ⊙ n + z ⊙ h
    """
    w_ih, w_hh = params["weight_ih"], params["weight_hh"]
    b_ih, b_hh = params["bias_ih"], params["bias_hh"]
    hidden = w_hh.shape[1]
    batch, steps = x.shape[:2]
    gi = x @ w_ih.T + b_ih
    h = np.zeros((batch, hidden), dtype=np.float32) if h0 is None else h0.astype(np.float32)
    out = np.empty((batch, steps, hidden), dtype=np.float32)
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gh = h @ w_hh.T + b_hh
        g = gi[:, t]
        r = expit(g[:, :hidden] + gh[:, :hidden])
        z = expit(g[:, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])
        n = np.tanh(g[:, 2 * hidden :] + r * gh[:, 2 * hidden :])
        h = ((1.0 - z) * n + z * h).astype(np.float32)
        out[:, t] = h
    return out, h


def _linear(x: np.ndarray, params: Params) -> np.ndarray:
    return (x @ params["weight"].T + params["bias"]).astype(np.float32, copy=False)


def _rnn(x: np.ndarray, params: Params, bidirectional: bool, h0: Optional[np.ndarray] = None):
    fwd, last = gru_sequence(x, sub(params, "fwd"), h0)
    if not bidirectional:
        return _linear(fwd, sub(params, "proj")), last
    bwd, _ = gru_sequence(x, sub(params, "bwd"), reverse=True)
    return _linear(np.concatenate([fwd, bwd], axis=-1), sub(params, "proj")), last


def triple_path_forward(x: TensorLike, params: Params, causal: bool = True,
                        state: Optional[Dict[str, np.ndarray]] = None, key: str = "") -> TensorLike:
    """
    R_F = F-RNN_bi(R) + R      （周波数方向、T×Z でバッチ）
    R_S = S-RNN(R_F) + R       （ゾーン方向、T×F でバッチ）
    R_T = T-RNN(R_S) + R       （時間方向、F×Z でバッチ。因果なら単方向で state[key] に隠れ状態を保持）
    """
    arr = as_array(x)
    frames, freqs, zones, feat = arr.shape

    xf = arr.transpose(0, 2, 1, 3).reshape(frames * zones, freqs, feat)
    hf, _ = _rnn(xf, sub(params, "frnn"), bidirectional=True)
    r_f = hf.reshape(frames, zones, freqs, feat).transpose(0, 2, 1, 3) + arr

    xs = r_f.reshape(frames * freqs, zones, feat)
    hs, _ = _rnn(xs, sub(params, "srnn"), bidirectional=False)
    r_s = hs.reshape(frames, freqs, zones, feat) + arr

    xt = r_s.transpose(1, 2, 0, 3).reshape(freqs * zones, frames, feat)
    if causal:
        h0 = state.get(key) if state is not None else None
        ht, last = _rnn(xt, sub(params, "trnn"), bidirectional=False, h0=h0)
        if state is not None:
            state[key] = last
    else:
        if state is not None:
            raise ContractError("a bidirectional time recurrence cannot stream")
        ht, _ = _rnn(xt, sub(params, "trnn"), bidirectional=True)
    out = ht.reshape(freqs, zones, frames, feat).transpose(2, 0, 1, 3) + arr
    return like(x, np.ascontiguousarray(out, dtype=np.float32))
