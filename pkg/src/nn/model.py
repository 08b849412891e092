"""
DualSep ネットワークの推論

スペクトルエンコーダ（Y_bf）と空間エンコーダ（Y_iva）→ 融合（S: 加算 / L: 連結 + 線形）
→ 三経路モデリング × 2 → ミラー構成のデコーダ → ゾーンごとの複素マスク → マスク ⊙ Y_bf
"""
import weakref
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.dsp.stft import ComplexSpectrogram
from src.exceptions import ContractError, FingerprintMismatchError
from src.nn.layers import freq_padding, gated_block_forward, sub, triple_path_forward
from src.nn.tensors import complex_mask, spectra_planes
from src.nn.weights import WeightStore, decoder_channels, encoder_inputs
from src.schemas import ModelConfig

TCONV_KERNEL = 3


def stream_state_shapes(config: ModelConfig) -> Tuple[Dict[str, Tuple[int, ...]], Dict[str, Tuple[int, ...]]]:
    """(畳み込みの時間キャッシュ, T-RNN の隠れ状態) の形状。発話長には依存しない"""
    kf, kt = config.kernel
    chain = config.freq_chain()
    ch = config.enc_channels
    z = config.zones
    caches: Dict[str, Tuple[int, ...]] = {}
    for name, planes in encoder_inputs(config):
        for b, c in enumerate(ch):
            c_in = planes if b == 0 else ch[b - 1]
            if kt > 1:
                caches[f"{name}.{b}.conv"] = (kt - 1, chain[b], z, c_in)
            for layer, d in enumerate(config.tfcm_dilations):
                caches[f"{name}.{b}.tfcm.{layer}.tconv"] = ((TCONV_KERNEL - 1) * d, chain[b + 1], z, c)
    dc = decoder_channels(config)
    for b in range(config.blocks):
        f_in = chain[config.blocks - b]
        for layer, d in enumerate(config.tfcm_dilations):
            caches[f"dec.{b}.tfcm.{layer}.tconv"] = ((TCONV_KERNEL - 1) * d, f_in, z, dc[b])
        if kt > 1:
            caches[f"dec.{b}.conv"] = (kt - 1, f_in, z, dc[b])
    hidden = {f"tp.{i}.trnn": (chain[-1] * z, config.hidden) for i in range(config.triple_path_layers)}
    return caches, hidden


@dataclass(eq=False)
class StreamState:
    """1ストリーム分の状態（単一所有）。reset() で全てゼロに戻る"""

    config: ModelConfig
    caches: Dict[str, np.ndarray] = field(default_factory=dict)
    hidden: Dict[str, np.ndarray] = field(default_factory=dict)
    frames: int = 0

    def __post_init__(self) -> None:
        if not self.caches and not self.hidden:
            self.reset()

    def reset(self) -> None:
        cache_shapes, hidden_shapes = stream_state_shapes(self.config)
        self.caches = {k: np.zeros(s, dtype=np.float32) for k, s in cache_shapes.items()}
        self.hidden = {k: np.zeros(s, dtype=np.float32) for k, s in hidden_shapes.items()}
        self.frames = 0

    def nbytes(self) -> int:
        return int(sum(a.nbytes for a in self.caches.values()) + sum(a.nbytes for a in self.hidden.values()))


class DualSepNet:
    """WeightStore から一度だけ準備する推論器。入力が異なれば並行に呼んでよい"""

    def __init__(self, store: WeightStore) -> None:
        store.validate()
        self.config = store.config
        cfg = self.config
        self.chain = cfg.freq_chain()
        self.dilations = tuple(cfg.tfcm_dilations)
        self.stride = tuple(cfg.stride)
        tensors = store.tensors
        self._encoders = {name: [sub(tensors, f"{name}.{b}") for b in range(cfg.blocks)]
                          for name, _ in encoder_inputs(cfg)}
        self._decoder = [sub(tensors, f"dec.{b}") for b in range(cfg.blocks)]
        self._bottleneck = [sub(tensors, f"tp.{i}") for i in range(cfg.triple_path_layers)]
        self._fusion = sub(tensors, "fusion")
        self._crops = [freq_padding(self.chain[cfg.blocks - 1 - b], cfg.kernel[0], cfg.stride[0])[1]
                       for b in range(cfg.blocks)]

    def new_state(self) -> StreamState:
        return StreamState(self.config)

    def _encode(self, name: str, x: np.ndarray, caches: Optional[Dict[str, np.ndarray]]) -> np.ndarray:
        for b, params in enumerate(self._encoders[name]):
            x = gated_block_forward(x, params, "down", self.config.causal, dilations=self.dilations,
                                    stride=self.stride, cache=caches, key=f"{name}.{b}")
        return x

    def _decode(self, x: np.ndarray, caches: Optional[Dict[str, np.ndarray]]) -> np.ndarray:
        blocks = self.config.blocks
        for b, params in enumerate(self._decoder):
            x = gated_block_forward(x, params, "up", self.config.causal, dilations=self.dilations,
                                    stride=self.stride, out_freq=self.chain[blocks - 1 - b],
                                    crop_left=self._crops[b], cache=caches, key=f"dec.{b}")
        return x

    def forward_planes(self, feat_bf: np.ndarray, feat_iva: np.ndarray,
                       state: Optional[StreamState] = None) -> np.ndarray:
        """[T × F × Z × 2] 2組 → マスク面 [T × F × Z × 2]"""
        cfg = self.config
        caches = state.caches if state is not None else None
        hidden = state.hidden if state is not None else None
        mode = cfg.encoder_mode
        if mode == "dual":
            spectral = self._encode("spec_enc", feat_bf, caches)
            spatial = self._encode("spat_enc", feat_iva, caches)
            if cfg.variant == "S":
                latent = spectral + spatial
            else:
                joined = np.concatenate([spectral, spatial], axis=-1)
                latent = (joined @ self._fusion["weight"].T + self._fusion["bias"]).astype(np.float32)
        elif mode == "spectral_only":
            latent = self._encode("spec_enc", feat_bf, caches)
        elif mode == "spatial_only":
            latent = self._encode("spat_enc", feat_iva, caches)
        else:
            latent = self._encode("enc", np.concatenate([feat_bf, feat_iva], axis=-1), caches)
        for i, params in enumerate(self._bottleneck):
            latent = triple_path_forward(latent, params, cfg.causal, state=hidden, key=f"tp.{i}.trnn")
        return self._decode(latent, caches)

    def _check(self, bf: np.ndarray, iva: np.ndarray) -> None:
        cfg = self.config
        if bf.shape != iva.shape:
            raise ContractError(f"beamformed {bf.shape} and IVA {iva.shape} spectra differ in shape")
        if bf.shape[-2:] != (cfg.freq_bins, cfg.zones):
            raise ContractError(
                f"model expects [T x {cfg.freq_bins} x {cfg.zones}] spectra, got {bf.shape}",
                detail={"expected": [cfg.freq_bins, cfg.zones], "actual": list(bf.shape)},
            )

    def forward(self, spec_bf: ComplexSpectrogram, spec_iva: ComplexSpectrogram) -> Tuple[np.ndarray, ComplexSpectrogram]:
        """(masks complex64 [T × F × M], separated)。separated_i = mask_i ⊙ Y_bf,i"""
        self._check(spec_bf.data, spec_iva.data)
        planes = self.forward_planes(spectra_planes(spec_bf.data), spectra_planes(spec_iva.data))
        masks = complex_mask(planes)
        return masks, spec_bf.replace(masks * spec_bf.data)

    def process_chunk(self, frames_bf: np.ndarray, frames_iva: np.ndarray, state: StreamState) -> np.ndarray:
        """連続する T フレーム [T × F × M] を状態付きで処理し、分離済みフレームを返す"""
        if not self.config.causal:
            raise ContractError("streaming needs a causal model config")
        if state.config.fingerprint() != self.config.fingerprint():
            raise ContractError("stream state was created for a different model config")
        bf = np.asarray(frames_bf)
        iva = np.asarray(frames_iva)
        self._check(bf, iva)
        planes = self.forward_planes(spectra_planes(bf), spectra_planes(iva), state)
        state.frames += bf.shape[0]
        return (complex_mask(planes) * bf).astype(np.complex64)

    def step(self, frame_bf: np.ndarray, frame_iva: np.ndarray, state: StreamState) -> np.ndarray:
        """1フレーム [F × M] → 分離済み1フレーム"""
        return self.process_chunk(np.asarray(frame_bf)[None], np.asarray(frame_iva)[None], state)[0]


_PREPARED: "weakref.WeakKeyDictionary[WeightStore, DualSepNet]" = weakref.WeakKeyDictionary()


def prepare(weights: WeightStore, config: Optional[ModelConfig] = None) -> DualSepNet:
    if config is not None and config.fingerprint() != weights.fingerprint:
        raise FingerprintMismatchError(
            "weights were made for a different model config",
            detail={"weights": weights.config.model_dump(mode="json"), "config": config.model_dump(mode="json")},
        )
    net = _PREPARED.get(weights)
    if net is None:
        net = DualSepNet(weights)
        _PREPARED[weights] = net
    return net


def model_forward(spec_bf: ComplexSpectrogram, spec_iva: ComplexSpectrogram, weights: WeightStore,
                  config: ModelConfig) -> Tuple[np.ndarray, ComplexSpectrogram]:
    return prepare(weights, config).forward(spec_bf, spec_iva)


def model_step(frame_bf: np.ndarray, frame_iva: np.ndarray, state: StreamState, weights: WeightStore,
               config: ModelConfig) -> np.ndarray:
    if not config.causal:
        raise ContractError("model_step needs a causal model config")
    return prepare(weights, config).step(frame_bf, frame_iva, state)


def describe_shapes(config: ModelConfig, frames: int) -> List[Dict[str, Any]]:
    """各段のテンソル形状 [T, F, Z, C]"""
    chain = config.freq_chain()
    z = config.zones
    ch = config.enc_channels
    rows: List[Dict[str, Any]] = []
    for name, planes in encoder_inputs(config):
        rows.append({"stage": f"{name}.input", "shape": [frames, chain[0], z, planes]})
        for b, c in enumerate(ch):
            rows.append({"stage": f"{name}.{b}", "shape": [frames, chain[b + 1], z, c]})
    rows.append({"stage": "bottleneck", "shape": [frames, chain[-1], z, config.hidden]})
    dc = decoder_channels(config)
    for b in range(config.blocks):
        rows.append({"stage": f"dec.{b}", "shape": [frames, chain[config.blocks - 1 - b], z, dc[b + 1]]})
    rows.append({"stage": "mask", "shape": [frames, chain[0], z]})
    return rows
