"""
重みの表・乱数初期化・重みファイル（DSEPW1 コンテナ）の読み書き

ファイル形式: マジック b"DSEPW1\\0\\0"（8バイト）、リトルエンディアン u32 のヘッダ長、
UTF-8 JSON ヘッダ {fingerprint, config, tensors: 名前 → {shape, dtype "f32", offset}}、
続いて表の順にリトルエンディアン float32 のペイロード（offset はペイロード先頭からのバイト位置）。
"""
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from src.exceptions import (
    BadMagicError,
    FingerprintMismatchError,
    ShapeMismatchError,
    TruncatedWeightsError,
    WeightLoadError,
)
from src.schemas import ModelConfig

MAGIC = b"DSEPW1\0\0"
_HEADER_LEN = struct.Struct("<I")
OUT_PLANES = 2


@dataclass(frozen=True)
class ParamSpec:
    shape: Tuple[int, ...]
    fan_in: int
    kind: str = "weight"  # weight | bias | norm_gain | norm_bias | prelu

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def encoder_inputs(config: ModelConfig) -> List[Tuple[str, int]]:
    """(エンコーダ名, 入力面数)。dual はスペクトル用と空間用の2系統で重みを共有しない"""
    mode = config.encoder_mode
    if mode == "dual":
        return [("spec_enc", 2), ("spat_enc", 2)]
    if mode == "spectral_only":
        return [("spec_enc", 2)]
    if mode == "spatial_only":
        return [("spat_enc", 2)]
    return [("enc", 4)]


def decoder_channels(config: ModelConfig) -> List[int]:
    """[64, 48, 24, 12, 12, 2]"""
    return list(reversed(config.enc_channels)) + [OUT_PLANES]


def _tfcm(table: "OrderedDict[str, ParamSpec]", prefix: str, c: int) -> None:
    layers = (("pw", (c, c, 1, 1), c), ("fconv", (c, 1, 3, 1), 3), ("tconv", (c, c, 1, 3), 3 * c))
    for name, shape, fan_in in layers:
        table[f"{prefix}.{name}.weight"] = ParamSpec(shape, fan_in)
        table[f"{prefix}.{name}.bias"] = ParamSpec((c,), fan_in, "bias")
        table[f"{prefix}.{name}.norm.weight"] = ParamSpec((c,), c, "norm_gain")
        table[f"{prefix}.{name}.norm.bias"] = ParamSpec((c,), c, "norm_bias")
        table[f"{prefix}.{name}.act"] = ParamSpec((c,), c, "prelu")


def _gru(table: "OrderedDict[str, ParamSpec]", prefix: str, inputs: int, hidden: int) -> None:
    table[f"{prefix}.weight_ih"] = ParamSpec((3 * hidden, inputs), hidden)
    table[f"{prefix}.weight_hh"] = ParamSpec((3 * hidden, hidden), hidden)
    table[f"{prefix}.bias_ih"] = ParamSpec((3 * hidden,), hidden, "bias")
    table[f"{prefix}.bias_hh"] = ParamSpec((3 * hidden,), hidden, "bias")


def _linear(table: "OrderedDict[str, ParamSpec]", prefix: str, inputs: int, outputs: int) -> None:
    table[f"{prefix}.weight"] = ParamSpec((outputs, inputs), inputs)
    table[f"{prefix}.bias"] = ParamSpec((outputs,), inputs, "bias")


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, ParamSpec]":
    """設定が要求する全パラメータの表（ファイル内の並び順でもある）"""
    table: "OrderedDict[str, ParamSpec]" = OrderedDict()
    kf, kt = config.kernel
    ch = config.enc_channels
    for name, planes in encoder_inputs(config):
        for b, c in enumerate(ch):
            c_in = planes if b == 0 else ch[b - 1]
            table[f"{name}.{b}.conv.weight"] = ParamSpec((2 * c, c_in, kf, kt), c_in * kf * kt)
            table[f"{name}.{b}.conv.bias"] = ParamSpec((2 * c,), c_in * kf * kt, "bias")
            for layer in range(config.tfcm_layers_per_block):
                _tfcm(table, f"{name}.{b}.tfcm.{layer}", c)

    d, h = ch[-1], config.hidden
    if config.variant == "L" and config.encoder_mode == "dual":
        _linear(table, "fusion", 2 * d, d)

    for i in range(config.triple_path_layers):
        _gru(table, f"tp.{i}.frnn.fwd", d, h)
        _gru(table, f"tp.{i}.frnn.bwd", d, h)
        _linear(table, f"tp.{i}.frnn.proj", 2 * h, d)
        _gru(table, f"tp.{i}.srnn.fwd", d, h)
        _linear(table, f"tp.{i}.srnn.proj", h, d)
        _gru(table, f"tp.{i}.trnn.fwd", d, h)
        if not config.causal:
            _gru(table, f"tp.{i}.trnn.bwd", d, h)
        _linear(table, f"tp.{i}.trnn.proj", h if config.causal else 2 * h, d)

    dc = decoder_channels(config)
    for b in range(config.blocks):
        c_in, c_out = dc[b], dc[b + 1]
        for layer in range(config.tfcm_layers_per_block):
            _tfcm(table, f"dec.{b}.tfcm.{layer}", c_in)
        table[f"dec.{b}.conv.weight"] = ParamSpec((c_in, 2 * c_out, kf, kt), c_in * kf * kt)
        table[f"dec.{b}.conv.bias"] = ParamSpec((2 * c_out,), c_in * kf * kt, "bias")
    return table


@dataclass(eq=False)
class WeightStore:
    """名前付き float32 テンソルと、それを要求した設定"""

    config: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def validate(self) -> None:
        """欠落・余分・形状違いを ShapeMismatchError にする"""
        table = parameter_shapes(self.config)
        missing = [k for k in table if k not in self.tensors]
        extra = [k for k in self.tensors if k not in table]
        wrong = [k for k, spec in table.items() if k in self.tensors and tuple(self.tensors[k].shape) != spec.shape]
        if missing or extra or wrong:
            raise ShapeMismatchError(
                f"weights do not match the model config ({len(missing)} missing, {len(extra)} extra, {len(wrong)} misshapen)",
                detail={"missing": missing[:10], "extra": extra[:10], "wrong_shape": wrong[:10]},
            )

    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def count_params(source: Union[ModelConfig, WeightStore]) -> int:
    if isinstance(source, WeightStore):
        return source.size()
    return int(sum(spec.size for spec in parameter_shapes(source).values()))


def init_random(config: ModelConfig, seed: int = 0) -> WeightStore:
    """一様分布 U(−a, a), a = 1/sqrt(fan_in)。LN は γ=1, β=0、PReLU は 0.25"""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, spec in parameter_shapes(config).items():
        if spec.kind == "norm_gain":
            value = np.ones(spec.shape, dtype=np.float32)
        elif spec.kind == "norm_bias":
            value = np.zeros(spec.shape, dtype=np.float32)
        elif spec.kind == "prelu":
            value = np.full(spec.shape, 0.25, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(spec.fan_in)
            value = rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)
        tensors[name] = value
    return WeightStore(config, tensors)


def write_container(path: str, tensors: Mapping[str, np.ndarray], *, fingerprint: str,
                    config: Optional[Dict[str, Any]] = None) -> None:
    table: Dict[str, Dict[str, Any]] = {}
    offset = 0
    payloads = []
    for name, value in tensors.items():
        data = np.ascontiguousarray(value, dtype="<f4")
        table[name] = {"shape": list(data.shape), "dtype": "f32", "offset": offset}
        payloads.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"fingerprint": fingerprint, "config": config, "tensors": table},
                        ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER_LEN.pack(len(header)))
        f.write(header)
        for chunk in payloads:
            f.write(chunk)


def read_container(path: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        if len(blob) < len(MAGIC) and MAGIC.startswith(blob) and blob:
            raise TruncatedWeightsError(f"{path}: file ends inside the magic bytes")
        raise BadMagicError(f"{path}: not a DSEPW1 weight file", detail={"path": path})
    start = len(MAGIC) + _HEADER_LEN.size
    if len(blob) < start:
        raise TruncatedWeightsError(f"{path}: file ends before the header length")
    (header_len,) = _HEADER_LEN.unpack_from(blob, len(MAGIC))
    if len(blob) < start + header_len:
        raise TruncatedWeightsError(f"{path}: header needs {header_len} bytes", detail={"path": path})
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightLoadError(f"{path}: header is not valid JSON", detail={"path": path}) from exc
    payload = memoryview(blob)[start + header_len :]
    tensors: Dict[str, np.ndarray] = {}
    for name, entry in header.get("tensors", {}).items():
        if entry.get("dtype") != "f32":
            raise WeightLoadError(f"{path}: tensor {name} has unsupported dtype {entry.get('dtype')}")
        shape = tuple(int(v) for v in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        end = offset + 4 * count
        if end > len(payload):
            raise TruncatedWeightsError(f"{path}: tensor {name} runs past the end of the file",
                                        detail={"tensor": name, "needed": end, "available": len(payload)})
        data = np.frombuffer(payload[offset:end], dtype="<f4").astype(np.float32)
        tensors[name] = data.reshape(shape)
    return header, tensors


def save_weights(store: WeightStore, path: str) -> None:
    """表の順に書く。load_weights で全テンソルがビット単位で戻る"""
    order = list(parameter_shapes(store.config))
    ordered = {name: store.tensors[name] for name in order if name in store.tensors}
    ordered.update({k: v for k, v in store.tensors.items() if k not in ordered})
    write_container(path, ordered, fingerprint=store.fingerprint, config=store.config.model_dump(mode="json"))


def load_weights(path: str, expected: Optional[ModelConfig] = None) -> WeightStore:
    header, tensors = read_container(path)
    try:
        config = ModelConfig.model_validate(header.get("config") or {})
    except ValueError as exc:
        raise WeightLoadError(f"{path}: header config is invalid: {exc}", detail={"path": path}) from exc
    if header.get("fingerprint") != config.fingerprint():
        raise FingerprintMismatchError(f"{path}: stored fingerprint does not match the stored config",
                                       detail={"path": path})
    if expected is not None and expected.fingerprint() != config.fingerprint():
        raise FingerprintMismatchError(
            f"{path}: weights were made for a different model config",
            detail={"path": path, "stored": config.model_dump(mode="json"), "expected": expected.model_dump(mode="json")},
        )
    store = WeightStore(config, tensors)
    store.validate()
    return store
