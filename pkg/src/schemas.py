"""
設定オブジェクトの定義とバリデーションを行うスキーマモジュール
パイプライン・データセット・評価・ベンチの設定をPydanticモデルで定義
"""
import hashlib
import json
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.signal import check_COLA, get_window

PIPELINE_SAMPLE_RATE = 16000
SPEED_OF_SOUND = 343.0


class StrictBaseModel(BaseModel):
    """厳密なバリデーションを行うベースモデル（追加フィールドを禁止）"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    def fingerprint(self) -> str:
        """正規化したJSONのSHA-256"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChannelLayout(StrictBaseModel):
    """M個のスピーチゾーン × P本のマイク（ゾーン優先の並び）"""
    zones: int = Field(6, ge=1, description="スピーチゾーン数 M")
    mics_per_zone: int = Field(4, ge=1, description="ゾーンごとのマイク数 P")

    @property
    def raw_channels(self) -> int:
        return self.zones * self.mics_per_zone

    def channel_index(self, zone: int, mic: int) -> int:
        return zone * self.mics_per_zone + mic


class StftConfig(StrictBaseModel):
    """STFT設定（既定: 512点FFT、32 ms Hann窓、16 msシフト）"""
    fft_size: int = Field(512, gt=0)
    win_length: int = Field(512, gt=0)
    hop: int = Field(256, gt=0)
    window: Literal["hann"] = "hann"

    @model_validator(mode="after")
    def _check_geometry(self) -> "StftConfig":
        if not (self.hop <= self.win_length <= self.fft_size):
            raise ValueError("require hop <= win_length <= fft_size")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not check_COLA(get_window(self.window, self.win_length), self.win_length, self.win_length - self.hop):
            raise ValueError(f"{self.window} window with hop {self.hop} violates constant overlap-add")
        return self

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


class SteeringSpec(StrictBaseModel):
    """1ゾーン分の遅延和ビームフォーマ設定"""
    delays: List[float] = Field(default_factory=lambda: [0.0] * 4, description="マイクごとの遅延 τ_p [秒]")
    gain_norm: Literal["1/P", "none"] = "1/P"

    @field_validator("delays")
    @classmethod
    def _check_delays(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("delays must not be empty")
        for tau in value:
            if not math.isfinite(tau) or abs(tau) >= 0.01:
                raise ValueError(f"steering delay {tau!r} must be finite and below 10 ms in magnitude")
        return value

    @property
    def mics(self) -> int:
        return len(self.delays)


IvaUpdateRule = Literal["natural", "plain"]


class IvaParams(StrictBaseModel):
    """バッチIVAのハイパーパラメータ"""
    eta: float = Field(0.1, ge=0.0, description="学習率 η")
    update: IvaUpdateRule = Field(
        "natural",
        description="plain: W − η(E[g(Y)Yᴴ]·W⁻ᴴ − I) ／ natural: W − η(E[g(Y)Yᴴ] − I)·W",
    )
    max_iter: int = Field(100, ge=0)
    tol: float = Field(1e-4, ge=0.0, description="‖ΔW‖_F/‖W‖_F の収束閾値")
    epsilon: float = Field(1e-8, gt=0.0)
    max_halvings: int = Field(5, ge=0, description="目的関数が増えた時のη半減回数の上限")
    match_zones: bool = Field(True, description="|Y_iva|と|Y_bf|の相関で出力をゾーンに割り当てる")


class BlockOnlineParams(StrictBaseModel):
    """ブロックオンラインIVA（ストリーミング用）"""
    block_frames: int = Field(62, ge=1)
    eta: float = Field(0.1, ge=0.0)
    update: IvaUpdateRule = "natural"
    inner_iters: int = Field(2, ge=0)
    epsilon: float = Field(1e-8, gt=0.0)
    max_halvings: int = Field(5, ge=0)
    match_zones: bool = True


EncoderMode = Literal["dual", "spectral_only", "spatial_only", "combined"]


class ModelConfig(StrictBaseModel):
    """DualSepネットワーク構成"""
    variant: Literal["S", "L"] = "S"
    causal: bool = True
    zones: int = Field(6, ge=1)
    enc_channels: List[int] = Field(default_factory=lambda: [12, 12, 24, 48, 64])
    tfcm_layers_per_block: int = Field(4, ge=0)
    tfcm_dilations: List[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    kernel: Tuple[int, int] = Field((3, 2), description="(周波数, 時間)")
    stride: Tuple[int, int] = Field((2, 1), description="(周波数, 時間)")
    hidden: int = Field(64, ge=1)
    triple_path_layers: int = Field(2, ge=0)
    freq_bins: int = Field(257, ge=1)
    encoder_mode: EncoderMode = "dual"

    @model_validator(mode="after")
    def _check_topology(self) -> "ModelConfig":
        if len(self.enc_channels) != 5:
            raise ValueError("enc_channels must list exactly 5 blocks")
        if any(c < 1 for c in self.enc_channels):
            raise ValueError("enc_channels must be positive")
        if self.enc_channels[-1] != self.hidden:
            raise ValueError("last encoder block width must equal the triple-path hidden size")
        if len(self.tfcm_dilations) != self.tfcm_layers_per_block:
            raise ValueError("tfcm_dilations must have one entry per TFCM layer")
        if self.stride[1] != 1:
            raise ValueError("time stride must be 1 (one output frame per input frame)")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError("kernel and stride must be positive")
        return self

    @property
    def blocks(self) -> int:
        return len(self.enc_channels)

    def freq_chain(self) -> List[int]:
        """エンコーダの周波数サイズ列: 257→129→65→33→17→9"""
        sizes = [self.freq_bins]
        for _ in self.enc_channels:
            sizes.append(-(-sizes[-1] // self.stride[0]))
        return sizes


SystemName = Literal["unprocessed", "bf", "bf_iva", "dualsep"]


class PipelineConfig(StrictBaseModel):
    """BF → IVA → STFT → DualSep → iSTFT の設定"""
    sample_rate: int = Field(PIPELINE_SAMPLE_RATE, gt=0)
    layout: ChannelLayout = Field(default_factory=ChannelLayout)
    stft: StftConfig = Field(default_factory=StftConfig)
    steering: Optional[List[SteeringSpec]] = Field(None, description="ゾーンごとの設定（None = 全ゾーンbroadside）")
    iva: IvaParams = Field(default_factory=IvaParams)
    online: BlockOnlineParams = Field(default_factory=BlockOnlineParams)
    iva_mode: Literal["batch", "block_online"] = "batch"
    model: ModelConfig = Field(default_factory=ModelConfig)
    weights_path: Optional[str] = None
    stages: Literal["bf", "bf_iva", "dualsep"] = "dualsep"
    mode: Literal["offline", "streaming"] = "offline"
    dump_dir: Optional[str] = None
    speed_of_sound: float = Field(SPEED_OF_SOUND, gt=0.0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "PipelineConfig":
        if self.steering is not None:
            if len(self.steering) != self.layout.zones:
                raise ValueError("steering needs one entry per zone")
            if any(s.mics != self.layout.mics_per_zone for s in self.steering):
                raise ValueError("steering delays must have one entry per microphone")
        if self.model.zones != self.layout.zones:
            raise ValueError("model zones must equal layout zones")
        if self.model.freq_bins != self.stft.n_bins:
            raise ValueError("model freq_bins must equal the STFT bin count")
        if self.mode == "streaming":
            if self.stages != "bf" and self.iva_mode != "block_online":
                raise ValueError("streaming mode requires block-online IVA")
            if self.stages == "dualsep" and not self.model.causal:
                raise ValueError("streaming mode requires a causal model")
        return self

    def zone_steering(self) -> List[SteeringSpec]:
        if self.steering is not None:
            return list(self.steering)
        return [SteeringSpec(delays=[0.0] * self.layout.mics_per_zone) for _ in range(self.layout.zones)]


class CabinRanges(StrictBaseModel):
    """車室寸法の範囲 [m]"""
    width: Tuple[float, float] = (1.5, 1.7)
    length: Tuple[float, float] = (2.3, 2.5)
    height: Tuple[float, float] = (1.2, 1.5)

    @model_validator(mode="after")
    def _check_ranges(self) -> "CabinRanges":
        for name in ("width", "length", "height"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi")
        return self


class DatasetSpec(StrictBaseModel):
    """車内データセット生成レシピ（机上規模）"""
    count: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    split: Literal["train", "dev", "test"] = "test"
    duration: float = Field(4.0, gt=0.0, description="発話長 [秒]")
    sample_rate: int = Field(PIPELINE_SAMPLE_RATE, gt=0)
    rt60_range: Tuple[float, float] = (0.3, 0.7)
    occupancy: Tuple[int, int] = Field((1, 6), description="同時話者数の一様分布範囲")
    sdr_range: Tuple[float, float] = (-20.0, 15.0)
    layout: ChannelLayout = Field(default_factory=ChannelLayout)
    spacing: float = Field(0.02, gt=0.0)
    cabin: CabinRanges = Field(default_factory=CabinRanges)
    max_order: int = Field(10, ge=0)
    tail_len: float = Field(0.6, gt=0.0)
    noise_sources: int = Field(16, ge=1)
    noise_max_order: int = Field(3, ge=0)
    speech_dirs: List[str] = Field(default_factory=list)
    speed_of_sound: float = Field(SPEED_OF_SOUND, gt=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "DatasetSpec":
        lo, hi = self.occupancy
        if not (1 <= lo <= hi <= self.layout.zones):
            raise ValueError("occupancy must satisfy 1 <= lo <= hi <= zones")
        if not (0.0 < self.rt60_range[0] <= self.rt60_range[1]):
            raise ValueError("rt60_range must satisfy 0 < lo <= hi")
        if self.sdr_range[0] > self.sdr_range[1]:
            raise ValueError("sdr_range must satisfy lo <= hi")
        return self


class EvalConfig(StrictBaseModel):
    system: SystemName = "bf_iva"
    include_timing: bool = Field(False, description="rtfを含めるとレポートは非決定的になる")
    csv_path: Optional[str] = None


class BenchConfig(StrictBaseModel):
    duration: float = Field(30.0, ge=5.0)
    repeats: int = Field(3, ge=1)
    seed: int = 0


class CliConfig(StrictBaseModel):
    """CLI用の統合設定（JSONファイルと同じ構造）"""
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)


class ManifestRecord(StrictBaseModel):
    """データセットの1発話分（JSON-lines の1行）。パスはマニフェストのディレクトリからの相対パス"""
    id: str
    mix_path: str
    ref_paths: List[str] = Field(default_factory=list, description="zones_active と同じ順の参照信号")
    zones_active: List[int] = Field(default_factory=list, description="0始まりのゾーン番号")
    rt60: float
    sdr_db: float
    scene_dims: Tuple[float, float, float]
    source_positions: List[Tuple[float, float, float]] = Field(default_factory=list)


class UtteranceScore(StrictBaseModel):
    id: str
    sisnr_in: float
    sisnr_out: float
    delta: float
    sir: float
    rtf: Optional[float] = None
    permutation: List[int] = Field(default_factory=list)
    zones: List[int] = Field(default_factory=list)


class AggregateScore(StrictBaseModel):
    sisnr_in: float = 0.0
    sisnr_out: float = 0.0
    delta: float = 0.0
    sir: float = 0.0
    rtf: Optional[float] = None
    count: int = 0


class EvalReport(StrictBaseModel):
    """マニフェスト評価の結果（集計値は発話ごとの値の平均）"""
    system: SystemName
    manifest: str
    utterances: List[UtteranceScore] = Field(default_factory=list)
    aggregate: AggregateScore = Field(default_factory=AggregateScore)
    per_zone: Dict[str, float] = Field(default_factory=dict, description="ゾーン別の平均 sisnr_out")
    missing: List[str] = Field(default_factory=list)


class RtfReport(StrictBaseModel):
    """RTF = 処理時間 / 音声長"""
    duration: float
    repeats: int
    mode: str
    stages: str
    rtf_median: float
    rtf_p95: float
    runs: List[float] = Field(default_factory=list)
    stage_seconds: Dict[str, float] = Field(default_factory=dict, description="ステージ別処理時間の中央値")
    latency_ms: Dict[str, float] = Field(default_factory=dict)
    shapes: List[Dict[str, Any]] = Field(default_factory=list)
