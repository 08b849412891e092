"""実時間係数（RTF）の計測"""
import time
from typing import Callable, List, Optional

import numpy as np

from src.audio.signal import MultichannelSignal
from src.exceptions import ContractError
from src.nn.model import describe_shapes
from src.nn.weights import WeightStore, init_random
from src.pipeline.separation import StageTimings, describe_latency, run_stream, separate_offline
from src.schemas import PipelineConfig, RtfReport

Runner = Callable[[MultichannelSignal, StageTimings], object]

MIN_DURATION = 5.0


def bench_input(config: PipelineConfig, duration: float, seed: int = 0) -> MultichannelSignal:
    """計測用の 24ch 入力（シード付きガウス雑音）"""
    rng = np.random.default_rng(seed)
    n = int(round(duration * config.sample_rate))
    samples = (0.05 * rng.standard_normal((config.layout.raw_channels, n))).astype(np.float32)
    return MultichannelSignal(samples, config.sample_rate, "raw_mics", config.layout)


def default_runner(config: PipelineConfig, weights: Optional[WeightStore] = None, seed: int = 0) -> Runner:
    if config.stages == "dualsep" and weights is None and not config.weights_path:
        weights = init_random(config.model, seed)
    if config.mode == "streaming":
        return lambda mix, timings: run_stream(mix, config, weights=weights, timings=timings)
    return lambda mix, timings: separate_offline(mix, config, weights=weights, timings=timings)


def measure_rtf(config: PipelineConfig, duration: float = 30.0, repeats: int = 3, *,
                runner: Optional[Runner] = None, weights: Optional[WeightStore] = None,
                seed: int = 0) -> RtfReport:
    """RTF = 処理時間 / 音声長。repeats 回の中央値と95パーセンタイル、ステージ別時間を返す"""
    if duration < MIN_DURATION:
        raise ContractError(f"duration must be at least {MIN_DURATION} s, got {duration}")
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    mix = bench_input(config, duration, seed)
    runner = runner or default_runner(config, weights, seed)

    rtfs: List[float] = []
    stages: List[StageTimings] = []
    for _ in range(repeats):
        timings = StageTimings()
        start = time.perf_counter()
        runner(mix, timings)
        rtfs.append((time.perf_counter() - start) / duration)
        stages.append(timings)

    stage_seconds = {name: float(np.median([t.as_dict()[name] for t in stages])) for name in stages[0].as_dict()}
    frames = -(-mix.length // config.stft.hop) + 1
    return RtfReport(
        duration=duration,
        repeats=repeats,
        mode=config.mode,
        stages=config.stages,
        rtf_median=float(np.median(rtfs)),
        rtf_p95=float(np.percentile(rtfs, 95)),
        runs=rtfs,
        stage_seconds=stage_seconds,
        latency_ms=describe_latency(config),
        shapes=describe_shapes(config.model, frames) if config.stages == "dualsep" else [],
    )
