"""
マニフェスト駆動のバッチ評価

発話ごとにシステム（unprocessed / bf / bf_iva / dualsep）を通し、有効ゾーンの参照信号と比べて
SiSNR・改善量・最良置換SIRを求める。集計は発話順に行うため、並列で回してもレポートは同じになる。
"""
import csv
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from src.audio.signal import MultichannelSignal
from src.audio.wav_io import load_wav
from src.evaluation.metrics import sir_best_perm, sisnr, zone_reference
from src.nn.weights import WeightStore
from src.pipeline.separation import resolve_weights, separate_offline
from src.schemas import AggregateScore, EvalReport, ManifestRecord, PipelineConfig, SystemName, UtteranceScore
from src.sim.batch import load_manifest, resolve
from src.utils.io import write_text
from src.utils.json_tools import dump_pretty

CSV_COLUMNS = ["id", "sisnr_in", "sisnr_out", "delta", "sir", "rtf", "zones", "permutation"]


@dataclass
class _Outcome:
    score: Optional[UtteranceScore] = None
    per_zone: Optional[Dict[int, float]] = None
    missing: Optional[List[str]] = None


def system_config(config: PipelineConfig, system: SystemName) -> PipelineConfig:
    """評価はオフライン処理で行う。unprocessed は DSP を通さない"""
    stages = "bf" if system == "unprocessed" else system
    return config.model_copy(update={"stages": stages, "mode": "offline", "dump_dir": None})


def _missing_paths(manifest_path: str, record: ManifestRecord) -> List[str]:
    paths = [record.mix_path, *record.ref_paths]
    return [rel for rel in paths if not os.path.isfile(resolve(manifest_path, rel))]


def _outputs(mix: MultichannelSignal, system: SystemName, config: PipelineConfig,
             weights: Optional[WeightStore]) -> List[np.ndarray]:
    p = config.layout.mics_per_zone
    if system == "unprocessed":
        return [mix.samples[zone * p].astype(np.float64) for zone in range(config.layout.zones)]
    separated = separate_offline(mix, config, weights=weights)
    return [s.samples[0].astype(np.float64) for s in separated]


def score_utterance(manifest_path: str, record: ManifestRecord, system: SystemName, config: PipelineConfig,
                    weights: Optional[WeightStore] = None, include_timing: bool = False) -> _Outcome:
    missing = _missing_paths(manifest_path, record)
    if missing:
        return _Outcome(missing=[f"{record.id}: {rel}" for rel in missing])

    mix = load_wav(resolve(manifest_path, record.mix_path), expected_rate=config.sample_rate,
                   layout="raw_mics", channel_layout=config.layout)
    refs = [zone_reference(load_wav(resolve(manifest_path, rel), expected_rate=config.sample_rate))
            for rel in record.ref_paths]

    start = time.perf_counter()
    outputs = _outputs(mix, system, config, weights)
    elapsed = time.perf_counter() - start

    p = config.layout.mics_per_zone
    zone_in, zone_out = [], []
    per_zone: Dict[int, float] = {}
    for zone, ref in zip(record.zones_active, refs):
        zone_in.append(sisnr(mix.samples[zone * p], ref))
        zone_out.append(sisnr(outputs[zone], ref))
        per_zone[zone] = zone_out[-1]
    sir, perm = sir_best_perm(outputs, refs)
    s_in = float(np.mean(zone_in))
    s_out = float(np.mean(zone_out))
    score = UtteranceScore(
        id=record.id,
        sisnr_in=s_in,
        sisnr_out=s_out,
        delta=s_out - s_in,
        sir=sir,
        rtf=elapsed / mix.duration if include_timing else None,
        permutation=perm,
        zones=list(record.zones_active),
    )
    return _Outcome(score=score, per_zone=per_zone)


def _aggregate(scores: List[UtteranceScore], include_timing: bool) -> AggregateScore:
    if not scores:
        return AggregateScore()

    def mean(name: str) -> float:
        return float(np.mean([getattr(s, name) for s in scores]))

    return AggregateScore(
        sisnr_in=mean("sisnr_in"),
        sisnr_out=mean("sisnr_out"),
        delta=mean("delta"),
        sir=mean("sir"),
        rtf=mean("rtf") if include_timing else None,
        count=len(scores),
    )


def eval_manifest(manifest_path: str, system: SystemName, config: PipelineConfig, *,
                  weights: Optional[WeightStore] = None, include_timing: bool = False,
                  threads: Optional[int] = None) -> EvalReport:
    """マニフェスト全体を評価する。欠けているファイルは missing に記録して続行する"""
    records = load_manifest(manifest_path)
    cfg = system_config(config, system)
    store = resolve_weights(cfg, weights) if system == "dualsep" else None

    def job(record: ManifestRecord) -> _Outcome:
        return score_utterance(manifest_path, record, system, cfg, store, include_timing)

    workers = max(1, threads or 1)
    if workers == 1:
        outcomes = [job(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, records))

    scores: List[UtteranceScore] = []
    missing: List[str] = []
    zone_values: Dict[int, List[float]] = {}
    for outcome in outcomes:
        if outcome.missing:
            missing.extend(outcome.missing)
            continue
        scores.append(outcome.score)
        for zone, value in outcome.per_zone.items():
            zone_values.setdefault(zone, []).append(value)

    return EvalReport(
        system=system,
        manifest=os.path.basename(manifest_path),
        utterances=scores,
        aggregate=_aggregate(scores, include_timing),
        per_zone={f"zone{z + 1}": float(np.mean(v)) for z, v in sorted(zone_values.items())},
        missing=missing,
    )


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in report.utterances:
        writer.writerow([
            s.id, f"{s.sisnr_in:.6f}", f"{s.sisnr_out:.6f}", f"{s.delta:.6f}", f"{s.sir:.6f}",
            "" if s.rtf is None else f"{s.rtf:.6f}",
            " ".join(str(z + 1) for z in s.zones),
            " ".join(str(p) for p in s.permutation),
        ])
    return buf.getvalue()


def write_report(report: Any, path: str, csv_path: Optional[str] = None) -> None:
    """整形JSONで保存（csv_path 指定時は発話ごとの行もCSVで）"""
    write_text(path, dump_pretty(report))
    if csv_path and isinstance(report, EvalReport):
        write_text(csv_path, report_csv(report))
