"""
データセットの一括生成とマニフェスト（JSON-lines）の読み書き

発話 i の乱数系列は SeedSequence([seed, split, i]) から作るので、並列でも逐次でも同じ結果になる。
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.audio.signal import MultichannelSignal
from src.audio.wav_io import save_wav
from src.exceptions import DatasetItemError, SeparationError
from src.schemas import DatasetSpec, ManifestRecord
from src.sim.mixing import add_noise_at_sdr, diffuse_noise, render_mixture
from src.sim.rir import generate_rirs
from src.sim.scene import CabinScene, sample_scene
from src.sim.sources import draw_speech, list_speech_files
from src.utils.io import ensure_dir

MANIFEST_NAME = "manifest.jsonl"
AUDIO_DIR = "audio"
_SPLIT_IDS = {"train": 0, "dev": 1, "test": 2}

ProgressFn = Callable[[int, int, str], None]


@dataclass(frozen=True, eq=False)
class SimulatedUtterance:
    scene: CabinScene
    mix: MultichannelSignal
    refs: List[MultichannelSignal]
    sdr_db: float


def utterance_id(index: int) -> str:
    return f"utt-{index:05d}"


def utterance_rng(spec: DatasetSpec, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([spec.seed, _SPLIT_IDS[spec.split], index])


def simulate_utterance(spec: DatasetSpec, index: int, speech_files: Sequence[str] = ()) -> SimulatedUtterance:
    """シーン → RIR → 話者信号 → 混合 → 目標SDRの拡散雑音"""
    seq = utterance_rng(spec, index)
    rng = np.random.default_rng(seq)
    scene_seed = int(seq.generate_state(1)[0])
    scene = sample_scene(spec, rng, seed=scene_seed)
    rirs = generate_rirs(scene, spec.max_order, spec.tail_len, sample_rate=spec.sample_rate)
    speech = [draw_speech(speech_files, spec.duration, spec.sample_rate, rng) for _ in scene.occupied]
    mix, refs = render_mixture(scene, rirs, speech)
    sdr_db = float(rng.uniform(*spec.sdr_range))
    noise = diffuse_noise(scene, mix.length, rng, sources=spec.noise_sources, max_order=spec.noise_max_order,
                          sample_rate=spec.sample_rate)
    return SimulatedUtterance(scene, add_noise_at_sdr(mix, noise, sdr_db), refs, sdr_db)


def _write_item(spec: DatasetSpec, index: int, out_dir: str, speech_files: Sequence[str]) -> ManifestRecord:
    uid = utterance_id(index)
    item = simulate_utterance(spec, index, speech_files)
    mix_rel = f"{AUDIO_DIR}/{uid}_mix.wav"
    save_wav(item.mix, os.path.join(out_dir, mix_rel))
    ref_rels = []
    for zone, ref in zip(item.scene.occupied, item.refs):
        rel = f"{AUDIO_DIR}/{uid}_ref_zone{zone + 1}.wav"
        save_wav(ref, os.path.join(out_dir, rel))
        ref_rels.append(rel)
    return ManifestRecord(
        id=uid,
        mix_path=mix_rel,
        ref_paths=ref_rels,
        zones_active=list(item.scene.occupied),
        rt60=item.scene.rt60,
        sdr_db=item.sdr_db,
        scene_dims=tuple(float(v) for v in item.scene.dims),
        source_positions=[tuple(float(v) for v in p) for p in item.scene.sources],
    )


def simulate_batch(spec: DatasetSpec, out_dir: str, *, threads: Optional[int] = None,
                   progress: Optional[ProgressFn] = None) -> List[ManifestRecord]:
    """spec.count 件の発話を out_dir/audio/ に書き、out_dir/manifest.jsonl を返す順に書く"""
    ensure_dir(os.path.join(out_dir, AUDIO_DIR))
    speech_files = list_speech_files(spec.speech_dirs)

    def job(index: int) -> ManifestRecord:
        try:
            record = _write_item(spec, index, out_dir, speech_files)
        except (OSError, SeparationError, ValueError) as exc:
            raise DatasetItemError(str(exc), index=index) from exc
        if progress is not None:
            progress(index + 1, spec.count, record.id)
        return record

    workers = max(1, threads or 1)
    if workers == 1:
        records = [job(i) for i in range(spec.count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, range(spec.count)))
    write_manifest(records, os.path.join(out_dir, MANIFEST_NAME))
    return records


def write_manifest(records: Sequence[ManifestRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")


def load_manifest(path: str) -> List[ManifestRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(ManifestRecord.model_validate_json(line))
    return records


def resolve(manifest_path: str, rel: str) -> str:
    """マニフェストからの相対パスを実パスにする"""
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)
