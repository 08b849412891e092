import os

import numpy as np
import pytest
import soundfile as sf

from src.audio.wav_io import load_wav
from src.exceptions import DatasetItemError
from src.schemas import DatasetSpec
from src.sim.batch import MANIFEST_NAME, load_manifest, resolve, simulate_batch, simulate_utterance, utterance_id


@pytest.fixture
def small_spec():
    """0.5 秒、低次の鏡像法で軽くしたレシピ"""
    return DatasetSpec(count=3, seed=7, duration=0.5, max_order=2, tail_len=0.1, noise_sources=2,
                       noise_max_order=1, occupancy=(1, 3))


def test_utterance_id_is_zero_padded():
    assert utterance_id(7) == "utt-00007"


def test_simulate_utterance_is_deterministic(small_spec):
    a = simulate_utterance(small_spec, 1)
    b = simulate_utterance(small_spec, 1)
    np.testing.assert_array_equal(a.mix.samples, b.mix.samples)
    assert a.scene.occupied == b.scene.occupied
    assert a.mix.channels == 24
    assert len(a.refs) == len(a.scene.occupied)
    assert small_spec.sdr_range[0] <= a.sdr_db <= small_spec.sdr_range[1]


def test_different_indices_differ(small_spec):
    a = simulate_utterance(small_spec, 0)
    b = simulate_utterance(small_spec, 1)
    assert a.mix.length != b.mix.length or not np.array_equal(a.mix.samples, b.mix.samples)


def test_batch_writes_manifest_and_audio(tmp_path, small_spec):
    records = simulate_batch(small_spec, str(tmp_path))
    manifest = str(tmp_path / MANIFEST_NAME)
    assert [r.id for r in load_manifest(manifest)] == ["utt-00000", "utt-00001", "utt-00002"]
    for record in records:
        assert len(record.ref_paths) == len(record.zones_active)
        mix = load_wav(resolve(manifest, record.mix_path))
        assert mix.channels == 24
        for rel, zone in zip(record.ref_paths, record.zones_active):
            assert rel.endswith(f"_ref_zone{zone + 1}.wav")
            assert sf.info(resolve(manifest, rel)).channels == 4


def test_thread_count_does_not_change_output(tmp_path, small_spec):
    serial = simulate_batch(small_spec, str(tmp_path / "a"), threads=1)
    parallel = simulate_batch(small_spec, str(tmp_path / "b"), threads=3)
    assert [r.model_dump() for r in serial] == [r.model_dump() for r in parallel]
    a = (tmp_path / "a" / MANIFEST_NAME).read_bytes()
    b = (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    assert a == b
    for record in serial:
        left = (tmp_path / "a" / record.mix_path).read_bytes()
        right = (tmp_path / "b" / record.mix_path).read_bytes()
        assert left == right


def test_progress_reports_every_item(tmp_path, small_spec):
    seen = []
    simulate_batch(small_spec, str(tmp_path), progress=lambda done, total, uid: seen.append((total, uid)))
    assert sorted(seen) == [(3, "utt-00000"), (3, "utt-00001"), (3, "utt-00002")]


def test_bad_speech_file_names_the_item(tmp_path, small_spec):
    speech_dir = tmp_path / "speech"
    speech_dir.mkdir()
    sf.write(str(speech_dir / "talker.wav"), np.zeros(800, dtype=np.float32), 8000, subtype="FLOAT")
    spec = small_spec.model_copy(update={"speech_dirs": [str(speech_dir)], "count": 1})
    with pytest.raises(DatasetItemError) as info:
        simulate_batch(spec, str(tmp_path / "out"))
    assert info.value.index == 0


def test_manifest_paths_are_relative(tmp_path, small_spec):
    records = simulate_batch(small_spec.model_copy(update={"count": 1}), str(tmp_path))
    assert not os.path.isabs(records[0].mix_path)
    assert resolve(str(tmp_path / MANIFEST_NAME), records[0].mix_path) == os.path.join(str(tmp_path), records[0].mix_path)
