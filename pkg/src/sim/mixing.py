"""
混合信号の合成: x_i = r_i * s_i を全マイクで足し合わせ、拡散雑音を目標SDRで加える
"""
from typing import List, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from src.audio.signal import MultichannelSignal
from src.exceptions import ContractError, DomainError
from src.schemas import ChannelLayout
from src.sim.rir import RirSet, generate_rirs
from src.sim.scene import CabinScene, random_positions
from src.sim.sources import car_noise, fit_length


def render_mixture(scene: CabinScene, rirs: RirSet,
                   speech: Sequence[MultichannelSignal]) -> Tuple[MultichannelSignal, List[MultichannelSignal]]:
    """mix = Σ_i r_i * s_i（全長畳み込み）。refs[i] は音源 i のゾーン自身のアレイでの残響像 [P ch]"""
    if len(speech) != len(scene.occupied) or rirs.sources != len(scene.occupied):
        raise ContractError(
            f"{len(speech)} source signals and {rirs.sources} RIR sets for {len(scene.occupied)} occupied zones",
            detail={"signals": len(speech), "rirs": rirs.sources, "occupied": list(scene.occupied)},
        )
    if not speech:
        raise ContractError("at least one source is required")
    if any(s.channels != 1 for s in speech):
        raise ContractError("source signals must be mono")
    if any(s.sample_rate != rirs.sample_rate for s in speech):
        raise ContractError("source and RIR sample rates differ")

    p = scene.mics_per_zone
    n_mics = scene.mic_positions.shape[0]
    if rirs.mics != n_mics:
        raise ContractError(f"RIRs cover {rirs.mics} mics, scene has {n_mics}")
    length = max(s.length for s in speech) + rirs.taps - 1
    mix = np.zeros((n_mics, length), dtype=np.float64)
    refs: List[MultichannelSignal] = []
    for i, (zone, source) in enumerate(zip(scene.occupied, speech)):
        image = fftconvolve(rirs.rirs[i].astype(np.float64), source.samples.astype(np.float64), axes=1)
        mix[:, : image.shape[1]] += image
        own = np.zeros((p, length))
        own[:, : image.shape[1]] = image[zone * p : (zone + 1) * p]
        refs.append(MultichannelSignal(own.astype(np.float32), rirs.sample_rate, "raw_mics",
                                       ChannelLayout(zones=1, mics_per_zone=p)))
    layout = ChannelLayout(zones=scene.n_zones, mics_per_zone=p)
    return MultichannelSignal(mix.astype(np.float32), rirs.sample_rate, "raw_mics", layout), refs


def add_noise_at_sdr(mix: MultichannelSignal, noise: MultichannelSignal, sdr_db: float) -> MultichannelSignal:
    """10·log10(‖mix‖²/‖α·noise‖²) = sdr_db となる α で雑音を加える（全チャネルで測る）"""
    if noise.channels != mix.channels:
        raise ContractError(f"noise has {noise.channels} channels, mix has {mix.channels}")
    x = mix.samples.astype(np.float64)
    n = np.stack([fit_length(row, mix.length) for row in noise.samples.astype(np.float64)])
    mix_energy = float(np.sum(x * x))
    noise_energy = float(np.sum(n * n))
    if mix_energy <= 0.0:
        raise DomainError("SDR is undefined for a silent mixture")
    if noise_energy <= 0.0:
        raise DomainError("cannot scale a silent noise signal to a target SDR")
    alpha = np.sqrt(mix_energy / (noise_energy * 10.0 ** (sdr_db / 10.0)))
    return MultichannelSignal((x + alpha * n).astype(np.float32), mix.sample_rate, mix.layout, mix.channel_layout)


def diffuse_noise(scene: CabinScene, length: int, rng: np.random.Generator, *, sources: int = 16,
                  max_order: int = 3, tail_len: float = 0.2, sample_rate: int = 16000) -> MultichannelSignal:
    """K個のランダム位置からの独立な車両雑音を鏡像法RIRで畳み込んで合計する"""
    positions = random_positions(scene, sources, rng)
    rirs = generate_rirs(scene, max_order, tail_len, sample_rate=sample_rate, sources=positions, stream=1)
    n_mics = rirs.mics
    out = np.zeros((n_mics, length))
    for k in range(sources):
        excitation = car_noise(length, sample_rate, rng)
        image = fftconvolve(rirs.rirs[k].astype(np.float64), excitation[None, :], axes=1)
        out += image[:, :length]
    layout = ChannelLayout(zones=scene.n_zones, mics_per_zone=scene.mics_per_zone)
    return MultichannelSignal(out.astype(np.float32), sample_rate, "raw_mics", layout)
