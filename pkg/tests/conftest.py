import numpy as np
import pytest

from src.audio.signal import MultichannelSignal
from src.schemas import BlockOnlineParams, ChannelLayout, ModelConfig, PipelineConfig, StftConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_stft():
    """64点FFT（33ビン）、hop 32"""
    return StftConfig(fft_size=64, win_length=64, hop=32)


@pytest.fixture
def tiny_model():
    return ModelConfig(
        zones=2,
        enc_channels=[4, 4, 4, 4, 8],
        hidden=8,
        freq_bins=33,
        tfcm_layers_per_block=2,
        tfcm_dilations=[1, 2],
    )


@pytest.fixture
def tiny_pipeline(small_stft, tiny_model):
    """2ゾーン × 2マイク、8フレームのIVAブロック"""
    return PipelineConfig(
        layout=ChannelLayout(zones=2, mics_per_zone=2),
        stft=small_stft,
        model=tiny_model,
        online=BlockOnlineParams(block_frames=8),
        iva_mode="block_online",
    )


@pytest.fixture
def tiny_mix(rng, tiny_pipeline):
    """2ゾーン分の生マイク信号（0.25 s のガウス雑音）"""
    layout = tiny_pipeline.layout
    samples = 0.05 * rng.standard_normal((layout.raw_channels, 4000))
    return MultichannelSignal(samples.astype(np.float32), 16000, "raw_mics", layout)
