import numpy as np
import pytest

from src.dsp.stft import ComplexSpectrogram
from src.exceptions import ContractError, FingerprintMismatchError
from src.nn.model import DualSepNet, StreamState, describe_shapes, model_forward, model_step, prepare
from src.nn.tensors import complex_mask, features_from_spectra
from src.nn.weights import decoder_channels, init_random
from src.schemas import ModelConfig


def _spectra(rng, small_stft, frames=10, zones=2):
    shape = (frames, small_stft.n_bins, zones)
    bf = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)
    iva = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)
    return ComplexSpectrogram(bf, small_stft), ComplexSpectrogram(iva, small_stft)


def _rigged_identity(config):
    """All weights zero except the last decoder bias: content (1, 0), gates saturated."""
    store = init_random(config)
    for name in store.tensors:
        store.tensors[name] = np.zeros_like(store.tensors[name])
    last = config.blocks - 1
    store.tensors[f"dec.{last}.conv.bias"] = np.array([1.0, 0.0, 30.0, 30.0], dtype=np.float32)
    return store


def test_forward_shapes(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft)
    masks, separated = model_forward(bf, iva, init_random(tiny_model), tiny_model)
    assert masks.shape == (10, 33, 2)
    assert masks.dtype == np.complex64
    assert separated.data.shape == bf.data.shape
    np.testing.assert_allclose(separated.data, masks * bf.data, rtol=1e-6)


def test_rigged_weights_give_an_identity_mask(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft)
    masks, separated = model_forward(bf, iva, _rigged_identity(tiny_model), tiny_model)
    np.testing.assert_allclose(masks, 1.0 + 0.0j, atol=1e-6)
    np.testing.assert_allclose(separated.data, bf.data, atol=1e-5)


def test_zero_weights_silence_the_output(rng, small_stft, tiny_model):
    store = init_random(tiny_model)
    store.tensors = {k: np.zeros_like(v) for k, v in store.tensors.items()}
    bf, iva = _spectra(rng, small_stft)
    _, separated = model_forward(bf, iva, store, tiny_model)
    assert not np.any(separated.data)


def test_causal_model_ignores_future_frames(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft, frames=12)
    later = bf.data.copy()
    later[8:] *= 3.0
    weights = init_random(tiny_model, seed=5)
    a, _ = model_forward(bf, iva, weights, tiny_model)
    b, _ = model_forward(bf.replace(later), iva, weights, tiny_model)
    np.testing.assert_allclose(a[:8], b[:8], rtol=1e-5, atol=1e-6)
    assert not np.allclose(a[8:], b[8:])


def test_causality_holds_for_random_perturbations(rng, small_stft, tiny_model):
    weights = init_random(tiny_model, seed=9)
    for _ in range(50):
        bf, iva = _spectra(rng, small_stft, frames=10)
        cut = int(rng.integers(1, 10))
        noise = rng.standard_normal((10 - cut, small_stft.n_bins, 2, 2)) * rng.uniform(0.1, 10.0)
        later_bf, later_iva = bf.data.copy(), iva.data.copy()
        later_bf[cut:] += (noise[..., 0] + 1j * noise[..., 1]).astype(np.complex64)
        later_iva[cut:] *= np.complex64(rng.uniform(-3.0, 3.0))
        a, _ = model_forward(bf, iva, weights, tiny_model)
        b, _ = model_forward(bf.replace(later_bf), iva.replace(later_iva), weights, tiny_model)
        np.testing.assert_allclose(a[:cut], b[:cut], rtol=1e-5, atol=1e-6)


def test_frame_steps_match_offline_forward(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft, frames=9)
    weights = init_random(tiny_model, seed=2)
    _, offline = model_forward(bf, iva, weights, tiny_model)
    state = StreamState(tiny_model)
    frames = [model_step(bf.data[t], iva.data[t], state, weights, tiny_model) for t in range(9)]
    np.testing.assert_allclose(np.stack(frames), offline.data, rtol=1e-4, atol=1e-4)
    assert state.frames == 9


def test_chunked_processing_matches_steps(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft, frames=9)
    net = DualSepNet(init_random(tiny_model, seed=2))
    state = net.new_state()
    chunks = [net.process_chunk(bf.data[i : i + 3], iva.data[i : i + 3], state) for i in range(0, 9, 3)]
    _, offline = net.forward(bf, iva)
    np.testing.assert_allclose(np.concatenate(chunks), offline.data, rtol=1e-4, atol=1e-4)


def test_state_size_does_not_grow(rng, small_stft, tiny_model):
    net = DualSepNet(init_random(tiny_model))
    state = net.new_state()
    before = state.nbytes()
    bf, iva = _spectra(rng, small_stft, frames=20)
    for t in range(20):
        net.step(bf.data[t], iva.data[t], state)
    assert state.nbytes() == before


def test_reset_restores_the_first_output(rng, small_stft, tiny_model):
    net = DualSepNet(init_random(tiny_model, seed=4))
    state = net.new_state()
    bf, iva = _spectra(rng, small_stft, frames=4)
    first = net.step(bf.data[0], iva.data[0], state)
    for t in range(1, 4):
        net.step(bf.data[t], iva.data[t], state)
    state.reset()
    np.testing.assert_array_equal(net.step(bf.data[0], iva.data[0], state), first)


def test_noncausal_model_cannot_stream(rng, small_stft, tiny_model):
    config = tiny_model.model_copy(update={"causal": False})
    weights = init_random(config)
    bf, iva = _spectra(rng, small_stft, frames=3)
    masks, _ = model_forward(bf, iva, weights, config)
    assert masks.shape == (3, 33, 2)
    with pytest.raises(ContractError):
        model_step(bf.data[0], iva.data[0], StreamState(config), weights, config)


@pytest.mark.parametrize("mode", ["dual", "spectral_only", "spatial_only", "combined"])
def test_every_encoder_mode_runs(rng, small_stft, tiny_model, mode):
    config = tiny_model.model_copy(update={"encoder_mode": mode})
    bf, iva = _spectra(rng, small_stft, frames=4)
    masks, _ = model_forward(bf, iva, init_random(config), config)
    assert masks.shape == (4, 33, 2)


def test_spectral_only_ignores_the_spatial_input(rng, small_stft, tiny_model):
    config = tiny_model.model_copy(update={"encoder_mode": "spectral_only"})
    weights = init_random(config, seed=8)
    bf, iva = _spectra(rng, small_stft, frames=4)
    a, _ = model_forward(bf, iva, weights, config)
    b, _ = model_forward(bf, iva.replace(np.zeros_like(iva.data)), weights, config)
    np.testing.assert_array_equal(a, b)


def test_large_variant_fuses_by_projection(rng, small_stft, tiny_model):
    config = tiny_model.model_copy(update={"variant": "L"})
    bf, iva = _spectra(rng, small_stft, frames=4)
    masks, _ = model_forward(bf, iva, init_random(config), config)
    assert np.all(np.isfinite(masks))


def test_shape_mismatch_is_a_contract_error(rng, small_stft, tiny_model):
    bf, iva = _spectra(rng, small_stft, frames=4, zones=3)
    with pytest.raises(ContractError):
        model_forward(bf, iva, init_random(tiny_model), tiny_model)


def test_prepare_checks_the_config(tiny_model):
    weights = init_random(tiny_model)
    assert prepare(weights) is prepare(weights, tiny_model)
    with pytest.raises(FingerprintMismatchError):
        prepare(weights, tiny_model.model_copy(update={"variant": "L"}))


def test_default_shapes_follow_the_frequency_chain():
    config = ModelConfig()
    assert config.freq_chain() == [257, 129, 65, 33, 17, 9]
    assert decoder_channels(config) == [64, 48, 24, 12, 12, 2]
    rows = {row["stage"]: row["shape"] for row in describe_shapes(config, 100)}
    assert rows["spec_enc.input"] == [100, 257, 6, 2]
    assert rows["bottleneck"] == [100, 9, 6, 64]
    assert rows["dec.4"] == [100, 257, 6, 2]
    assert rows["mask"] == [100, 257, 6]


def test_feature_planes_round_trip(rng, small_stft):
    bf, _ = _spectra(rng, small_stft, frames=3)
    feats = features_from_spectra(bf, zones=2)
    assert feats.shape == (3, 33, 2, 2)
    np.testing.assert_array_equal(complex_mask(feats.data), bf.data)
    with pytest.raises(ContractError):
        features_from_spectra(bf, zones=6)
