import itertools

import numpy as np
import pytest

from src.dsp.iva import (
    BlockOnlineIva,
    UnmixingState,
    apply_unmixing,
    _iterate,
    block_latency_seconds,
    gradient_step,
    init_identity,
    minimal_distortion,
    objective,
    run_block_online,
    run_iva,
    zone_permutation,
)
from src.dsp.stft import ComplexSpectrogram
from src.exceptions import ContractError, NumericalError
from src.schemas import BlockOnlineParams, IvaParams, StftConfig

CFG = StftConfig(fft_size=16, win_length=16, hop=8)  # 9 bins


def _sources(rng, frames=1000, sources=2):
    """Independent sources with sparse shared-across-bins envelopes: S [F, K, T]."""
    envelope = rng.exponential(1.0, (sources, frames)) ** 2
    carrier = rng.standard_normal((CFG.n_bins, sources, frames)) + 1j * rng.standard_normal((CFG.n_bins, sources, frames))
    return carrier * envelope[None, :, :]


def _mixing(rng, channels=2, coupling=0.6):
    off = coupling * np.exp(2j * np.pi * rng.uniform(size=(CFG.n_bins, channels, channels)))
    eye = np.eye(channels)[None, :, :]
    return eye + (1 - eye) * off


def _spec(fmt: np.ndarray) -> ComplexSpectrogram:
    return ComplexSpectrogram(np.transpose(fmt, (2, 0, 1)), CFG)


def _global_sir(G: np.ndarray, S: np.ndarray) -> float:
    """Best-permutation SIR of outputs G·S against the sources, pooled over bins."""
    K = G.shape[1]
    power = np.mean(np.abs(S) ** 2, axis=2)  # [F, K]
    best = -np.inf
    for perm in itertools.permutations(range(K)):
        target = sum(np.sum(np.abs(G[:, k, perm[k]]) ** 2 * power[:, perm[k]]) for k in range(K))
        total = np.sum(np.abs(G) ** 2 * power[:, None, :])
        best = max(best, 10 * np.log10(target / (total - target)))
    return best


def test_init_identity_shapes():
    state = init_identity(257, 6)
    assert state.W.shape == (257, 6, 6)
    np.testing.assert_array_equal(state.W[100], np.eye(6))
    np.testing.assert_allclose(np.linalg.det(state.W), 1.0)


def test_init_identity_rejects_empty():
    with pytest.raises(ContractError):
        init_identity(0, 2)


def test_identity_unmixing_is_a_no_op(rng):
    data = (rng.standard_normal((20, 9, 3)) + 1j * rng.standard_normal((20, 9, 3))).astype(np.complex64)
    spec = ComplexSpectrogram(data, CFG)
    np.testing.assert_array_equal(apply_unmixing(init_identity(9, 3), spec).data, data)


def test_permutation_and_scaling_unmixing(rng):
    data = (rng.standard_normal((20, 9, 2)) + 1j * rng.standard_normal((20, 9, 2))).astype(np.complex64)
    spec = ComplexSpectrogram(data, CFG)
    state = init_identity(9, 2)
    swapped = apply_unmixing(UnmixingState(W=np.tile(np.array([[0, 1], [1, 0]], dtype=np.complex128), (9, 1, 1))), spec)
    np.testing.assert_array_equal(swapped.data, data[:, :, ::-1])
    doubled = apply_unmixing(UnmixingState(W=2 * state.W), spec)
    np.testing.assert_allclose(doubled.data, 2 * data, rtol=1e-6)


def test_apply_unmixing_checks_shapes(rng):
    spec = ComplexSpectrogram(np.zeros((4, 9, 3), dtype=np.complex64), CFG)
    with pytest.raises(ContractError):
        apply_unmixing(init_identity(9, 2), spec)


def test_gradient_step_matches_reference(rng):
    X = _mixing(rng) @ _sources(rng, frames=200)
    spec = _spec(X)
    state = init_identity(9, 2, eta=0.05)
    stepped = gradient_step(state, spec)

    Y = spec.data.astype(np.complex128)  # [T, F, M], W = I
    eye = np.eye(2)
    expected = np.empty((9, 2, 2), dtype=np.complex128)
    for f in range(9):
        C = np.zeros((2, 2), dtype=np.complex128)
        for t in range(Y.shape[0]):
            y = Y[t, f]
            g = y / np.maximum(np.sqrt(np.sum(np.abs(Y[t]) ** 2, axis=0)), 1e-8)
            C += np.outer(g, y.conj())
        expected[f] = eye - 0.05 * (C / Y.shape[0] - eye)
    np.testing.assert_allclose(stepped.W, expected, atol=1e-10)
    assert stepped.iterations == 1


W0 = np.array([[1.0, 0.3j], [0.2, 0.9]], dtype=np.complex128)


def _plain_reference(W: np.ndarray, X: np.ndarray, eta: float) -> np.ndarray:
    """Straight per-bin loops of W − η(mean_t g(y)yᴴ · W⁻ᴴ − I). X: [T, F, M]."""
    T, F, M = X.shape
    out = np.empty_like(W)
    Y = np.stack([np.stack([W[f] @ X[t, f] for f in range(F)]) for t in range(T)])  # [T, F, M]
    for f in range(F):
        C = np.zeros((M, M), dtype=np.complex128)
        for t in range(T):
            norms = np.sqrt(np.sum(np.abs(Y[t]) ** 2, axis=0))
            g = Y[t, f] / np.maximum(norms, 1e-8)
            C += np.outer(g, Y[t, f].conj())
        out[f] = W[f] - eta * ((C / T) @ np.linalg.inv(W[f]).conj().T - np.eye(M))
    return out


def test_gradient_step_from_non_identity_w_matches_reference(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=200))
    W = np.tile(W0, (9, 1, 1))
    stepped = gradient_step(UnmixingState(W=W, eta=0.05), spec)
    expected = _plain_reference(W, spec.data.astype(np.complex128), 0.05)
    np.testing.assert_allclose(stepped.W, expected, atol=1e-10)


def test_natural_rule_differs_from_plain_away_from_identity(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=200))
    state = UnmixingState(W=np.tile(W0, (9, 1, 1)), eta=0.05)
    plain = gradient_step(state, spec).W
    natural = gradient_step(state, spec, rule="natural").W
    assert not np.allclose(plain, natural)
    at_identity = init_identity(9, 2, eta=0.05)
    np.testing.assert_allclose(gradient_step(at_identity, spec).W,
                               gradient_step(at_identity, spec, rule="natural").W, atol=1e-12)


@pytest.mark.parametrize("rule", ["plain", "natural"])
def test_iterate_takes_the_first_non_increasing_gradient_step(rng, rule):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=200))
    W = np.tile(W0, (9, 1, 1))
    X = np.transpose(spec.data, (1, 2, 0)).astype(np.complex128)
    iterated, done, _, history = _iterate(W, X, eta=0.05, n_iter=1, tol=0.0, epsilon=1e-8, max_halvings=30, rule=rule)
    assert done == 1
    for eta in 0.05 * 0.5 ** np.arange(31):
        stepped = gradient_step(UnmixingState(W=W, eta=eta), spec, rule=rule).W
        if objective(stepped, X) <= objective(W, X):
            break
    np.testing.assert_allclose(iterated, stepped, atol=1e-10)
    assert history[1] == pytest.approx(objective(stepped, X))


def test_singular_w_is_regularised_before_the_plain_step(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=100))
    stepped = gradient_step(UnmixingState(W=np.zeros((9, 2, 2), dtype=np.complex128), eta=0.05), spec)
    assert np.all(np.isfinite(stepped.W))
    assert "regularised@1" in stepped.flags


def test_plain_rule_objective_never_increases(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=300))
    _, state = run_iva(spec, IvaParams(update="plain", max_iter=30, tol=0.0))
    history = np.array(state.objective_history)
    assert len(history) >= 2
    assert np.all(np.diff(history) <= 1e-6)


def test_zero_learning_rate_leaves_w_unchanged(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=50))
    state = init_identity(9, 2, eta=0.0)
    np.testing.assert_array_equal(gradient_step(state, spec).W, state.W)


def test_run_iva_separates_a_per_bin_mixture(rng):
    S = _sources(rng)
    A = _mixing(rng)
    spec = _spec(A @ S)
    _, state = run_iva(spec, IvaParams(eta=0.2, max_iter=400, tol=1e-8, match_zones=False))
    sir_in = _global_sir(A, S)
    sir_out = _global_sir(state.W @ A, S)
    assert sir_out - sir_in >= 10.0


def test_run_iva_separates_three_sources(rng):
    S = _sources(rng, frames=1500, sources=3)
    A = _mixing(rng, channels=3, coupling=0.4)
    _, state = run_iva(_spec(A @ S), IvaParams(eta=0.2, max_iter=400, tol=1e-8, match_zones=False))
    assert _global_sir(state.W @ A, S) - _global_sir(A, S) >= 8.0


@pytest.mark.slow
def test_mean_sir_improvement_over_twenty_seeds():
    gains = []
    for seed in range(20):
        local = np.random.default_rng(seed)
        S = _sources(local, frames=600)
        A = _mixing(local)
        _, state = run_iva(_spec(A @ S), IvaParams(eta=0.2, max_iter=300, tol=1e-8, match_zones=False))
        gains.append(_global_sir(state.W @ A, S) - _global_sir(A, S))
    assert np.mean(gains) >= 8.0
    assert min(gains) > 0.0


def test_block_online_sir_does_not_drop_across_blocks(rng):
    S = _sources(rng, frames=800)
    A = _mixing(rng)
    frames = np.transpose(A @ S, (2, 0, 1))
    online = BlockOnlineIva(9, 2, BlockOnlineParams(block_frames=100, eta=0.2, inner_iters=10, match_zones=False))
    sirs = []
    for frame in frames:
        if online.push_frame(frame):
            W = minimal_distortion(online.state().W, 1e-8)
            sirs.append(_global_sir(W @ A, S))
    assert len(sirs) == 8
    assert np.all(np.diff(sirs) >= -1.0)
    assert sirs[-1] >= sirs[0]
    assert sirs[-1] - _global_sir(A, S) >= 5.0


def test_objective_never_increases(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=300))
    _, state = run_iva(spec, IvaParams(max_iter=30, tol=0.0))
    history = np.array(state.objective_history)
    assert len(history) >= 2
    assert np.all(np.diff(history) <= 1e-6)


def test_already_separated_input_is_a_fixed_point(rng):
    S = _sources(rng)
    spec = _spec(S)
    out, _ = run_iva(spec, IvaParams(max_iter=50))
    a = out.data.reshape(-1, 2)
    b = spec.data.reshape(-1, 2)
    for k in range(2):
        corr = np.abs(np.vdot(a[:, k], b[:, k])) / (np.linalg.norm(a[:, k]) * np.linalg.norm(b[:, k]))
        assert corr > 0.99


def test_minimal_distortion_only_rescales_rows(rng):
    W = rng.standard_normal((9, 3, 3)) + 1j * rng.standard_normal((9, 3, 3))
    scaled = minimal_distortion(W, 1e-8)
    ratio = scaled @ np.linalg.inv(W)
    off = ratio - np.einsum("fii->fi", ratio)[:, :, None] * np.eye(3)[None]
    np.testing.assert_allclose(off, 0.0, atol=1e-9)
    np.testing.assert_allclose(np.einsum("fii->fi", np.linalg.inv(scaled)), 1.0, atol=1e-9)


def test_zone_permutation_finds_swapped_channels(rng):
    X = _sources(rng, frames=200)
    assert zone_permutation(X[:, ::-1, :], X) == [1, 0]
    assert zone_permutation(X, X) == [0, 1]


def test_non_finite_input_raises_numerical_error():
    data = np.ones((10, 9, 2), dtype=np.complex64)
    data[3, 2, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        run_iva(ComplexSpectrogram(data, CFG))
    assert info.value.iteration == 1


def test_single_block_equals_batch(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=120))
    batch, _ = run_iva(spec, IvaParams(eta=0.1, max_iter=10, tol=0.0))
    online = run_block_online(spec, BlockOnlineParams(block_frames=120, eta=0.1, inner_iters=10))
    np.testing.assert_allclose(online.data, batch.data, rtol=1e-5, atol=1e-5)


def test_block_online_keeps_every_frame(rng):
    spec = _spec(_mixing(rng) @ _sources(rng, frames=25))
    out = run_block_online(spec, BlockOnlineParams(block_frames=8, inner_iters=1))
    assert out.data.shape == spec.data.shape


def test_block_online_emits_per_block(rng):
    online = BlockOnlineIva(9, 2, BlockOnlineParams(block_frames=4, inner_iters=1))
    frames = np.transpose(_sources(rng, frames=6), (2, 0, 1))
    emitted = [len(online.push_frame(f)) for f in frames]
    assert emitted == [0, 0, 0, 4, 0, 0]
    assert len(online.flush()) == 2
    assert online.blocks_done == 2


def test_block_online_rejects_wrong_frame_shape():
    online = BlockOnlineIva(9, 2)
    with pytest.raises(ContractError):
        online.push_frame(np.zeros((9, 3)))


def test_block_latency_for_62_frames():
    assert block_latency_seconds(BlockOnlineParams(block_frames=62), 256, 16000) == pytest.approx(0.992)
