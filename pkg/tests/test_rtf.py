import numpy as np
import pytest

from beamlab.audio import AudioClip
from beamlab.rtf import (
    InterferenceSubspace,
    RtfError,
    RtfVector,
    estimate_interference_subspace,
    estimate_target_rtf,
    hermitian_angle,
    rtf_from_cross_spectra,
)
from beamlab.scenes import ArrayGeometry
from beamlab.simulate import render_source, speech_shaped_noise, steering_vector
from beamlab.spatial import HermitianStack, estimate_covariance, sqrt_pair
from beamlab.stft import DEFAULT_STFT, Spectrogram, StftConfig, analyze

RATE = 16000
TINY_CFG = StftConfig(fft_size=4, hop_size=2)  # K = 3


def identity_stack(k, m):
    return HermitianStack(np.tile(np.eye(m, dtype=complex), (k, 1, 1)))


def narrowband_spectrogram(frames_mk, k=3):
    return Spectrogram(frames_mk, TINY_CFG if k == 3 else DEFAULT_STFT, RATE)


def test_rank_one_rtf_recovery(rng):
    m, k, f = 4, 3, 40
    a = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    s = rng.standard_normal((f, k)) + 1j * rng.standard_normal((f, k))
    frames = np.einsum("km,fk->mfk", a, s)
    spec = narrowband_spectrogram(frames)
    eye = identity_stack(k, m)
    est = estimate_target_rtf(spec, np.arange(f), eye, eye, reference_index=0)
    expected = a / a[:, :1]
    np.testing.assert_allclose(est.values, expected, atol=1e-10)
    assert (est.values[:, 0] == 1.0).all()


def test_reference_element_exactly_one(rng):
    m, k, f = 3, 3, 30
    frames = rng.standard_normal((m, f, k)) + 1j * rng.standard_normal((m, f, k))
    spec = narrowband_spectrogram(frames)
    eye = identity_stack(k, m)
    est = estimate_target_rtf(spec, np.arange(f), eye, eye, reference_index=1)
    assert (est.values[:, 1] == 1.0).all()


def test_anechoic_simulated_target_matches_steering(rng):
    # near-broadside target; in-band bins where the source carries energy
    array = ArrayGeometry.linear(count=8, spacing_m=0.05, center=(0.0, 0.0, 1.3))
    bearing = np.deg2rad(5.0)
    pos = np.array([1.5 * np.sin(bearing), 1.5 * np.cos(bearing), 1.3])
    n_frames = 220
    n = (n_frames + 3) * 256 + 512
    clip = AudioClip(speech_shaped_noise(n, RATE, rng)[None, :] * 0.05, RATE)
    image = render_source(clip, pos, array)
    spec = analyze(image.clip, DEFAULT_STFT)
    eye = identity_stack(257, 8)
    est = estimate_target_rtf(spec, np.arange(2, 2 + n_frames), eye, eye, 0)
    true = steering_vector(DEFAULT_STFT.bin_frequencies(RATE), pos, array)
    band = range(4, 225)  # 125 Hz .. 7 kHz
    angles = [hermitian_angle(est.values[k], true[k]) for k in band]
    assert max(angles) <= 1e-3


def test_subspace_rank_one_equals_target_path(rng):
    m, k, f = 4, 3, 50
    frames = rng.standard_normal((m, f, k)) + 1j * rng.standard_normal((m, f, k))
    spec = narrowband_spectrogram(frames)
    eye = identity_stack(k, m)
    target = estimate_target_rtf(spec, np.arange(f), eye, eye, 0)
    sub = estimate_interference_subspace(spec, np.arange(f), eye, eye, 0, rank=1)
    np.testing.assert_allclose(sub.basis[:, :, 0], target.values, atol=1e-12)


def test_two_interferer_subspace_principal_angle(rng):
    m, k, f = 6, 5, 400
    cfg = StftConfig(fft_size=8, hop_size=4)
    a1 = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    a2 = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    s1 = rng.standard_normal((f, k)) + 1j * rng.standard_normal((f, k))
    s2 = rng.standard_normal((f, k)) + 1j * rng.standard_normal((f, k))
    noise = 0.01 * (rng.standard_normal((m, f, k)) + 1j * rng.standard_normal((m, f, k)))
    frames = np.einsum("km,fk->mfk", a1, s1) + np.einsum("km,fk->mfk", a2, s2) + noise
    spec = Spectrogram(frames, cfg, RATE)
    eye = identity_stack(k, m)
    sub = estimate_interference_subspace(spec, np.arange(f), eye, eye, 0, rank=2)
    for kk in range(k):
        truth = np.linalg.qr(np.stack([a1[kk], a2[kk]], axis=1))[0]
        est = np.linalg.qr(sub.basis[kk])[0]
        sv = np.linalg.svd(truth.conj().T @ est, compute_uv=False)
        principal = np.arccos(np.clip(sv.min(), 0.0, 1.0))
        assert principal <= 0.05


def test_rank_zero_rejected(rng):
    spec = narrowband_spectrogram(rng.standard_normal((3, 10, 3)) + 0j)
    eye = identity_stack(3, 3)
    with pytest.raises(RtfError, match="rank"):
        estimate_interference_subspace(spec, np.arange(10), eye, eye, 0, rank=0)


def test_too_few_target_frames(rng):
    spec = narrowband_spectrogram(rng.standard_normal((4, 10, 3)) + 0j)
    eye = identity_stack(3, 4)
    with pytest.raises(RtfError, match="at least"):
        estimate_target_rtf(spec, np.arange(3), eye, eye, 0)
    with pytest.warns(RuntimeWarning, match="noisy"):
        estimate_target_rtf(spec, np.arange(6), eye, eye, 0)


def test_phase_invariance(rng):
    m, k, f = 4, 3, 60
    frames = rng.standard_normal((m, f, k)) + 1j * rng.standard_normal((m, f, k))
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, k))
    spec = narrowband_spectrogram(frames)
    spec_rot = narrowband_spectrogram(frames * phases[None, None, :])
    eye = identity_stack(k, m)
    a = estimate_target_rtf(spec, np.arange(f), eye, eye, 0)
    b = estimate_target_rtf(spec_rot, np.arange(f), eye, eye, 0)
    np.testing.assert_allclose(a.values, b.values, atol=1e-10)


def test_scale_invariance(rng):
    m, k, f = 4, 3, 60
    frames = rng.standard_normal((m, f, k)) + 1j * rng.standard_normal((m, f, k))
    spec = narrowband_spectrogram(frames)
    spec_scaled = narrowband_spectrogram(7.3 * frames)
    eye = identity_stack(k, m)
    a = estimate_target_rtf(spec, np.arange(f), eye, eye, 0)
    b = estimate_target_rtf(spec_scaled, np.arange(f), eye, eye, 0)
    np.testing.assert_allclose(a.values, b.values, atol=1e-10)


def _consistency_trial(seed):
    """Synthetic per-bin model at 20 dB SNR with estimated noise statistics."""
    rng = np.random.default_rng(seed)
    m, k = 8, 9
    cfg = StftConfig(fft_size=16, hop_size=8)
    a = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    a /= a[:, :1]
    chol = rng.standard_normal((k, m, m)) + 1j * rng.standard_normal((k, m, m))
    chol *= 0.3

    def noise(f):
        white = rng.standard_normal((f, k, m)) + 1j * rng.standard_normal((f, k, m))
        return np.einsum("kmn,fkn->mfk", chol, white)

    noise_frames = noise(400)
    sigma_s = np.sqrt(np.mean(np.abs(noise_frames) ** 2) * m) * 10 ** (20 / 20)
    angles = {}
    target_frames = 800
    s = sigma_s / np.sqrt(2) * (
        rng.standard_normal((target_frames, k)) + 1j * rng.standard_normal((target_frames, k))
    )
    signal = np.einsum("km,fk->mfk", a, s) + noise(target_frames)
    all_frames = np.concatenate([noise_frames, signal], axis=1)
    spec = Spectrogram(all_frames, cfg, RATE)
    cov = estimate_covariance(spec, np.arange(400))
    w, sq = sqrt_pair(cov)
    for count in (50, 200, 800):
        est = estimate_target_rtf(spec, 400 + np.arange(count), w, sq, 0)
        angles[count] = np.median(
            [hermitian_angle(est.values[kk], a[kk]) for kk in range(k)]
        )
    return angles


def test_consistency_trend():
    medians = {50: [], 200: [], 800: []}
    for trial in range(20):
        result = _consistency_trial(900 + trial)
        for count, value in result.items():
            medians[count].append(value)
    m50 = np.median(medians[50])
    m200 = np.median(medians[200])
    m800 = np.median(medians[800])
    assert m50 >= m200 >= m800


def test_hermitian_angle_basics():
    u = np.array([1.0, 0.0])
    assert hermitian_angle(u, u) == pytest.approx(0.0, abs=1e-12)
    assert hermitian_angle(u, [0.0, 1.0]) == pytest.approx(np.pi / 2, abs=1e-12)
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    assert hermitian_angle(u, v) == pytest.approx(np.pi / 4, abs=1e-12)
    # blind to global phase
    assert hermitian_angle(u, u * np.exp(0.7j)) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(RtfError, match="zero vector"):
        hermitian_angle(u, np.zeros(2))


def test_invalid_bin_fallback(rng):
    m, k, f = 3, 3, 30
    # signature with a null at the reference mic in every bin
    a = np.zeros((k, m), dtype=complex)
    a[:, 1] = 1.0
    a[:, 2] = 0.5j
    s = rng.standard_normal((f, k)) + 1j * rng.standard_normal((f, k))
    frames = np.einsum("km,fk->mfk", a, s)
    spec = narrowband_spectrogram(frames)
    eye = identity_stack(k, m)
    est = estimate_target_rtf(spec, np.arange(f), eye, eye, 0)
    assert est.invalid_bins == (0, 1, 2)
    expected = np.zeros(m)
    expected[0] = 1.0
    np.testing.assert_array_equal(est.values[0], expected)


def test_rtf_vector_validation():
    values = np.ones((3, 2), dtype=complex)
    values[1, 0] = 2.0
    with pytest.raises(RtfError, match="reference element"):
        RtfVector(values, 0)
    with pytest.raises(RtfError, match="reference element"):
        InterferenceSubspace(2 * np.ones((3, 2, 1), dtype=complex), 0)


def test_condition_warning(rng):
    basis = np.ones((2, 3, 2), dtype=complex)
    basis[:, 1:, 1] = 1.0 + 1e-12
    with pytest.warns(RuntimeWarning, match="poorly conditioned"):
        InterferenceSubspace(basis, 0)


def test_rtf_from_cross_spectra(rng):
    m, k, f = 4, 3, 200
    a = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    a /= a[:, :1]
    s = rng.standard_normal((f, k)) + 1j * rng.standard_normal((f, k))
    frames = np.einsum("km,fk->mfk", a, s)
    spec = narrowband_spectrogram(frames)
    est = rtf_from_cross_spectra(spec, np.arange(f), 0)
    np.testing.assert_allclose(est.values, a, atol=1e-10)
