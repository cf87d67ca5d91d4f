"""Acceptance criteria, one test per criterion, with a pass/fail line each.

Heavy fixtures are session-scoped: family A (20 anechoic scenes, J in {2,3})
drives the LCMV residual check; family B (20 anechoic 3-speaker scenes,
protocol distances) drives the penalty-method criteria; family C
(20 far-field in-plane scenes) drives the beampattern criteria.
"""

import time

import numpy as np
import pytest

from beamlab.audio import AudioClip
from beamlab.beamform import (
    BeamWeights,
    ConstraintSet,
    PenaltySchedule,
    lcmv_weights,
    loss_gradient,
    loss_terms,
    oracle_constraints,
    penalty_optimize,
    selector_weights,
    trivial_constraints,
)
from beamlab.estimators import CovarianceWhitener
from beamlab.metrics import (
    beampattern,
    component_metrics,
    local_minima,
    si_sdr,
    source_bearing_deg,
)
from beamlab.rtf import InterferenceSubspace, RtfVector, estimate_target_rtf, hermitian_angle
from beamlab.scenes import ArrayGeometry
from beamlab.simulate import (
    assemble_scene,
    render_source,
    speech_shaped_noise,
    steering_vector,
)
from beamlab.spatial import HermitianStack, estimate_covariance, hermitian_evd, sqrt_pair
from beamlab.stft import DEFAULT_STFT, StftConfig, analyze, synthesize

from conftest import folded_bearing, protocol_scene

RATE = 16000
N_SCENES = 20


def report(criterion: str, passed: bool, detail: str):
    print(f"[{criterion}] {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"{criterion}: {detail}"


def fit_whitener(bundle):
    spec = analyze(bundle.mixture, bundle.stft_config)
    return (
        CovarianceWhitener(interference_rank=bundle.spec.n_speakers - 1).fit(
            spec, frame_sets=bundle.frame_sets
        ),
        spec,
    )


def constraint_residual(weights, constraints):
    stacked = constraints.stacked()
    residual = np.einsum("kmj,km->kj", stacked.conj(), weights.w) - constraints.gains
    keep = [k for k in range(stacked.shape[0]) if k not in weights.fallback_bins]
    return np.abs(residual[keep]).max()


@pytest.fixture(scope="session")
def family_a():
    """20 anechoic scenes, J alternating 2/3, estimated-signature LCMV."""
    rows = []
    for i in range(N_SCENES):
        spec = protocol_scene(1000 + i, n_interferers=1 + i % 2)
        bundle = assemble_scene(spec)
        start = time.perf_counter()
        whitener, _ = fit_whitener(bundle)
        constraints = whitener.constraint_set()
        weights = lcmv_weights(
            constraints, whitener.noise_cov_, stft_config=bundle.stft_config
        )
        elapsed = time.perf_counter() - start
        rows.append(
            {
                "residual": constraint_residual(weights, constraints),
                "seconds": elapsed,
                "fallback": len(weights.fallback_bins),
            }
        )
    return rows


@pytest.fixture(scope="session")
def family_b():
    """20 anechoic 3-speaker scenes: oracle-guided penalty runs plus the
    estimated-signature LCMV baseline and the evaluation reports."""
    rows = []
    for i in range(N_SCENES):
        bundle = assemble_scene(protocol_scene(2000 + i, n_interferers=2))
        est_end = bundle.timeline.estimation_end_s
        est_spec = analyze(bundle.mixture.crop(0.0, est_end), bundle.stft_config)
        target_ref = bundle.target_reference().crop(0.0, est_end)
        constraints = oracle_constraints(bundle)
        start = time.perf_counter()
        weights, trace = penalty_optimize(
            est_spec, target_ref, constraints, PenaltySchedule()
        )
        elapsed = time.perf_counter() - start
        terms = loss_terms(weights, est_spec, target_ref, constraints)
        deviation = np.abs(
            (weights.w.conj() * constraints.target_rtf.values).sum(axis=1) - 1.0
        ).mean()
        whitener, _ = fit_whitener(bundle)
        lcmv = lcmv_weights(
            whitener.constraint_set(), whitener.noise_cov_, stft_config=bundle.stft_config
        )
        rows.append(
            {
                "bundle": bundle,
                "deviation": deviation,
                "null_term": terms[2],
                "seconds": elapsed,
                "report_in": component_metrics(
                    selector_weights(257, 8, 0, bundle.stft_config), bundle
                ),
                "report_pen": component_metrics(weights, bundle),
                "report_lcmv": component_metrics(lcmv, bundle),
            }
        )
    return rows


@pytest.fixture(scope="session")
def family_c():
    """20 anechoic far-field in-plane scenes for the beampattern criteria."""
    rows = []
    for i in range(N_SCENES):
        bundle = assemble_scene(
            protocol_scene(
                3000 + i,
                n_interferers=2,
                distance_range=(2.2, 3.0),
                in_plane=True,
                min_separation_deg=20.0,
                max_bearing_deg=55.0,
            )
        )
        constraints = oracle_constraints(bundle)
        noise = HermitianStack(np.tile(np.eye(8, dtype=complex), (257, 1, 1)))
        lcmv_oracle = lcmv_weights(constraints, noise, stft_config=bundle.stft_config)
        est_end = bundle.timeline.estimation_end_s
        est_spec = analyze(bundle.mixture.crop(0.0, est_end), bundle.stft_config)
        target_ref = bundle.target_reference().crop(0.0, est_end)
        penalty, _ = penalty_optimize(est_spec, target_ref, constraints, PenaltySchedule())
        whitener, _ = fit_whitener(bundle)
        lcmv_est = lcmv_weights(
            whitener.constraint_set(), whitener.noise_cov_, stft_config=bundle.stft_config
        )
        array = bundle.spec.array
        rows.append(
            {
                "array": array,
                "target_bearing": folded_bearing(
                    source_bearing_deg(array, bundle.spec.sources[0].position)
                ),
                "interferer_bearings": [
                    folded_bearing(source_bearing_deg(array, bundle.spec.sources[j].position))
                    for j in bundle.spec.interferer_indices
                ],
                "pattern_lcmv_oracle": beampattern(lcmv_oracle, array),
                "pattern_lcmv_est": beampattern(lcmv_est, array),
                "pattern_penalty": beampattern(penalty, array),
            }
        )
    return rows


def test_c01_lcmv_constraint_residual(family_a):
    worst = max(row["residual"] for row in family_a)
    slowest = max(row["seconds"] for row in family_a)
    passed = worst <= 1e-8 and slowest <= 10.0
    report(
        "C1",
        passed,
        f"max residual {worst:.2e} (limit 1e-8), slowest scene {slowest:.1f}s (limit 10s)",
    )


def test_c02_gradient_oracle(rng):
    h = 1e-6
    checked = 0
    worst = 0.0
    combos = [(2, 3), (2, 9), (4, 3), (4, 9)]
    for idx in range(52):
        m, k = combos[idx % len(combos)]
        fft = 2 * (k - 1)
        cfg = StftConfig(fft_size=fft, hop_size=fft // 2)
        n = 6 * cfg.hop_size + fft
        clip = AudioClip(rng.standard_normal((m, n)) * 0.3, RATE)
        spec = analyze(clip, cfg)
        target = rng.standard_normal(n) * 0.3
        rank = min(2, m - 1)
        a = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
        a[:, 0] = 1.0
        basis = rng.standard_normal((k, m, rank)) + 1j * rng.standard_normal((k, m, rank))
        basis[:, 0, :] = 1.0
        constraints = ConstraintSet(RtfVector(a, 0), InterferenceSubspace(basis, 0))
        w = (rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))) * 0.5

        def grad_of(lam_pass, lam_null, warr):
            return loss_gradient(
                BeamWeights(warr, cfg, RATE), spec, target, constraints, lam_pass, lam_null
            )

        _, _, g_sisdr = grad_of(0.0, 0.0, w)
        g_pass = grad_of(1.0, 0.0, w)[2] - g_sisdr
        g_null = grad_of(0.0, 1.0, w)[2] - g_sisdr
        analytic = {0: g_sisdr, 1: g_pass, 2: g_null}
        fd = {t: np.zeros_like(w) for t in range(3)}
        for kk in range(k):
            for mm in range(m):
                for part in (1.0, 1j):
                    wp, wm = w.copy(), w.copy()
                    wp[kk, mm] += h * part
                    wm[kk, mm] -= h * part
                    _, terms_p, _ = grad_of(0.0, 0.0, wp)
                    _, terms_m, _ = grad_of(0.0, 0.0, wm)
                    for t in range(3):
                        d = (terms_p[t] - terms_m[t]) / (2 * h)
                        fd[t][kk, mm] += d if part == 1.0 else 1j * d
        for t in range(3):
            denom = np.maximum(np.maximum(np.abs(fd[t]), np.abs(analytic[t])), 1e-8)
            worst = max(worst, float((np.abs(analytic[t] - fd[t]) / denom).max()))
        checked += 1
    passed = checked >= 50 and worst <= 1e-4
    report("C2", passed, f"{checked} instances, worst per-term relative error {worst:.2e}")


def test_c03_penalty_constraint_satisfaction(family_b):
    ok = sum(
        1 for row in family_b if row["deviation"] <= 0.05 and row["null_term"] <= -20.0
    )
    slowest = max(row["seconds"] for row in family_b)
    passed = ok >= 18 and slowest <= 300.0
    detail = (
        f"{ok}/20 seeds with mean|w^Ha-1| <= 0.05 and null <= -20 dB "
        f"(median dev {np.median([r['deviation'] for r in family_b]):.3f}, "
        f"median null {np.median([r['null_term'] for r in family_b]):.1f} dB), "
        f"slowest {slowest:.0f}s (limit 300s)"
    )
    report("C3", passed, detail)


def test_c04_enhancement_gain(family_b):
    gains = [r["report_pen"].si_sdr_db - r["report_in"].si_sdr_db for r in family_b]
    median = float(np.median(gains))
    report(
        "C4",
        median >= 4.0,
        f"median SI-SDR gain {median:.2f} dB (needs >= 4; reference gain ~5.9)",
    )


def test_c05_interferer_suppression(family_b):
    medians = []
    for idx in (1, 2):
        values = [r["report_pen"].power_ratios_db[f"interferer_{idx}"] for r in family_b]
        medians.append(float(np.median(values)))
    passed = all(m <= -8.0 for m in medians)
    report(
        "C5",
        passed,
        f"median interferer power ratios {medians[0]:.1f}, {medians[1]:.1f} dB "
        "(each needs <= -8; reference -8.5..-10.9)",
    )


def test_c06_babble_contrast_with_lcmv(family_b):
    deltas = [
        r["report_pen"].power_ratios_db["babble"] - r["report_lcmv"].power_ratios_db["babble"]
        for r in family_b
    ]
    median = float(np.median(deltas))
    report(
        "C6",
        median < 0.0,
        f"median babble ratio delta penalty-vs-LCMV {median:+.2f} dB (needs < 0; "
        "reference -4.28 vs -1.50)",
    )


def _c07_trial(seed: int):
    """Rendered target plus rendered wall babble at 20 dB input SNR."""
    rng = np.random.default_rng(seed)
    room = np.array([7.0, 8.0, 3.0])
    center = np.array([3.5, 4.0, 1.3])
    array = ArrayGeometry.linear(count=8, spacing_m=0.05, center=center,
                                 tilt_deg=rng.uniform(-45, 45))
    bearing = rng.uniform(-np.pi, np.pi)
    dist = rng.uniform(1.0, 1.5)
    pos = center + np.array([dist * np.cos(bearing), dist * np.sin(bearing), 0.0])
    noise_seconds, speech_seconds = 2.0, 13.0
    n_total = int((noise_seconds + speech_seconds) * RATE)
    n_noise = int(noise_seconds * RATE)

    dry = speech_shaped_noise(n_total - n_noise, RATE, rng) * 0.05
    padded = np.concatenate([np.zeros(n_noise), dry])
    target = render_source(AudioClip(padded[None, :], RATE), pos, array, room=room)

    babble = np.zeros((8, n_total))
    wall_rng = np.random.default_rng(seed + 77)
    for i in range(20):
        wall = np.array(
            [
                wall_rng.choice([0.2, room[0] - 0.2]),
                wall_rng.uniform(0.3, room[1] - 0.3),
                wall_rng.uniform(1.0, 2.0),
            ]
        )
        if wall_rng.uniform() < 0.5:
            wall[0], wall[1] = wall_rng.uniform(0.3, room[0] - 0.3), wall_rng.choice(
                [0.2, room[1] - 0.2]
            )
        noise_sig = speech_shaped_noise(n_total, RATE, np.random.default_rng(seed * 31 + i))
        babble += render_source(AudioClip(noise_sig[None, :], RATE), wall, array).clip.samples
    target_rms = np.sqrt(np.mean(target.clip.samples[0, n_noise:] ** 2))
    babble_rms = np.sqrt(np.mean(babble[0] ** 2))
    babble *= target_rms / (10 ** (20 / 20)) / babble_rms  # 20 dB input SNR

    mixture = AudioClip(target.clip.samples + babble, RATE)
    spec = analyze(mixture, DEFAULT_STFT)
    noise_frames = DEFAULT_STFT.frames_inside(0.0, noise_seconds, RATE)
    cov = estimate_covariance(spec, noise_frames)
    w, s = sqrt_pair(cov)
    first = int(np.ceil(n_noise / DEFAULT_STFT.hop_size)) + 1
    truth = steering_vector(DEFAULT_STFT.bin_frequencies(RATE), pos, array)
    out = {}
    for count in (50, 200, 800):
        est = estimate_target_rtf(spec, first + np.arange(count), w, s, 0)
        out[count] = float(
            np.median([hermitian_angle(est.values[k], truth[k]) for k in range(257)])
        )
    return out


def test_c07_cw_estimation_consistency():
    trials = [_c07_trial(4000 + t) for t in range(20)]
    medians = {
        count: float(np.median([t[count] for t in trials])) for count in (50, 200, 800)
    }
    passed = medians[50] >= medians[200] >= medians[800] and medians[800] <= 0.15
    report(
        "C7",
        passed,
        f"median angle vs frames: 50 -> {medians[50]:.3f}, 200 -> {medians[200]:.3f}, "
        f"800 -> {medians[800]:.3f} rad (monotone, final <= 0.15)",
    )


def test_c08_numerical_kernels(rng):
    # EVD reconstruction / characteristic polynomial
    worst_recon = 0.0
    for m in (2, 4, 8):
        mats = rng.standard_normal((60, m, m)) + 1j * rng.standard_normal((60, m, m))
        stack = HermitianStack(mats)
        evd = hermitian_evd(stack)
        scale = np.abs(stack.matrices).max()
        worst_recon = max(
            worst_recon, float(np.abs(evd.reconstruct() - stack.matrices).max() / scale)
        )
    worst_roots = 0.0
    for _ in range(60):
        stack = HermitianStack(
            rng.standard_normal((1, 3, 3)) + 1j * rng.standard_normal((1, 3, 3))
        )
        a = stack.matrices[0]
        coeffs = [
            1.0,
            -np.trace(a).real,
            0.5 * (np.trace(a).real ** 2 - np.trace(a @ a).real),
            -np.linalg.det(a).real,
        ]
        roots = np.sort(np.roots(coeffs).real)[::-1]
        vals = hermitian_evd(stack).eigenvalues[0]
        worst_roots = max(
            worst_roots, float(np.abs(vals - roots).max() / max(np.abs(roots).max(), 1.0))
        )
    # STFT round trip
    x = rng.standard_normal((2, 2 * RATE)) * 0.5
    back = synthesize(analyze(AudioClip(x, RATE)))
    sl = slice(512, -512)
    stft_err = float(
        np.linalg.norm(back.samples[:, sl] - x[:, sl]) / np.linalg.norm(x[:, sl])
    )
    # SI-SDR scale invariance
    s = rng.standard_normal(8000)
    est = s + 0.2 * rng.standard_normal(8000)
    base = si_sdr(est, s)
    sisdr_err = max(abs(si_sdr(alpha * est, s) - base) for alpha in (0.1, 1.0, 7.0))
    passed = (
        worst_recon <= 1e-10
        and worst_roots <= 1e-8
        and stft_err <= 1e-6
        and sisdr_err <= 1e-9
    )
    report(
        "C8",
        passed,
        f"EVD recon {worst_recon:.1e} (<=1e-10), roots {worst_roots:.1e} (<=1e-8), "
        f"STFT {stft_err:.1e} (<=1e-6), SI-SDR scale {sisdr_err:.1e} dB (<=1e-9)",
    )


def test_c09_beampattern_nulls_and_sidelobes(family_c):
    worst_offset = 0.0
    for row in family_c:
        pattern = row["pattern_lcmv_oracle"]
        minima = pattern.angles_deg[local_minima(pattern.wideband_power_db)]
        for bearing in row["interferer_bearings"]:
            offset = float(np.abs(minima - bearing).min()) if minima.size else np.inf
            worst_offset = max(worst_offset, offset)
    deltas = []
    for row in family_c:
        def max_sidelobe(pattern):
            mask = np.abs(pattern.angles_deg - row["target_bearing"]) > 10.0
            return float(pattern.wideband_power_db[mask].max())

        deltas.append(max_sidelobe(row["pattern_penalty"]) - max_sidelobe(row["pattern_lcmv_est"]))
    median_delta = float(np.median(deltas))
    passed = worst_offset <= 5.0 and median_delta <= 0.0
    report(
        "C9",
        passed,
        f"worst null offset {worst_offset:.1f} deg (<=5); median sidelobe delta "
        f"penalty-vs-LCMV {median_delta:+.2f} dB (<=0)",
    )


def test_c10_fully_overlapped_guard(tmp_path):
    from beamlab.cli import main, run_simulate
    from beamlab.scenes import save_scene_spec

    spec = protocol_scene(5000, fully_overlapped=True)
    spec_path = tmp_path / "overlapped.json"
    save_scene_spec(spec, spec_path)
    scene_dir = run_simulate(spec_path, tmp_path / "scene")
    code = main(["estimate", "--scene", str(scene_dir), "--out", str(tmp_path / "est.json")])
    guard_ok = code == 2

    bundle = assemble_scene(spec)
    est_end = bundle.timeline.estimation_end_s
    est_spec = analyze(bundle.mixture.crop(0.0, est_end), bundle.stft_config)
    mixture_ref = bundle.mixture.channel(0).crop(0.0, est_end)
    schedule = PenaltySchedule(lambda_pass_max=0.0, lambda_null_max=0.0)
    weights, _ = penalty_optimize(
        est_spec, mixture_ref, trivial_constraints(257, 8, 0), schedule
    )
    rep = component_metrics(weights, bundle)
    ratios = [rep.power_ratios_db[f"interferer_{i}"] for i in (1, 2)]
    unguided_ok = all(r >= -1.0 for r in ratios)
    passed = guard_ok and unguided_ok
    report(
        "C10",
        passed,
        f"estimate exit code {code} (needs 2); unguided interferer ratios "
        f"{ratios[0]:+.2f}, {ratios[1]:+.2f} dB (each >= -1; reference unguided row ~ -0.02)",
    )
