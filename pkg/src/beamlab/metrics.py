"""Evaluation: SI-SDR, SNR/SIR, per-component power ratios, beampatterns.

All metrics are computed over an evaluation window and each per-source image
is beamformed separately; outputs are normalized to preserve the target
power, so the target power ratio is identically 0 dB.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .audio import AudioClip
from .beamform import BeamWeights, apply_weights
from .scenes import ArrayGeometry
from .simulate import SceneBundle, steering_vector
from .stft import analyze, synthesize

SI_SDR_CAP_DB = 60.0
_DB_FLOOR = 1e-30


class MetricsError(ValueError):
    """Raised for inconsistent metric inputs."""


def _mono(x) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.mono()
    return np.asarray(x, dtype=np.float64).reshape(-1)


def si_sdr(estimate, reference, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant SDR in dB, capped at +-cap_db.

    10*log10(||alpha s||^2 / ||alpha s - s_hat||^2) with
    alpha = <s_hat, s> / ||s||^2.
    """
    est = _mono(estimate)
    ref = _mono(reference)
    if est.shape != ref.shape:
        raise MetricsError(f"length mismatch: estimate {est.shape}, reference {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise MetricsError("zero reference signal")
    alpha = float(est @ ref) / ref_energy
    projected = alpha * ref
    err = projected - est
    p2 = float(projected @ projected)
    e2 = float(err @ err)
    if p2 == 0.0:
        return -cap_db
    if e2 == 0.0:
        return cap_db
    return float(np.clip(10.0 * math.log10(p2 / e2), -cap_db, cap_db))


def _db_ratio(num: float, den: float) -> float:
    return 10.0 * math.log10(max(num, _DB_FLOOR) / max(den, _DB_FLOOR))


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    """One method's metrics over an evaluation window.

    power_ratios_db maps component labels (target, interferer_<i>, babble)
    to output/input energy ratios after target-power normalization.
    """

    method: str
    si_sdr_db: float
    snr_db: float
    sir_db: float
    power_ratios_db: dict
    window_s: tuple
    notes: str = "full-window energies; silence gaps inside the window are not excluded"

    def __post_init__(self):
        values = [self.si_sdr_db, self.snr_db, self.sir_db, *self.power_ratios_db.values()]
        if not all(math.isfinite(v) for v in values):
            raise MetricsError("metric values must be finite")


def component_metrics(
    weights: BeamWeights,
    bundle: SceneBundle,
    window_s: tuple = (2.5, 8.0),
    enhanced: AudioClip = None,
) -> MetricsReport:
    """Beamform each per-source image separately and report component metrics.

    SNR is target-out over babble-out energy, SIR target-out over summed
    interferer-out energy, and each power ratio compares a component's
    beamformed energy against its reference-microphone input energy. When
    ``enhanced`` is given, SI-SDR is computed from it instead of the
    internally beamformed mixture.
    """
    spec = bundle.spec
    rate = spec.sample_rate
    start, stop = window_s
    mix_start = bundle.timeline.boundaries()["estimation_mixture"][0]
    if spec.fully_overlapped:
        mix_start = 0.0
    if not (mix_start <= start < stop <= bundle.timeline.total_s + 1e-9):
        raise MetricsError(
            f"window [{start}, {stop}] s must lie within the all-active span "
            f"[{mix_start}, {bundle.timeline.total_s}] s"
        )
    i0 = int(round(start * rate))
    i1 = int(round(stop * rate))
    if i1 > bundle.mixture.n_samples:
        raise MetricsError("window extends past the recording")
    ref = spec.array.reference_index
    if not bundle.images:
        raise MetricsError("scene bundle has no per-source images")

    def beamformed(clip: AudioClip) -> np.ndarray:
        out = synthesize(apply_weights(weights, analyze(clip, bundle.stft_config)))
        return out.samples[0, i0:i1]

    target_img = bundle.target_image
    target_in = target_img.clip.samples[ref, i0:i1]
    target_out = beamformed(target_img.clip)
    babble_out = beamformed(bundle.babble_image.clip)
    babble_in = bundle.babble_image.clip.samples[ref, i0:i1]
    interferer_out = {}
    interferer_in = {}
    for idx, img in enumerate(bundle.interferer_images, start=1):
        interferer_out[idx] = beamformed(img.clip)
        interferer_in[idx] = img.clip.samples[ref, i0:i1]

    e_t_in = float(target_in @ target_in)
    e_t_out = float(target_out @ target_out)
    if e_t_in == 0.0 or e_t_out == 0.0:
        raise MetricsError("target component has no energy in the evaluation window")
    # normalization preserving target power; ratios of outputs are unaffected
    norm = e_t_in / e_t_out

    ratios = {"target": 0.0}
    for idx in interferer_out:
        e_in = float(interferer_in[idx] @ interferer_in[idx])
        e_out = float(interferer_out[idx] @ interferer_out[idx])
        ratios[f"interferer_{idx}"] = _db_ratio(norm * e_out, e_in)
    e_b_in = float(babble_in @ babble_in)
    e_b_out = float(babble_out @ babble_out)
    ratios["babble"] = _db_ratio(norm * e_b_out, e_b_in)

    e_i_out = sum(float(v @ v) for v in interferer_out.values())
    snr = _db_ratio(e_t_out, e_b_out)
    sir = _db_ratio(e_t_out, e_i_out) if interferer_out else SI_SDR_CAP_DB

    if enhanced is not None:
        est = enhanced.mono()
        if est.shape[0] < i1:
            raise MetricsError("enhanced signal shorter than the evaluation window")
        estimate = est[i0:i1]
    else:
        estimate = beamformed(bundle.mixture)
    sdr = si_sdr(estimate, target_in)

    return MetricsReport(
        method=weights.method,
        si_sdr_db=sdr,
        snr_db=float(np.clip(snr, -300, 300)),
        sir_db=float(np.clip(sir, -300, 300)),
        power_ratios_db={k: float(np.clip(v, -300, 300)) for k, v in ratios.items()},
        window_s=(float(start), float(stop)),
    )


@dataclasses.dataclass(frozen=True)
class Beampattern:
    """Narrowband responses B(k, theta) and wideband beampower P(theta).

    wideband_power_db is sum_k |B(k,theta)|^2 in dB, normalized to its max.
    """

    angles_deg: np.ndarray
    narrowband: np.ndarray  # (K, n_angles) complex
    wideband_power_db: np.ndarray  # (n_angles,)


def _array_axes(array: ArrayGeometry):
    """Horizontal unit vectors along the array and broadside to it."""
    axis = array.mic_positions[-1] - array.mic_positions[0]
    axis[2] = 0.0
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise MetricsError("array has no horizontal extent; bearing undefined")
    axis = axis / norm
    broadside = np.array([-axis[1], axis[0], 0.0])
    return axis, broadside


def bearing_positions(
    array: ArrayGeometry, angles_deg: np.ndarray, distance_m: float
) -> np.ndarray:
    """Points at the given bearings: 0 deg is broadside, +-90 deg endfire."""
    axis, broadside = _array_axes(array)
    theta = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    center = array.center
    return (
        center[None, :]
        + distance_m * np.sin(theta)[:, None] * axis[None, :]
        + distance_m * np.cos(theta)[:, None] * broadside[None, :]
    )


def source_bearing_deg(array: ArrayGeometry, position) -> float:
    """Bearing of a point in the array's broadside/axis frame, in degrees."""
    axis, broadside = _array_axes(array)
    rel = np.asarray(position, dtype=np.float64) - array.center
    return float(np.degrees(np.arctan2(rel @ axis, rel @ broadside)))


def beampattern(
    weights: BeamWeights,
    array: ArrayGeometry,
    angles_deg=None,
    distance_m: float = 100.0,
) -> Beampattern:
    """B(k, theta) = w(k)^H h(k, theta) on a bearing grid, plus its beampower."""
    if angles_deg is None:
        angles_deg = np.arange(-90.0, 90.5, 1.0)
    angles_deg = np.asarray(angles_deg, dtype=np.float64).reshape(-1)
    if angles_deg.size == 0:
        raise MetricsError("empty angle grid")
    freqs = weights.stft_config.bin_frequencies(weights.sample_rate)
    positions = bearing_positions(array, angles_deg, distance_m)
    narrow = np.empty((weights.n_bins, angles_deg.size), dtype=np.complex128)
    for a, pos in enumerate(positions):
        h = steering_vector(freqs, pos, array)  # (K, M)
        narrow[:, a] = np.einsum("km,km->k", weights.w.conj(), h)
    power = (np.abs(narrow) ** 2).sum(axis=0)
    power_db = 10.0 * np.log10(np.maximum(power, _DB_FLOOR))
    power_db = power_db - power_db.max()
    return Beampattern(angles_deg, narrow, power_db)


def local_minima(values: np.ndarray) -> np.ndarray:
    """Indices of strict interior local minima."""
    v = np.asarray(values, dtype=np.float64)
    idx = np.nonzero((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:]))[0] + 1
    return idx
