"""File formats exchanged between pipeline stages.

Complex arrays are serialized as nested [re, im] pairs in JSON; traces,
metrics and beampatterns are CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .beamform import BeamWeights, OptimizationTrace, PenaltySchedule
from .metrics import Beampattern, MetricsReport
from .rtf import InterferenceSubspace, RtfVector
from .spatial import HermitianStack
from .stft import DEFAULT_STFT, StftConfig

GUIDANCE_MODES = ("estimated", "oracle", "none")
METHODS = ("lcmv", "penalty")


class ArtifactError(ValueError):
    """Raised for malformed pipeline artifacts."""


def complex_to_pairs(array: np.ndarray) -> list:
    stacked = np.stack([np.real(array), np.imag(array)], axis=-1)
    stacked = stacked + 0.0  # canonicalize -0.0 so save/load/save is byte-stable
    return stacked.tolist()


def pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ArtifactError(f"expected trailing [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclasses.dataclass(frozen=True)
class EstimationArtifact:
    """Everything the beamformers consume from the estimation stage."""

    target_rtf: RtfVector
    interference_subspace: InterferenceSubspace
    noise_cov: HermitianStack
    diagnostics: dict
    provenance: dict

    def __post_init__(self):
        k, m = self.target_rtf.values.shape
        if self.interference_subspace.basis.shape[:2] != (k, m):
            raise ArtifactError("interference subspace shape mismatch")
        if self.noise_cov.matrices.shape != (k, m, m):
            raise ArtifactError("noise covariance shape mismatch")


def save_estimation_artifact(artifact: EstimationArtifact, path) -> None:
    payload = {
        "reference_index": artifact.target_rtf.reference_index,
        "target_rtf": complex_to_pairs(artifact.target_rtf.values),
        "interference_subspace": complex_to_pairs(artifact.interference_subspace.basis),
        "noise_cov": complex_to_pairs(artifact.noise_cov.matrices),
        "noise_frame_count": artifact.noise_cov.frame_count,
        "diagnostics": artifact.diagnostics,
        "provenance": artifact.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_estimation_artifact(path) -> EstimationArtifact:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing estimation artifact: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        ref = int(payload["reference_index"])
        diagnostics = payload["diagnostics"]
        target = RtfVector(
            pairs_to_complex(payload["target_rtf"]),
            ref,
            invalid_bins=tuple(diagnostics.get("invalid_target_bins", ())),
        )
        subspace = InterferenceSubspace(
            pairs_to_complex(payload["interference_subspace"]),
            ref,
            invalid_bins=tuple(diagnostics.get("invalid_interference_bins", ())),
        )
        noise = HermitianStack(
            pairs_to_complex(payload["noise_cov"]),
            frame_count=int(payload.get("noise_frame_count", 0)),
        )
        return EstimationArtifact(target, subspace, noise, diagnostics, payload["provenance"])
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"malformed estimation artifact {path}: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Pipeline settings: transform, schedule, guidance and method selection."""

    stft: StftConfig = DEFAULT_STFT
    schedule: PenaltySchedule = PenaltySchedule()
    guidance: str = "estimated"
    method: str = "penalty"
    reference_mic: int = 0
    evaluation_window_s: tuple = (2.5, 8.0)

    def __post_init__(self):
        if self.guidance not in GUIDANCE_MODES:
            raise ArtifactError(f"guidance must be one of {GUIDANCE_MODES}")
        if self.method not in METHODS:
            raise ArtifactError(f"method must be one of {METHODS}")
        if self.method == "lcmv" and self.guidance == "none":
            raise ArtifactError("method 'lcmv' requires guidance 'estimated' or 'oracle'")
        window = tuple(float(v) for v in self.evaluation_window_s)
        if len(window) != 2 or window[0] >= window[1]:
            raise ArtifactError(f"bad evaluation window {window}")
        object.__setattr__(self, "evaluation_window_s", window)

    def effective_schedule(self) -> PenaltySchedule:
        """The schedule actually used; guidance 'none' forces zero penalties."""
        if self.guidance == "none":
            return dataclasses.replace(
                self.schedule, lambda_pass_max=0.0, lambda_null_max=0.0
            )
        return self.schedule

    def to_dict(self) -> dict:
        return {
            "stft": dataclasses.asdict(self.stft),
            "schedule": dataclasses.asdict(self.schedule),
            "guidance": self.guidance,
            "method": self.method,
            "reference_mic": self.reference_mic,
            "evaluation_window_s": list(self.evaluation_window_s),
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    kwargs = {}
    if "stft" in data:
        kwargs["stft"] = StftConfig(**data["stft"])
    if "schedule" in data:
        kwargs["schedule"] = PenaltySchedule(**data["schedule"])
    for key in ("guidance", "method", "reference_mic"):
        if key in data:
            kwargs[key] = data[key]
    if "evaluation_window_s" in data:
        kwargs["evaluation_window_s"] = tuple(data["evaluation_window_s"])
    return ExperimentConfig(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing config file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"malformed config JSON {path}: {exc}") from exc
    return experiment_config_from_dict(data)


def save_weights(weights: BeamWeights, path) -> None:
    payload = {
        "method": weights.method,
        "sample_rate": weights.sample_rate,
        "stft": dataclasses.asdict(weights.stft_config),
        "fallback_bins": list(weights.fallback_bins),
        "weights": complex_to_pairs(weights.w),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> BeamWeights:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing weights file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"malformed weights JSON {path}: {exc}") from exc
    try:
        return BeamWeights(
            pairs_to_complex(payload["weights"]),
            StftConfig(**payload["stft"]),
            int(payload["sample_rate"]),
            method=payload.get("method", "unspecified"),
            fallback_bins=tuple(payload.get("fallback_bins", ())),
        )
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"malformed weights file {path}: {exc}") from exc


TRACE_COLUMNS = ("iter", "si_sdr_term", "pass_term", "null_term", "lambda_pass", "lambda_null")


def save_trace(trace: OptimizationTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for i in range(trace.n_iterations):
            writer.writerow(
                [
                    i,
                    f"{trace.si_sdr_term[i]:.9g}",
                    f"{trace.pass_term[i]:.9g}",
                    f"{trace.null_term[i]:.9g}",
                    f"{trace.lambda_pass[i]:.9g}",
                    f"{trace.lambda_null[i]:.9g}",
                ]
            )


def load_trace(path) -> OptimizationTrace:
    rows = np.genfromtxt(path, delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    return OptimizationTrace(
        si_sdr_term=rows["si_sdr_term"],
        pass_term=rows["pass_term"],
        null_term=rows["null_term"],
        lambda_pass=rows["lambda_pass"],
        lambda_null=rows["lambda_null"],
    )


METRICS_COLUMNS = ("metric", "value_db", "component", "method", "scene_id")


def metrics_rows(report: MetricsReport, scene_id: str) -> list:
    rows = [
        ("si_sdr", report.si_sdr_db, "target", report.method, scene_id),
        ("snr", report.snr_db, "target", report.method, scene_id),
        ("sir", report.sir_db, "target", report.method, scene_id),
    ]
    for component, value in report.power_ratios_db.items():
        rows.append(("pwr_ratio", value, component, report.method, scene_id))
    return rows


def save_metrics(reports, path, scene_id: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for report in reports:
            for metric, value, component, method, sid in metrics_rows(report, scene_id):
                writer.writerow([metric, f"{value:.4f}", component, method, sid])


def save_beampattern(pattern: Beampattern, path, narrowband_path: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("angle_deg", "beampower_db"))
        for angle, value in zip(pattern.angles_deg, pattern.wideband_power_db):
            writer.writerow([f"{angle:.4f}", f"{value:.6f}"])
    if narrowband_path is not None:
        with open(narrowband_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("bin", "angle_deg", "re", "im"))
            for k in range(pattern.narrowband.shape[0]):
                for a, angle in enumerate(pattern.angles_deg):
                    value = pattern.narrowband[k, a]
                    writer.writerow(
                        [k, f"{angle:.4f}", f"{value.real:.9g}", f"{value.imag:.9g}"]
                    )
