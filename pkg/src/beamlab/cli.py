"""Command-line pipeline: simulate -> estimate -> beamform -> evaluate.

Each stage reads and writes plain files (WAV / JSON / CSV) so stages compose
without hidden state and scenes can be batch-processed externally.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .artifacts import (
    ArtifactError,
    EstimationArtifact,
    ExperimentConfig,
    load_estimation_artifact,
    load_experiment_config,
    load_weights,
    save_beampattern,
    save_estimation_artifact,
    save_metrics,
    save_trace,
    save_weights,
)
from .audio import AudioIOError, read_wav, write_wav
from .beamform import (
    BeamformError,
    ConstraintSet,
    apply_weights,
    lcmv_weights,
    oracle_constraints,
    penalty_optimize,
    selector_weights,
    trivial_constraints,
)
from .estimators import CovarianceWhitener
from .metrics import MetricsError, beampattern, component_metrics
from .rtf import RtfError
from .scenes import SceneError, load_scene_spec
from .simulate import SceneBundle, assemble_scene, derive_frame_sets, load_scene, write_scene
from .spatial import SpatialError, estimate_covariance
from .stft import StftError, analyze, synthesize

_ERRORS = (
    ArtifactError,
    AudioIOError,
    BeamformError,
    MetricsError,
    RtfError,
    SceneError,
    SpatialError,
    StftError,
    ValueError,
)


def run_simulate(scene_path, out_dir, seed=None) -> Path:
    spec = load_scene_spec(scene_path)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=int(seed))
    bundle = assemble_scene(spec, base_dir=Path(scene_path).parent)
    return write_scene(bundle, out_dir)


def _frame_sets_for(bundle: SceneBundle, config: ExperimentConfig) -> dict:
    if config.stft == bundle.stft_config:
        return bundle.frame_sets
    return derive_frame_sets(bundle.spec, config.stft)


def run_estimate(scene_dir, config: ExperimentConfig, out_path) -> EstimationArtifact:
    bundle = load_scene(scene_dir)
    sets = _frame_sets_for(bundle, config)
    if any(sets[key].size == 0 for key in ("noise", "target", "interference")):
        raise SceneError(
            "empty single-activity frame sets: covariance-whitening estimation "
            "requires separated source activity patterns (fully overlapped "
            "scenes are rejected)"
        )
    spec = analyze(bundle.mixture, config.stft)
    whitener = CovarianceWhitener(
        reference_mic=config.reference_mic,
        interference_rank=bundle.spec.n_speakers - 1,
    ).fit(spec, frame_sets=sets)
    artifact = EstimationArtifact(
        target_rtf=whitener.target_rtf_,
        interference_subspace=whitener.interference_subspace_,
        noise_cov=whitener.noise_cov_,
        diagnostics=whitener.diagnostics_,
        provenance={"scene": str(scene_dir), "config_hash": config.hash()},
    )
    save_estimation_artifact(artifact, out_path)
    return artifact


def run_beamform(scene_dir, config: ExperimentConfig, out_dir, estimation_path=None) -> dict:
    bundle = load_scene(scene_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    est_end = bundle.timeline.estimation_end_s
    est_spec = analyze(bundle.mixture.crop(0.0, est_end), config.stft)
    ref = config.reference_mic

    constraints = None
    noise_cov = None
    if config.guidance == "estimated":
        path = Path(estimation_path) if estimation_path else Path(scene_dir) / "estimation.json"
        if not path.exists():
            raise ArtifactError(f"missing estimation artifact in estimated mode: {path}")
        artifact = load_estimation_artifact(path)
        constraints = ConstraintSet(artifact.target_rtf, artifact.interference_subspace)
        noise_cov = artifact.noise_cov
    elif config.guidance == "oracle":
        constraints = oracle_constraints(bundle)

    if config.guidance == "none":
        target_ref = bundle.mixture.channel(ref).crop(0.0, est_end)
    else:
        target_ref = bundle.target_reference().crop(0.0, est_end)

    trace = None
    if config.method == "lcmv":
        if noise_cov is None:
            sets = _frame_sets_for(bundle, config)
            if sets["noise"].size == 0:
                raise SceneError("LCMV needs noise-only frames to estimate the covariance")
            noise_cov = estimate_covariance(est_spec, sets["noise"])
        weights = lcmv_weights(
            constraints, noise_cov, stft_config=config.stft,
            sample_rate=bundle.spec.sample_rate,
        )
    else:
        schedule = config.effective_schedule()
        fit_constraints = constraints
        if fit_constraints is None:
            fit_constraints = trivial_constraints(est_spec.n_bins, est_spec.n_channels, ref)
        init = selector_weights(
            est_spec.n_bins, est_spec.n_channels, ref, config.stft,
            bundle.spec.sample_rate,
        )
        weights, trace = penalty_optimize(est_spec, target_ref, fit_constraints, schedule, init)

    full_spec = analyze(bundle.mixture, config.stft)
    enhanced = synthesize(apply_weights(weights, full_spec))

    paths = {
        "enhanced": out_dir / "enhanced.wav",
        "weights": out_dir / "weights.json",
    }
    write_wav(enhanced, paths["enhanced"])
    save_weights(weights, paths["weights"])
    if trace is not None:
        paths["trace"] = out_dir / "trace.csv"
        save_trace(trace, paths["trace"])
    return paths


def run_evaluate(scene_dir, enhanced_path, weights_path, out_csv, config: ExperimentConfig):
    bundle = load_scene(scene_dir)
    weights = load_weights(weights_path)
    enhanced = read_wav(enhanced_path)
    if enhanced.n_samples != bundle.mixture.n_samples:
        raise MetricsError(
            f"length mismatch: enhanced {enhanced.n_samples} vs scene "
            f"{bundle.mixture.n_samples} samples"
        )
    window = config.evaluation_window_s
    selector = selector_weights(
        weights.n_bins, weights.n_channels, config.reference_mic,
        weights.stft_config, weights.sample_rate,
    )
    input_report = dataclasses.replace(
        component_metrics(selector, bundle, window), method="input"
    )
    method_report = component_metrics(weights, bundle, window, enhanced=enhanced)
    reports = [input_report, method_report]
    save_metrics(reports, out_csv, scene_id=Path(scene_dir).name)
    return reports


def run_beampattern(weights_path, scene_dir, out_csv, narrowband_csv=None):
    weights = load_weights(weights_path)
    spec = load_scene_spec(Path(scene_dir) / "spec.json")
    pattern = beampattern(weights, spec.array)
    save_beampattern(pattern, out_csv, narrowband_csv)
    return pattern


def run_all(scene_path, out_dir, config: ExperimentConfig, seed=None) -> dict:
    out_dir = Path(out_dir)
    scene_dir = run_simulate(scene_path, out_dir / "scene", seed=seed)
    estimation_path = None
    if config.guidance == "estimated":
        estimation_path = out_dir / "estimation.json"
        run_estimate(scene_dir, config, estimation_path)
    paths = run_beamform(scene_dir, config, out_dir, estimation_path)
    run_evaluate(scene_dir, paths["enhanced"], paths["weights"], out_dir / "metrics.csv", config)
    run_beampattern(paths["weights"], scene_dir, out_dir / "beampattern.csv")
    paths.update(
        {
            "scene": scene_dir,
            "metrics": out_dir / "metrics.csv",
            "beampattern": out_dir / "beampattern.csv",
        }
    )
    if estimation_path is not None:
        paths["estimation"] = estimation_path
    return paths


def _config_from_args(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = load_experiment_config(args.config)
    else:
        config = ExperimentConfig()
    overrides = {}
    if getattr(args, "method", None):
        overrides["method"] = args.method
    if getattr(args, "guidance", None):
        overrides["guidance"] = args.guidance
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamlab",
        description="Simulate multichannel scenes, estimate spatial signatures, "
        "fit beamformers and evaluate them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scene description to a directory")
    p.add_argument("--scene", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")

    p = sub.add_parser("estimate", help="covariance-whitening estimation artifact")
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="estimation artifact JSON path")
    p.add_argument("--config", default=None, help="experiment config JSON")

    p = sub.add_parser("beamform", help="fit weights and write the enhanced output")
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--method", choices=("lcmv", "penalty"), default=None)
    p.add_argument("--guidance", choices=("estimated", "oracle", "none"), default=None)
    p.add_argument("--estimation", default=None, help="estimation artifact path")

    p = sub.add_parser("evaluate", help="metrics CSV for an enhanced recording")
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--enhanced", required=True, help="enhanced WAV path")
    p.add_argument("--weights", required=True, help="weights JSON path")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--config", default=None, help="experiment config JSON")

    p = sub.add_parser("beampattern", help="wideband beampower CSV for saved weights")
    p.add_argument("--weights", required=True, help="weights JSON path")
    p.add_argument("--scene", required=True, help="scene directory (array geometry)")
    p.add_argument("--out", required=True, help="beampattern CSV path")
    p.add_argument("--narrowband", default=None, help="optional narrowband CSV path")

    p = sub.add_parser("run-all", help="simulate, estimate, beamform, evaluate, beampattern")
    p.add_argument("--scene", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--method", choices=("lcmv", "penalty"), default=None)
    p.add_argument("--guidance", choices=("estimated", "oracle", "none"), default=None)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            out = run_simulate(args.scene, args.out, seed=args.seed)
            print(out)
        elif args.command == "estimate":
            run_estimate(args.scene, _config_from_args(args), args.out)
            print(args.out)
        elif args.command == "beamform":
            paths = run_beamform(
                args.scene, _config_from_args(args), args.out, args.estimation
            )
            for path in paths.values():
                print(path)
        elif args.command == "evaluate":
            run_evaluate(
                args.scene, args.enhanced, args.weights, args.out, _config_from_args(args)
            )
            print(args.out)
        elif args.command == "beampattern":
            run_beampattern(args.weights, args.scene, args.out, args.narrowband)
            print(args.out)
        elif args.command == "run-all":
            paths = run_all(args.scene, args.out, _config_from_args(args), seed=args.seed)
            for path in paths.values():
                print(path)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
