"""Microphone-array beamforming lab.

Scene simulation, covariance-whitening RTF/subspace estimation, closed-form
LCMV and penalty-optimized beamformers, plus evaluation and beampattern
tooling. The estimator API (CovarianceWhitener, LcmvBeamformer,
PenaltyBeamformer) wraps the functional kernels in the submodules.
"""

from .audio import AudioClip, AudioIOError, read_wav, write_wav
from .beamform import (
    BeamformError,
    BeamWeights,
    ConstraintSet,
    OptimizationTrace,
    PenaltySchedule,
    apply_weights,
    average_time_varying,
    lcmv_weights,
    loss_gradient,
    loss_terms,
    matched_filter_weights,
    oracle_constraints,
    penalty_optimize,
    selector_weights,
    trivial_constraints,
)
from .estimators import CovarianceWhitener, LcmvBeamformer, PenaltyBeamformer
from .metrics import (
    Beampattern,
    MetricsReport,
    beampattern,
    component_metrics,
    local_minima,
    si_sdr,
    source_bearing_deg,
)
from .rtf import (
    InterferenceSubspace,
    RtfError,
    RtfVector,
    estimate_interference_subspace,
    estimate_target_rtf,
    hermitian_angle,
    rtf_from_cross_spectra,
)
from .scenes import (
    ArrayGeometry,
    BabbleSpec,
    SceneError,
    SceneSpec,
    SegmentPlan,
    SourceSpec,
    load_scene_spec,
    save_scene_spec,
)
from .simulate import (
    SceneBundle,
    SourceImage,
    assemble_scene,
    derive_frame_sets,
    load_scene,
    render_babble,
    render_source,
    render_with_rir,
    seeded_rng,
    speech_like_clip,
    speech_shaped_noise,
    steering_vector,
    write_scene,
)
from .spatial import (
    EigenDecomposition,
    HermitianStack,
    SpatialError,
    estimate_covariance,
    hermitian_evd,
    inv_sqrt,
    psd_inverse,
    psd_sqrt,
    sqrt_pair,
    whiten_covariance,
)
from .stft import DEFAULT_STFT, Spectrogram, StftConfig, StftError, analyze, synthesize

__version__ = "0.1.0"
