"""Scikit-learn style estimators wrapping the functional kernels.

``X`` is always a Spectrogram. The spatial estimator fits on a segment with
annotated frame sets; the beamformers fit weights on the estimation-segment
spectrogram and ``transform`` applies them to any compatible spectrogram.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .audio import AudioClip
from .beamform import (
    ConstraintSet,
    PenaltySchedule,
    apply_weights,
    lcmv_weights,
    matched_filter_weights,
    penalty_optimize,
    selector_weights,
    trivial_constraints,
)
from .rtf import estimate_interference_subspace, estimate_target_rtf
from .spatial import estimate_covariance, sqrt_pair
from .stft import Spectrogram, analyze, synthesize
from .validation import (
    check_frame_sets,
    check_reference,
    check_reference_index,
    check_spectrogram,
)


def _require_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


class CovarianceWhitener(BaseEstimator):
    """Covariance-whitening estimator of the target RTF and interference basis.

    Parameters
    ----------
    reference_mic : index of the reference channel.
    interference_rank : number of interference basis vectors (J - 1).
    floor_ratio : relative eigenvalue floor for the noise statistics.
    """

    def __init__(self, reference_mic=0, interference_rank=1, floor_ratio=1e-6):
        self.reference_mic = reference_mic
        self.interference_rank = interference_rank
        self.floor_ratio = floor_ratio

    def fit(self, X, y=None, *, frame_sets):
        """Estimate noise statistics, target RTF and interference subspace.

        frame_sets maps 'noise'/'target'/'interference' to frame index arrays.
        """
        X = check_spectrogram(X)
        sets = check_frame_sets(frame_sets, X.n_frames)
        for key in ("noise", "target", "interference"):
            if sets[key].size == 0:
                raise ValueError(
                    f"empty {key!r} frame set: this estimator requires separated "
                    "source activity patterns"
                )
        ref = check_reference_index(self.reference_mic, X.n_channels)
        self.noise_cov_ = estimate_covariance(X, sets["noise"])
        self.noise_inv_sqrt_, self.noise_sqrt_ = sqrt_pair(
            self.noise_cov_, self.floor_ratio
        )
        self.target_rtf_ = estimate_target_rtf(
            X, sets["target"], self.noise_inv_sqrt_, self.noise_sqrt_, ref
        )
        self.interference_subspace_ = estimate_interference_subspace(
            X,
            sets["interference"],
            self.noise_inv_sqrt_,
            self.noise_sqrt_,
            ref,
            rank=int(self.interference_rank),
        )
        self.diagnostics_ = {
            "invalid_target_bins": list(self.target_rtf_.invalid_bins),
            "invalid_interference_bins": list(self.interference_subspace_.invalid_bins),
        }
        return self

    def constraint_set(self) -> ConstraintSet:
        """Constraints [a_target | A_interf] with g = [1, 0, ..., 0]."""
        _require_fitted(self, "target_rtf_")
        return ConstraintSet(self.target_rtf_, self.interference_subspace_)


class _WeightsTransformer(TransformerMixin, BaseEstimator):
    """Shared transform/enhance surface for fitted beamformers."""

    def transform(self, X) -> Spectrogram:
        _require_fitted(self, "weights_")
        return apply_weights(self.weights_, check_spectrogram(X))

    def enhance(self, clip: AudioClip) -> AudioClip:
        """Time-domain convenience: analyze, beamform, resynthesize."""
        _require_fitted(self, "weights_")
        spec = analyze(clip, self.weights_.stft_config)
        return synthesize(self.transform(spec))


class LcmvBeamformer(_WeightsTransformer):
    """Closed-form LCMV beamformer fit from constraints and noise statistics.

    fit(X, constraints=..., noise_frames=...) estimates the noise covariance
    from X; passing noise_cov=... uses precomputed statistics instead.
    """

    def __init__(self, floor_ratio=1e-6, ridge_scale=1e-8):
        self.floor_ratio = floor_ratio
        self.ridge_scale = ridge_scale

    def fit(self, X, y=None, *, constraints, noise_cov=None, noise_frames=None):
        X = check_spectrogram(X)
        if noise_cov is None:
            if noise_frames is None:
                raise ValueError("provide noise_cov or noise_frames")
            noise_cov = estimate_covariance(X, noise_frames)
        self.weights_ = lcmv_weights(
            constraints,
            noise_cov,
            floor_ratio=self.floor_ratio,
            ridge_scale=self.ridge_scale,
            stft_config=X.config,
            sample_rate=X.sample_rate,
        )
        return self


class PenaltyBeamformer(_WeightsTransformer):
    """Per-scene penalty-method optimizer of the constrained reconstruction loss.

    The schedule parameters mirror PenaltySchedule; ``init`` selects the
    starting point ('reference' passthrough or 'matched' filter). With
    constraints=None the penalties are forced to zero (unguided).
    """

    def __init__(
        self,
        lambda_pass_max=300.0,
        lambda_null_max=1.0,
        warmup_iters=200,
        ramp_iters=800,
        epsilon=1e-8,
        total_iters=2000,
        step_size=3e-3,
        step_decay=0.1,
        seed=0,
        init="reference",
    ):
        self.lambda_pass_max = lambda_pass_max
        self.lambda_null_max = lambda_null_max
        self.warmup_iters = warmup_iters
        self.ramp_iters = ramp_iters
        self.epsilon = epsilon
        self.total_iters = total_iters
        self.step_size = step_size
        self.step_decay = step_decay
        self.seed = seed
        self.init = init

    def schedule(self) -> PenaltySchedule:
        guided = getattr(self, "_guided", True)
        return PenaltySchedule(
            lambda_pass_max=self.lambda_pass_max if guided else 0.0,
            lambda_null_max=self.lambda_null_max if guided else 0.0,
            warmup_iters=int(self.warmup_iters),
            ramp_iters=int(self.ramp_iters),
            epsilon=self.epsilon,
            total_iters=int(self.total_iters),
            step_size=self.step_size,
            step_decay=self.step_decay,
            seed=int(self.seed),
        )

    def fit(self, X, y, *, constraints=None):
        """Optimize weights on the estimation segment.

        X is the estimation-segment spectrogram; y the time-domain reference
        (the target image at the reference mic, or the mixture itself for the
        unguided configuration).
        """
        X = check_spectrogram(X)
        y = check_reference(y)
        self._guided = constraints is not None
        if constraints is None:
            constraints = trivial_constraints(X.n_bins, X.n_channels)
        if self.init == "reference":
            start = selector_weights(
                X.n_bins, X.n_channels, constraints.target_rtf.reference_index,
                X.config, X.sample_rate,
            )
        elif self.init == "matched":
            start = matched_filter_weights(constraints, X.config, X.sample_rate)
        else:
            raise ValueError(f"init must be 'reference' or 'matched', got {self.init!r}")
        self.weights_, self.trace_ = penalty_optimize(
            X, y, constraints, self.schedule(), start
        )
        return self
