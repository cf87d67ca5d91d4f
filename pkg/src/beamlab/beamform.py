"""Time-invariant beamformers: closed-form LCMV and penalty-method weights.

The penalty path minimizes

    L = -si_sdr(synth(w^H y), s_ref)
        + lambda_pass(t)  * mean_k |w(k)^H a(k) - 1|^2
        + lambda_null(t)  * mean_k 10*log10(||w(k)^H A(k)||^2 + eps)

over the complex weights. Gradients follow the conjugate-coordinate
convention and are packed as d/d(Re w) + 1j * d/d(Im w), validated against
central finite differences.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from .rtf import InterferenceSubspace, RtfVector, rtf_from_cross_spectra
from .scenes import CANONICAL_RATE
from .simulate import SceneBundle, steering_vector
from .spatial import HermitianStack, psd_inverse
from .stft import DEFAULT_STFT, Spectrogram, StftConfig, analyze, synthesis_envelope, _ola

#: global gradient-norm clip for the optimizer
GRAD_CLIP = 1e3

#: per-bin weight-norm sanity bound
MAX_WEIGHT_NORM = 1e3

_LOG10 = math.log(10.0)


class BeamformError(ValueError):
    """Raised for invalid beamforming inputs or diverged optimizations."""


@dataclasses.dataclass(frozen=True)
class ConstraintSet:
    """Target signature, interference basis and the response vector g.

    The stacked constraint matrix C(k) = [a_target | A_interf] has
    J = 1 + rank columns; g holds the desired response per column (1 for the
    target, 0 for each interference direction).
    """

    target_rtf: RtfVector
    interference: InterferenceSubspace
    gains: np.ndarray = None

    def __post_init__(self):
        if self.target_rtf.values.shape[0] != self.interference.basis.shape[0]:
            raise BeamformError("target RTF and interference basis disagree on bin count")
        if self.target_rtf.values.shape[1] != self.interference.basis.shape[1]:
            raise BeamformError("target RTF and interference basis disagree on channels")
        j = 1 + self.interference.rank
        gains = self.gains
        if gains is None:
            gains = np.zeros(j)
            gains[0] = 1.0
        gains = np.asarray(gains, dtype=np.float64).reshape(-1)
        if gains.shape[0] != j:
            raise BeamformError(f"g must have J={j} entries, got {gains.shape[0]}")
        if not np.isin(gains, (0.0, 1.0)).all():
            raise BeamformError("g entries must be 0 or 1")
        if gains[0] != 1.0 or gains[1:].any():
            raise BeamformError("this artifact uses g = [1, 0, ..., 0] (single target)")
        if j > self.target_rtf.values.shape[1]:
            raise BeamformError(
                f"J={j} constraints exceed M={self.target_rtf.values.shape[1]} channels"
            )
        gains.flags.writeable = False
        object.__setattr__(self, "gains", gains)

    @property
    def n_constraints(self) -> int:
        return 1 + self.interference.rank

    def stacked(self) -> np.ndarray:
        """C(k) = [a_target | A_interf], shape (K, M, J)."""
        return np.concatenate(
            [self.target_rtf.values[:, :, None], self.interference.basis], axis=2
        )


@dataclasses.dataclass(frozen=True)
class BeamWeights:
    """Per-bin complex weight vectors w(k) plus transform provenance."""

    w: np.ndarray  # (K, M) complex
    stft_config: StftConfig = DEFAULT_STFT
    sample_rate: int = CANONICAL_RATE
    method: str = "unspecified"
    fallback_bins: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.complex128)
        if w.ndim != 2:
            raise BeamformError(f"weights must be (K, M), got {w.shape}")
        if not np.isfinite(w).all():
            raise BeamformError("non-finite beamformer weights")
        norms = np.linalg.norm(w, axis=1)
        if norms.max() > MAX_WEIGHT_NORM:
            raise BeamformError(
                f"weight norm {norms.max():.3e} exceeds sanity bound {MAX_WEIGHT_NORM:.0e}"
            )
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "fallback_bins", tuple(int(b) for b in self.fallback_bins))

    @property
    def n_bins(self) -> int:
        return self.w.shape[0]

    @property
    def n_channels(self) -> int:
        return self.w.shape[1]


def selector_weights(
    n_bins: int,
    n_channels: int,
    reference_index: int = 0,
    stft_config: StftConfig = DEFAULT_STFT,
    sample_rate: int = CANONICAL_RATE,
) -> BeamWeights:
    """Passthrough weights w(k) = e_ref."""
    w = np.zeros((n_bins, n_channels), dtype=np.complex128)
    w[:, reference_index] = 1.0
    return BeamWeights(w, stft_config, sample_rate, method="reference")


def matched_filter_weights(constraints: ConstraintSet, stft_config=DEFAULT_STFT,
                           sample_rate: int = CANONICAL_RATE) -> BeamWeights:
    """Matched-filter initialization w(k) = a(k) / ||a(k)||^2."""
    a = constraints.target_rtf.values
    w = a / np.maximum((np.abs(a) ** 2).sum(axis=1, keepdims=True), np.finfo(float).tiny)
    return BeamWeights(w, stft_config, sample_rate, method="matched")


@dataclasses.dataclass(frozen=True)
class PenaltySchedule:
    """Penalty maxima, warm-up/ramp lengths and optimizer settings.

    lambda(t) = lambda_max * clamp((t - warmup_iters) / ramp_iters, 0, 1):
    zero during warm-up, then a linear ramp to the maximum. Once the ramp
    saturates the step size decays linearly to step_decay * step_size, which
    settles the equilibrium between the reconstruction and penalty terms.
    """

    lambda_pass_max: float = 300.0
    lambda_null_max: float = 1.0
    warmup_iters: int = 200
    ramp_iters: int = 800
    epsilon: float = 1e-8
    total_iters: int = 2000
    step_size: float = 3e-3
    seed: int = 0
    step_decay: float = 0.1

    def __post_init__(self):
        if self.lambda_pass_max < 0 or self.lambda_null_max < 0:
            raise BeamformError("penalty maxima must be >= 0")
        if self.epsilon <= 0:
            raise BeamformError("epsilon must be > 0")
        if self.total_iters < 1 or self.warmup_iters < 0 or self.ramp_iters < 0:
            raise BeamformError("iteration counts must be non-negative (total >= 1)")
        if self.step_size <= 0:
            raise BeamformError("step_size must be > 0")
        if not 0 < self.step_decay <= 1:
            raise BeamformError("step_decay must be in (0, 1]")

    def lambdas(self, iteration: int) -> tuple:
        """(lambda_pass, lambda_null) at the given iteration."""
        if iteration < self.warmup_iters:
            factor = 0.0
        elif self.ramp_iters == 0:
            factor = 1.0
        else:
            factor = min(1.0, (iteration - self.warmup_iters) / self.ramp_iters)
        return self.lambda_pass_max * factor, self.lambda_null_max * factor

    def step_at(self, iteration: int) -> float:
        """Step size at the given iteration (flat, then linear decay)."""
        start = self.warmup_iters + self.ramp_iters
        if iteration < start or start >= self.total_iters:
            return self.step_size
        frac = (iteration - start) / (self.total_iters - start)
        return self.step_size * (1.0 + (self.step_decay - 1.0) * frac)


@dataclasses.dataclass(frozen=True)
class OptimizationTrace:
    """Per-iteration record of the three loss terms and the active penalties."""

    si_sdr_term: np.ndarray
    pass_term: np.ndarray
    null_term: np.ndarray
    lambda_pass: np.ndarray
    lambda_null: np.ndarray

    @property
    def n_iterations(self) -> int:
        return self.si_sdr_term.shape[0]

    def total(self) -> np.ndarray:
        return (
            self.si_sdr_term
            + self.lambda_pass * self.pass_term
            + self.lambda_null * self.null_term
        )


def apply_weights(weights: BeamWeights, spec: Spectrogram) -> Spectrogram:
    """Beamformer output spectrogram s_hat(l,k) = w(k)^H y(l,k)."""
    if spec.n_channels != weights.n_channels or spec.n_bins != weights.n_bins:
        raise BeamformError(
            f"weights (K={weights.n_bins}, M={weights.n_channels}) do not match "
            f"spectrogram (K={spec.n_bins}, M={spec.n_channels})"
        )
    out = np.einsum("km,mlk->lk", weights.w.conj(), spec.bins)
    return Spectrogram(out[None, :, :], spec.config, spec.sample_rate, spec.n_samples)


def average_time_varying(
    weights_per_frame: np.ndarray,
    stft_config: StftConfig = DEFAULT_STFT,
    sample_rate: int = CANONICAL_RATE,
    method: str = "averaged",
) -> BeamWeights:
    """Collapse (K, L, M) per-frame weights to time-invariant ones by the mean."""
    w = np.asarray(weights_per_frame, dtype=np.complex128)
    if w.ndim != 3:
        raise BeamformError(f"expected (K, L, M) weights, got {w.shape}")
    if w.shape[1] == 0:
        raise BeamformError("empty frame axis")
    return BeamWeights(w.mean(axis=1), stft_config, sample_rate, method=method)


def lcmv_weights(
    constraints: ConstraintSet,
    noise_cov: HermitianStack,
    floor_ratio: float = 1e-6,
    ridge_scale: float = 1e-8,
    stft_config: StftConfig = DEFAULT_STFT,
    sample_rate: int = CANONICAL_RATE,
    condition_limit: float = 1e8,
) -> BeamWeights:
    """Closed-form LCMV: w = Phi^-1 C (C^H Phi^-1 C)^-1 g per bin.

    Bins whose J x J Gram is numerically rank deficient get a small ridge
    (ridge_scale * trace / M) and are reported in fallback_bins; bins whose
    solved weights still exceed the sanity norm fall back to the reference
    selector. Near-parallel constraint columns (always the case around DC)
    land in this path.
    """
    c = constraints.stacked()  # (K, M, J)
    k, m, j = c.shape
    if noise_cov.matrices.shape != (k, m, m):
        raise BeamformError(
            f"noise covariance {noise_cov.matrices.shape} does not match constraints "
            f"(K={k}, M={m})"
        )
    inv = psd_inverse(noise_cov, floor_ratio).matrices
    x = inv @ c  # (K, M, J)
    gram = c.conj().transpose(0, 2, 1) @ x  # (K, J, J)
    gram = 0.5 * (gram + gram.conj().transpose(0, 2, 1))
    conds = np.linalg.cond(gram)
    bad = ~np.isfinite(conds) | (conds > condition_limit)
    if bad.any():
        trace = np.einsum("kjj->k", gram).real
        ridge = ridge_scale * trace / m
        eye = np.eye(j)
        gram = gram + np.where(bad, ridge, 0.0)[:, None, None] * eye[None, :, :]
    rhs = np.broadcast_to(constraints.gains.astype(np.complex128), (k, j))[:, :, None]
    sol = np.linalg.solve(gram, rhs)[:, :, 0]
    w = np.einsum("kmj,kj->km", x, sol)
    oversized = np.linalg.norm(w, axis=1) > MAX_WEIGHT_NORM
    if oversized.any():
        w[oversized] = 0.0
        w[oversized, constraints.target_rtf.reference_index] = 1.0
        bad = bad | oversized
    return BeamWeights(
        w,
        stft_config,
        sample_rate,
        method="lcmv",
        fallback_bins=tuple(np.nonzero(bad)[0]),
    )


def oracle_constraints(bundle: SceneBundle) -> ConstraintSet:
    """Ground-truth constraints from the simulator.

    Anechoic sources use the true steering vectors at the bin centers;
    sources rendered with an imported RIR use cross-spectra of their image
    over the frames where they are active.
    """
    spec = bundle.spec
    ref = spec.array.reference_index
    freqs = bundle.stft_config.bin_frequencies(spec.sample_rate)

    def signature(source_index: int) -> RtfVector:
        source = spec.sources[source_index]
        if source.rir is None:
            values = steering_vector(freqs, source.position, spec.array)
            return RtfVector(values, ref)
        image = next(im for im in bundle.images if im.source_index == source_index)
        frames = _active_frames(bundle, source.role)
        return rtf_from_cross_spectra(analyze(image.clip, bundle.stft_config), frames, ref)

    target = signature(spec.target_index)
    columns = [signature(i).values for i in spec.interferer_indices]
    if columns:
        basis = np.stack(columns, axis=2)
    else:
        basis = np.zeros((target.n_bins, target.n_channels, 0), dtype=np.complex128)
    interference = InterferenceSubspace(basis, ref)
    return ConstraintSet(target_rtf=target, interference=interference)


def _active_frames(bundle: SceneBundle, role: str) -> np.ndarray:
    config = bundle.stft_config
    rate = bundle.spec.sample_rate
    if bundle.spec.fully_overlapped:
        return config.frames_inside(0.0, bundle.timeline.total_s, rate)
    bounds = bundle.timeline.boundaries()
    if role == "target":
        spans = [
            bounds["target_only"],
            (bounds["estimation_mixture"][0], bounds["evaluation_mixture"][1]),
        ]
    else:
        spans = [(bounds["interference_only"][0], bounds["evaluation_mixture"][1])]
    parts = [config.frames_inside(start, stop, rate) for start, stop in spans]
    return np.unique(np.concatenate(parts))


def trivial_constraints(
    n_bins: int, n_channels: int, reference_index: int = 0
) -> ConstraintSet:
    """Identity target signature with an empty interference basis.

    Used by the unguided configuration, where both penalties are zero and the
    constraint content is irrelevant (the trace still reports the terms).
    """
    values = np.zeros((n_bins, n_channels), dtype=np.complex128)
    values[:, reference_index] = 1.0
    target = RtfVector(values, reference_index)
    basis = np.zeros((n_bins, n_channels, 0), dtype=np.complex128)
    return ConstraintSet(target, InterferenceSubspace(basis, reference_index))


class _PenaltyWorkspace:
    """Precomputed tensors for repeated loss/gradient evaluation.

    The synthesis chain is linear in the weights: S(l,k) = w(k)^H y(l,k),
    frames = irfft(S), signal = OLA(win * frames) / envelope. Its adjoint
    is the windowed frame gather followed by rfft, scaled by the one-sided
    bin duplication weights.
    """

    def __init__(self, mixture_spec: Spectrogram, target_ref, constraints: ConstraintSet,
                 epsilon: float):
        config = mixture_spec.config
        m, l, k = mixture_spec.bins.shape
        if constraints.target_rtf.values.shape != (k, m):
            raise BeamformError(
                f"constraints shaped {constraints.target_rtf.values.shape} do not match "
                f"spectrogram (K={k}, M={m})"
            )
        self.config = config
        self.n_fft = config.fft_size
        self.hop = config.hop_size
        self.window = config.window_values()
        self.y = np.ascontiguousarray(mixture_spec.bins.transpose(2, 1, 0))  # (K, L, M)
        self.env = synthesis_envelope(config, l)
        self.total = self.env.shape[0]
        target = np.asarray(
            target_ref.mono() if hasattr(target_ref, "mono") else target_ref,
            dtype=np.float64,
        ).reshape(-1)
        if target.size == 0:
            raise BeamformError("empty reference segment")
        if target.size > self.total:
            raise BeamformError(
                f"reference of {target.size} samples exceeds the synthesis span {self.total}"
            )
        self.s = target
        self.t_len = target.size
        # the loss compares interior samples only: the WOLA edge ramps are
        # excluded, matching the evaluation convention for edge frames
        margin = config.fft_size
        if target.size <= 2 * margin:
            raise BeamformError(
                f"reference segment of {target.size} samples is too short for "
                f"fft_size {config.fft_size}"
            )
        self.lo = margin
        self.hi = target.size - margin
        self.s_int = target[self.lo : self.hi]
        self.s_energy = float(self.s_int @ self.s_int)
        if self.s_energy == 0.0:
            raise BeamformError("all-zero reference segment")
        self.a = constraints.target_rtf.values  # (K, M)
        self.basis = constraints.interference.basis  # (K, M, R)
        self.rank = constraints.interference.rank
        self.eps = float(epsilon)
        self.k, self.l, self.m = k, l, m
        dup = np.full(k, 2.0)
        dup[0] = 1.0
        dup[-1] = 1.0
        self.dup = dup

    def _synthesize(self, s_kl: np.ndarray) -> np.ndarray:
        frames = np.fft.irfft(s_kl.T, n=self.n_fft, axis=1)
        signal = _ola(frames * self.window, self.hop, self.total) / self.env
        return signal[: self.t_len]

    def _gather_frames(self, flat: np.ndarray) -> np.ndarray:
        """Inverse of the overlap-add scatter: (total,) -> (L, fft)."""
        groups = self.n_fft // self.hop
        out = np.empty((self.l, self.n_fft))
        for g in range(groups):
            count = len(range(g, self.l, groups))
            if count == 0:
                continue
            start = g * self.hop
            span = count * self.n_fft
            out[g::groups] = flat[start : start + span].reshape(count, self.n_fft)
        return out

    def forward(self, w: np.ndarray):
        s_kl = np.matmul(self.y, w.conj()[:, :, None])[:, :, 0]  # (K, L)
        estimate = self._synthesize(s_kl)[self.lo : self.hi]
        alpha = float(estimate @ self.s_int) / self.s_energy
        residual = estimate - alpha * self.s_int
        p2 = alpha * alpha * self.s_energy
        r2 = float(residual @ residual)
        if p2 == 0.0:
            term1 = math.inf
        elif r2 == 0.0:
            term1 = -math.inf
        else:
            term1 = -10.0 * math.log10(p2 / r2)
        r_pass = (w.conj() * self.a).sum(axis=1) - 1.0  # (K,)
        term2 = float(np.mean(np.abs(r_pass) ** 2))
        if self.rank > 0:
            q = np.matmul(self.basis.conj().transpose(0, 2, 1), w[:, :, None])[:, :, 0]
            nk = (np.abs(q) ** 2).sum(axis=1) + self.eps
        else:
            q = None
            nk = np.full(self.k, self.eps)
        term3 = float(np.mean(10.0 * np.log10(nk)))
        stash = (estimate, alpha, residual, p2, r2, r_pass, q, nk)
        return (term1, term2, term3), stash

    def loss_and_grad(self, w: np.ndarray, lam_pass: float, lam_null: float):
        (term1, term2, term3), stash = self.forward(w)
        estimate, alpha, residual, p2, r2, r_pass, q, nk = stash

        grad = np.zeros((self.k, self.m), dtype=np.complex128)
        if np.isfinite(term1):
            c = 10.0 / _LOG10
            g_e = 2.0 * c * (residual / r2 - (alpha / p2) * self.s_int)
            flat = np.zeros(self.total)
            flat[self.lo : self.hi] = g_e / self.env[self.lo : self.hi]
            gx = self._gather_frames(flat) * self.window
            spec_grad = np.fft.rfft(gx, n=self.n_fft, axis=1)  # (L, K)
            ds_bar = (self.dup / (2.0 * self.n_fft))[None, :] * spec_grad
            dw_bar = np.matmul(ds_bar.T.conj()[:, None, :], self.y)[:, 0, :]
            grad += 2.0 * dw_bar

        if lam_pass != 0.0:
            grad += lam_pass * (2.0 / self.k) * self.a * r_pass.conj()[:, None]
        if lam_null != 0.0 and self.rank > 0:
            bq = np.matmul(self.basis, q[:, :, None])[:, :, 0]  # (K, M)
            grad += lam_null * (20.0 / (_LOG10 * self.k)) * bq / nk[:, None]

        total = term1 + lam_pass * term2 + lam_null * term3
        return total, (term1, term2, term3), grad


def loss_terms(
    weights: BeamWeights,
    mixture_spec: Spectrogram,
    target_ref,
    constraints: ConstraintSet,
    epsilon: float = 1e-8,
) -> tuple:
    """The three addends of the objective, unweighted, for tracing and tests."""
    workspace = _PenaltyWorkspace(mixture_spec, target_ref, constraints, epsilon)
    terms, _ = workspace.forward(np.asarray(weights.w, dtype=np.complex128))
    return terms


def loss_gradient(
    weights: BeamWeights,
    mixture_spec: Spectrogram,
    target_ref,
    constraints: ConstraintSet,
    lambda_pass: float,
    lambda_null: float,
    epsilon: float = 1e-8,
):
    """Total loss and its gradient d/d(Re w) + 1j d/d(Im w); for checks."""
    workspace = _PenaltyWorkspace(mixture_spec, target_ref, constraints, epsilon)
    return workspace.loss_and_grad(
        np.asarray(weights.w, dtype=np.complex128), lambda_pass, lambda_null
    )


_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def penalty_optimize(
    mixture_spec: Spectrogram,
    target_ref,
    constraints: ConstraintSet,
    schedule: PenaltySchedule = PenaltySchedule(),
    init: Optional[BeamWeights] = None,
) -> tuple:
    """Minimize the scheduled multi-term loss over per-bin weights.

    Descent uses diagonally preconditioned (Adam-style) moments on the real
    parametrization with the schedule's step plan; the per-bin curvature of
    the reconstruction term spans several orders of magnitude across
    frequency, which defeats a fixed-step plain gradient iteration.

    Returns (BeamWeights, OptimizationTrace). The trace rows hold the term
    values at the start of each iteration. Runs are bit-reproducible for
    identical inputs.
    """
    k, m = mixture_spec.n_bins, mixture_spec.n_channels
    if init is None:
        init = selector_weights(
            k, m, constraints.target_rtf.reference_index,
            mixture_spec.config, mixture_spec.sample_rate,
        )
    workspace = _PenaltyWorkspace(mixture_spec, target_ref, constraints, schedule.epsilon)
    w = np.array(init.w, dtype=np.complex128)
    moment1 = np.zeros_like(w)
    moment2 = np.zeros((k, m, 2))
    n_iter = schedule.total_iters
    t1 = np.empty(n_iter)
    t2 = np.empty(n_iter)
    t3 = np.empty(n_iter)
    lp = np.empty(n_iter)
    ln_ = np.empty(n_iter)
    for it in range(n_iter):
        lam_pass, lam_null = schedule.lambdas(it)
        total, terms, grad = workspace.loss_and_grad(w, lam_pass, lam_null)
        if not math.isfinite(total):
            raise BeamformError(
                f"non-finite loss at iteration {it}; reduce step_size or check inputs"
            )
        t1[it], t2[it], t3[it] = terms
        lp[it], ln_[it] = lam_pass, lam_null
        norm = np.linalg.norm(grad)
        if norm > GRAD_CLIP:
            grad = grad * (GRAD_CLIP / norm)
        moment1 = _ADAM_BETA1 * moment1 + (1.0 - _ADAM_BETA1) * grad
        moment2 = _ADAM_BETA2 * moment2 + (1.0 - _ADAM_BETA2) * np.stack(
            [grad.real**2, grad.imag**2], axis=-1
        )
        m_hat = moment1 / (1.0 - _ADAM_BETA1 ** (it + 1))
        v_hat = moment2 / (1.0 - _ADAM_BETA2 ** (it + 1))
        update = m_hat.real / (np.sqrt(v_hat[..., 0]) + _ADAM_EPS) + 1j * (
            m_hat.imag / (np.sqrt(v_hat[..., 1]) + _ADAM_EPS)
        )
        w = w - schedule.step_at(it) * update
    weights = BeamWeights(
        w, mixture_spec.config, mixture_spec.sample_rate, method="penalty"
    )
    return weights, OptimizationTrace(t1, t2, t3, lp, ln_)
