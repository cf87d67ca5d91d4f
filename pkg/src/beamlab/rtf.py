"""Relative transfer function and interference-subspace estimation.

The covariance-whitening recipe: whiten the segment covariance with the
noise inverse square root, take dominant eigenvectors, de-whiten with the
matching square root and normalize by the reference element.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from .spatial import (
    HermitianStack,
    SpatialError,
    estimate_covariance,
    hermitian_evd,
    whiten_covariance,
)
from .stft import Spectrogram

#: |reference element| below this fraction of the vector norm marks a bin invalid
REF_VALIDITY_RATIO = 1e-9

#: column condition number above this triggers a diagnostics warning
CONDITION_WARN_THRESHOLD = 1e8


class RtfError(ValueError):
    """Raised for invalid estimation inputs."""


@dataclasses.dataclass(frozen=True)
class RtfVector:
    """Per-bin relative transfer function, reference element exactly 1.

    invalid_bins lists bins where the reference element was degenerate and
    the identity fallback was substituted.
    """

    values: np.ndarray  # (K, M) complex
    reference_index: int
    invalid_bins: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 2:
            raise RtfError(f"values must be (K, M), got {values.shape}")
        if not np.isfinite(values).all():
            raise RtfError("non-finite RTF entries")
        if not (values[:, self.reference_index] == 1.0).all():
            raise RtfError("reference element must equal exactly 1+0j at every bin")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "invalid_bins", tuple(int(b) for b in self.invalid_bins))

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclasses.dataclass(frozen=True)
class InterferenceSubspace:
    """Per-bin basis of interferer signatures, each column reference-normalized."""

    basis: np.ndarray  # (K, M, R) complex
    reference_index: int
    invalid_bins: tuple = ()

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.complex128)
        if basis.ndim != 3:
            raise RtfError(f"basis must be (K, M, R), got {basis.shape}")
        if not np.isfinite(basis).all():
            raise RtfError("non-finite subspace entries")
        if basis.shape[2] > 0 and not (basis[:, self.reference_index, :] == 1.0).all():
            raise RtfError("every column's reference element must equal exactly 1+0j")
        basis = basis.copy()
        basis.flags.writeable = False
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "invalid_bins", tuple(self.invalid_bins))
        if basis.shape[2] > 1:
            conds = np.linalg.cond(basis)
            worst = float(np.max(conds))
            if worst > CONDITION_WARN_THRESHOLD:
                warnings.warn(
                    f"interference basis poorly conditioned (max cond {worst:.2e})",
                    RuntimeWarning,
                    stacklevel=2,
                )

    @property
    def rank(self) -> int:
        return self.basis.shape[2]

    @property
    def n_bins(self) -> int:
        return self.basis.shape[0]


def _dominant_dewhitened(
    spec: Spectrogram,
    frames,
    noise_inv_sqrt: HermitianStack,
    noise_sqrt: HermitianStack,
    reference_index: int,
    rank: int,
):
    """Shared covariance-whitening path; returns normalized columns + fallbacks."""
    cov = estimate_covariance(spec, frames)
    if cov.matrices.shape != noise_inv_sqrt.matrices.shape:
        raise RtfError(
            f"noise statistics shape {noise_inv_sqrt.matrices.shape} does not match "
            f"covariance {cov.matrices.shape}"
        )
    whitened = whiten_covariance(cov, noise_inv_sqrt)
    evd = hermitian_evd(whitened)
    principal = evd.eigenvectors[:, :, :rank]  # (K, M, rank)
    dewhitened = noise_sqrt.matrices.conj().transpose(0, 2, 1) @ principal
    k, m, _ = dewhitened.shape
    ref = dewhitened[:, reference_index, :]  # (K, rank)
    norms = np.linalg.norm(dewhitened, axis=1)
    invalid = np.abs(ref) < REF_VALIDITY_RATIO * norms
    safe_ref = np.where(invalid, 1.0, ref)
    columns = dewhitened / safe_ref[:, None, :]
    fallback = np.zeros((m,), dtype=np.complex128)
    fallback[reference_index] = 1.0
    for kk, rr in zip(*np.nonzero(invalid)):
        columns[kk, :, rr] = fallback
    columns[:, reference_index, :] = 1.0
    invalid_bins = tuple(sorted(set(int(b) for b in np.nonzero(invalid.any(axis=1))[0])))
    return columns, invalid_bins


def estimate_target_rtf(
    spec: Spectrogram,
    target_frames,
    noise_inv_sqrt: HermitianStack,
    noise_sqrt: HermitianStack,
    reference_index: int = 0,
) -> RtfVector:
    """Target RTF from the dominant whitened eigenvector of the target segment."""
    frames = np.asarray(target_frames, dtype=np.intp).reshape(-1)
    m = spec.n_channels
    if frames.size < m:
        raise RtfError(f"need at least M={m} target frames, got {frames.size}")
    if frames.size < 3 * m:
        warnings.warn(
            f"only {frames.size} target frames for M={m}; the RTF estimate may be noisy",
            RuntimeWarning,
            stacklevel=2,
        )
    columns, invalid = _dominant_dewhitened(
        spec, frames, noise_inv_sqrt, noise_sqrt, reference_index, rank=1
    )
    return RtfVector(columns[:, :, 0], reference_index, invalid_bins=invalid)


def estimate_interference_subspace(
    spec: Spectrogram,
    interference_frames,
    noise_inv_sqrt: HermitianStack,
    noise_sqrt: HermitianStack,
    reference_index: int = 0,
    rank: int = 1,
) -> InterferenceSubspace:
    """Top-rank whitened eigenvectors of the interference-only segment."""
    if rank < 1:
        raise RtfError(f"subspace rank must be >= 1, got {rank}")
    frames = np.asarray(interference_frames, dtype=np.intp).reshape(-1)
    m = spec.n_channels
    if rank > m:
        raise RtfError(f"rank {rank} exceeds channel count {m}")
    if frames.size == 0:
        raise SpatialError("empty frame set")
    if frames.size < rank * m:
        warnings.warn(
            f"only {frames.size} interference frames for rank {rank}, M={m}",
            RuntimeWarning,
            stacklevel=2,
        )
    columns, invalid = _dominant_dewhitened(
        spec, frames, noise_inv_sqrt, noise_sqrt, reference_index, rank=rank
    )
    return InterferenceSubspace(columns, reference_index, invalid_bins=invalid)


def rtf_from_cross_spectra(
    image_spec: Spectrogram, frames, reference_index: int = 0
) -> RtfVector:
    """RTF of a single source from its image's cross-spectra.

    Per bin: the reference column of the image covariance divided by the
    reference auto-spectrum. Degenerate bins (no energy at the reference)
    fall back to the identity signature and are reported.
    """
    cov = estimate_covariance(image_spec, frames).matrices
    ref_col = cov[:, :, reference_index]  # (K, M)
    ref_auto = cov[:, reference_index, reference_index].real
    norms = np.linalg.norm(ref_col, axis=1)
    invalid = np.abs(ref_auto) < REF_VALIDITY_RATIO * np.maximum(norms, np.finfo(float).tiny)
    invalid |= ref_auto <= 0.0
    safe = np.where(invalid, 1.0, ref_auto)
    values = ref_col / safe[:, None]
    fallback = np.zeros(values.shape[1], dtype=np.complex128)
    fallback[reference_index] = 1.0
    values[invalid] = fallback
    values[:, reference_index] = 1.0
    return RtfVector(values, reference_index, invalid_bins=tuple(np.nonzero(invalid)[0]))


def hermitian_angle(u, v) -> float:
    """Phase-blind angle arccos(|u^H v| / (||u|| ||v||)) in [0, pi/2]."""
    u = np.asarray(u, dtype=np.complex128).reshape(-1)
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise RtfError("hermitian_angle of a zero vector is undefined")
    cos = np.abs(np.vdot(u, v)) / (nu * nv)
    return float(np.arccos(np.clip(cos, 0.0, 1.0)))
