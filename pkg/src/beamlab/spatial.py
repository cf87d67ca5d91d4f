"""Per-frequency second-order statistics: covariance, EVD, whitening.

All operations act on stacks of K complex M x M Hermitian matrices, one per
frequency bin. The eigensolver is a cyclic complex Jacobi iteration run
vectorized across the bin axis; correctness is pinned by reconstruction and
orthonormality invariants rather than by the algorithm.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .stft import Spectrogram


class SpatialError(ValueError):
    """Raised for invalid statistics inputs."""


@dataclasses.dataclass(frozen=True)
class HermitianStack:
    """K Hermitian M x M matrices; symmetrized on construction.

    frame_count records how many frames went into the estimate (0 when the
    stack was built analytically).
    """

    matrices: np.ndarray
    frame_count: int = 0

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.complex128)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise SpatialError(f"matrices must be (K, M, M), got {mats.shape}")
        if not np.isfinite(mats).all():
            raise SpatialError("non-finite entries in matrix stack")
        mats = 0.5 * (mats + mats.conj().transpose(0, 2, 1))
        mats.flags.writeable = False
        object.__setattr__(self, "matrices", mats)

    @property
    def n_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[1]


@dataclasses.dataclass(frozen=True)
class EigenDecomposition:
    """Per-bin eigenvalues (descending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray  # (K, M) real
    eigenvectors: np.ndarray  # (K, M, M) complex, columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        """U diag(lambda) U^H per bin."""
        scaled = self.eigenvectors * self.eigenvalues[:, None, :]
        return scaled @ self.eigenvectors.conj().transpose(0, 2, 1)


def estimate_covariance(spec: Spectrogram, frames) -> HermitianStack:
    """Sample covariance (1/|V|) sum_l y(l,k) y(l,k)^H over a frame set."""
    frames = np.asarray(frames, dtype=np.intp).reshape(-1)
    if frames.size == 0:
        raise SpatialError("empty frame set")
    if frames.min() < 0 or frames.max() >= spec.n_frames:
        raise SpatialError(
            f"frame indices [{frames.min()}, {frames.max()}] outside spectrogram "
            f"of {spec.n_frames} frames"
        )
    y = spec.bins[:, frames, :]  # (M, F, K)
    cov = np.einsum("afk,bfk->kab", y, y.conj()) / frames.size
    return HermitianStack(cov, frame_count=frames.size)


def _jacobi_sweep(a: np.ndarray, v: np.ndarray, tol: np.ndarray) -> None:
    """One cyclic sweep of complex Jacobi rotations, in place, batched over bins."""
    m = a.shape[1]
    for p in range(m - 1):
        for q in range(p + 1, m):
            apq = a[:, p, q]
            mag = np.abs(apq)
            active = mag > tol
            if not active.any():
                continue
            safe_mag = np.where(active, mag, 1.0)
            phase = np.where(active, apq / safe_mag, 1.0)
            tau = (a[:, q, q].real - a[:, p, p].real) / (2.0 * safe_mag)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            sp = s * phase
            # A <- G^H A G with G the (p, q)-plane rotation
            col_p = a[:, :, p].copy()
            col_q = a[:, :, q].copy()
            a[:, :, p] = c[:, None] * col_p - sp.conj()[:, None] * col_q
            a[:, :, q] = sp[:, None] * col_p + c[:, None] * col_q
            row_p = a[:, p, :].copy()
            row_q = a[:, q, :].copy()
            a[:, p, :] = c[:, None] * row_p - sp[:, None] * row_q
            a[:, q, :] = sp.conj()[:, None] * row_p + c[:, None] * row_q
            # exact zeros on the annihilated pair keep the off-diagonal norm honest
            a[:, p, q] = np.where(active, 0.0, a[:, p, q])
            a[:, q, p] = np.where(active, 0.0, a[:, q, p])
            vcol_p = v[:, :, p].copy()
            vcol_q = v[:, :, q].copy()
            v[:, :, p] = c[:, None] * vcol_p - sp.conj()[:, None] * vcol_q
            v[:, :, q] = sp[:, None] * vcol_p + c[:, None] * vcol_q


def _offdiag_max(a: np.ndarray) -> np.ndarray:
    mask = ~np.eye(a.shape[1], dtype=bool)
    return np.abs(a[:, mask]).max(axis=1) if a.shape[1] > 1 else np.zeros(a.shape[0])


def hermitian_evd(stack: HermitianStack, max_sweeps: int = 40) -> EigenDecomposition:
    """Batched complex Jacobi eigendecomposition of a Hermitian stack.

    Eigenvalues come out descending per bin; eigenvector phases follow a
    deterministic convention (largest-magnitude component real positive) and
    exact eigenvalue ties are ordered lexicographically by eigenvector.
    """
    a = np.array(stack.matrices, dtype=np.complex128)
    k, m, _ = a.shape
    v = np.tile(np.eye(m, dtype=np.complex128), (k, 1, 1))
    scale = np.maximum(np.abs(a).reshape(k, -1).max(axis=1), np.finfo(float).tiny)
    tol = 1e-15 * scale
    for _ in range(max_sweeps):
        if (_offdiag_max(a) <= tol).all():
            break
        _jacobi_sweep(a, v, tol)
    values = np.einsum("kii->ki", a).real.copy()
    order = np.argsort(-values, axis=1, kind="stable")
    values = np.take_along_axis(values, order, axis=1)
    vectors = np.take_along_axis(v, order[:, None, :], axis=2)
    _fix_exact_ties(values, vectors)
    # phase convention: largest-magnitude component made real positive
    idx = np.argmax(np.abs(vectors), axis=1)  # (K, M) row index per column
    lead = np.take_along_axis(vectors, idx[:, None, :], axis=1)[:, 0, :]
    lead_mag = np.maximum(np.abs(lead), np.finfo(float).tiny)
    vectors = vectors * (lead.conj() / lead_mag)[:, None, :]
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors = vectors / np.maximum(norms, np.finfo(float).tiny)
    return EigenDecomposition(values, vectors)


def _fix_exact_ties(values: np.ndarray, vectors: np.ndarray) -> None:
    """Order exactly-equal eigenvalues by lexicographic eigenvector comparison."""
    k, m = values.shape
    for kk in range(k):
        j = 0
        while j < m - 1:
            run = j + 1
            while run < m and values[kk, run] == values[kk, j]:
                run += 1
            if run - j > 1:
                cols = vectors[kk, :, j:run]
                keys = [
                    tuple(np.round(np.concatenate([c.real, c.imag]), 12))
                    for c in cols.T
                ]
                order = sorted(range(len(keys)), key=keys.__getitem__)
                vectors[kk, :, j:run] = cols[:, order]
            j = run


def _powered_from_evd(evd: EigenDecomposition, exponent: float, floor_ratio: float) -> np.ndarray:
    lam_max = evd.eigenvalues.max(axis=1)
    if (lam_max <= 0).any():
        raise SpatialError("matrix stack has a bin with no positive eigenvalue")
    floored = np.maximum(evd.eigenvalues, floor_ratio * lam_max[:, None])
    scaled = evd.eigenvectors * (floored**exponent)[:, None, :]
    return scaled @ evd.eigenvectors.conj().transpose(0, 2, 1)


def inv_sqrt(stack: HermitianStack, floor_ratio: float = 1e-6) -> HermitianStack:
    """Inverse principal square root with relative eigenvalue flooring."""
    out = _powered_from_evd(hermitian_evd(stack), -0.5, floor_ratio)
    return HermitianStack(out, frame_count=stack.frame_count)


def psd_sqrt(stack: HermitianStack, floor_ratio: float = 1e-6) -> HermitianStack:
    """Principal square root, floored consistently with inv_sqrt."""
    out = _powered_from_evd(hermitian_evd(stack), 0.5, floor_ratio)
    return HermitianStack(out, frame_count=stack.frame_count)


def psd_inverse(stack: HermitianStack, floor_ratio: float = 1e-6) -> HermitianStack:
    """Floored inverse, consistent with inv_sqrt squared."""
    out = _powered_from_evd(hermitian_evd(stack), -1.0, floor_ratio)
    return HermitianStack(out, frame_count=stack.frame_count)


def sqrt_pair(stack: HermitianStack, floor_ratio: float = 1e-6):
    """(inverse sqrt, sqrt) from a single EVD, guaranteeing W @ S = I."""
    evd = hermitian_evd(stack)
    w = _powered_from_evd(evd, -0.5, floor_ratio)
    s = _powered_from_evd(evd, 0.5, floor_ratio)
    fc = stack.frame_count
    return HermitianStack(w, frame_count=fc), HermitianStack(s, frame_count=fc)


def whiten_covariance(noisy: HermitianStack, noise_inv_sqrt: HermitianStack) -> HermitianStack:
    """Sandwich W Phi W^H per bin."""
    if noisy.matrices.shape != noise_inv_sqrt.matrices.shape:
        raise SpatialError(
            f"shape mismatch: {noisy.matrices.shape} vs {noise_inv_sqrt.matrices.shape}"
        )
    w = noise_inv_sqrt.matrices
    out = w @ noisy.matrices @ w.conj().transpose(0, 2, 1)
    return HermitianStack(out, frame_count=noisy.frame_count)
