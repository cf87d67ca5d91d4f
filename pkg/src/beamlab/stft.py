"""Forward/inverse short-time Fourier transform with WOLA reconstruction.

Frame l covers samples [l*hop, l*hop + fft_size); spectra are one-sided with
K = fft_size/2 + 1 bins. Analysis and synthesis use the same window and the
overlap-add output is divided by the summed squared-window envelope, so
interior samples reconstruct exactly.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .audio import AudioClip


class StftError(ValueError):
    """Raised for invalid transform configurations or inputs."""


def _make_window(kind: str, size: int) -> np.ndarray:
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(size) / size)
    raise StftError(f"unknown window kind {kind!r}")


@dataclasses.dataclass(frozen=True)
class StftConfig:
    """Transform parameters: FFT length, hop and analysis window kind."""

    fft_size: int = 512
    hop_size: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2 != 0:
            raise StftError(f"fft_size must be even and >= 2, got {self.fft_size}")
        if self.hop_size < 1 or self.fft_size % self.hop_size != 0:
            raise StftError(
                f"hop_size must divide fft_size, got hop={self.hop_size}, fft={self.fft_size}"
            )
        win = _make_window(self.window, self.fft_size)
        # WOLA needs a strictly positive interior squared-window overlap sum.
        env = np.zeros(self.fft_size)
        for off in range(0, self.fft_size, self.hop_size):
            env += np.roll(win * win, off)
        if env.min() <= 1e-8 * env.max():
            raise StftError(
                f"window {self.window!r} with hop {self.hop_size} violates the "
                "constant-overlap-add requirement"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_values(self) -> np.ndarray:
        return _make_window(self.window, self.fft_size)

    def bin_frequencies(self, sample_rate: int) -> np.ndarray:
        """Center frequency of each one-sided bin, in Hz."""
        return np.arange(self.n_bins) * (sample_rate / self.fft_size)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.fft_size:
            raise StftError(
                f"input of {n_samples} samples is shorter than one frame ({self.fft_size})"
            )
        return 1 + int(np.ceil((n_samples - self.fft_size) / self.hop_size))

    def frames_inside(self, start_s: float, stop_s: float, sample_rate: int) -> np.ndarray:
        """Indices of frames lying wholly inside the span [start_s, stop_s)."""
        s0 = int(round(start_s * sample_rate))
        s1 = int(round(stop_s * sample_rate))
        lo = int(np.ceil(s0 / self.hop_size))
        hi = int(np.floor((s1 - self.fft_size) / self.hop_size))
        if hi < lo:
            return np.arange(0)
        return np.arange(lo, hi + 1)


DEFAULT_STFT = StftConfig()


@dataclasses.dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT tensor.

    bins: (channels, frames, n_bins) complex array.
    n_samples: length of the originating signal, kept for exact inversion.
    """

    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    n_samples: Optional[int] = None

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 3:
            raise StftError(f"bins must be (channels, frames, bins), got ndim={bins.ndim}")
        if bins.shape[2] != self.config.n_bins:
            raise StftError(
                f"bin count {bins.shape[2]} does not match config ({self.config.n_bins})"
            )
        bins = bins.copy()
        bins.flags.writeable = False
        object.__setattr__(self, "bins", bins)

    @property
    def n_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[2]

    def channel(self, index: int) -> "Spectrogram":
        return Spectrogram(
            self.bins[index : index + 1], self.config, self.sample_rate, self.n_samples
        )


def _frame_signal(samples: np.ndarray, config: StftConfig) -> np.ndarray:
    """(channels, n) -> (channels, frames, fft_size), zero-padding the tail."""
    n = samples.shape[1]
    n_frames = config.n_frames(n)
    total = (n_frames - 1) * config.hop_size + config.fft_size
    padded = np.zeros((samples.shape[0], total), dtype=np.float64)
    padded[:, :n] = samples
    stride_c, stride_n = padded.strides
    frames = np.lib.stride_tricks.as_strided(
        padded,
        shape=(samples.shape[0], n_frames, config.fft_size),
        strides=(stride_c, config.hop_size * stride_n, stride_n),
    )
    return frames


def analyze(clip: AudioClip, config: StftConfig = DEFAULT_STFT) -> Spectrogram:
    """Forward STFT of every channel."""
    frames = _frame_signal(clip.samples, config)
    window = config.window_values()
    bins = np.fft.rfft(frames * window, axis=-1)
    return Spectrogram(bins, config, clip.sample_rate, n_samples=clip.n_samples)


def _ola(frames: np.ndarray, hop: int, total: int) -> np.ndarray:
    """Overlap-add (n_frames, fft_size) windowed frames into a signal.

    Frames whose starts are congruent mod fft_size tile without overlap, so
    the add runs in fft_size/hop vectorized passes.
    """
    n_frames, fft_size = frames.shape
    out = np.zeros(total)
    groups = fft_size // hop
    for g in range(groups):
        sel = frames[g::groups]
        if sel.shape[0] == 0:
            continue
        start = g * hop
        span = sel.shape[0] * fft_size
        out[start : start + span] += sel.reshape(-1)
    return out


def synthesis_envelope(config: StftConfig, n_frames: int) -> np.ndarray:
    """Summed squared-window envelope for an n_frames WOLA reconstruction.

    Floored at 1e-2 of its peak: interior values are far above the floor, and
    the ramp-in/ramp-out samples fade instead of amplifying whatever an
    inconsistent (modified) spectrogram puts there.
    """
    win2 = config.window_values() ** 2
    total = (n_frames - 1) * config.hop_size + config.fft_size
    env = _ola(np.tile(win2, (n_frames, 1)), config.hop_size, total)
    return np.maximum(env, 1e-2 * env.max())


def synthesize(spec: Spectrogram) -> AudioClip:
    """Weighted overlap-add inverse STFT.

    Output length is the stored n_samples when available, otherwise the full
    frame span. Division by the window envelope makes interior samples exact;
    the first/last ramp of a hop is approximate by construction.
    """
    window = spec.config.window_values()
    env = synthesis_envelope(spec.config, spec.n_frames)
    total = env.shape[0]
    out = np.empty((spec.n_channels, total))
    for c in range(spec.n_channels):
        frames = np.fft.irfft(spec.bins[c], n=spec.config.fft_size, axis=-1)
        out[c] = _ola(frames * window, spec.config.hop_size, total) / env
    n = spec.n_samples if spec.n_samples is not None else total
    if n > total:
        out = np.pad(out, ((0, 0), (0, n - total)))
    return AudioClip(out[:, :n], spec.sample_rate)
