"""Multichannel audio container and WAV file I/O.

Sample matrices are (channels, samples) float64 in [-1, 1]. WAV files are
RIFF, float32 or integer PCM; everything is written back as float32.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class AudioIOError(RuntimeError):
    """Raised for unreadable, unwritable or malformed audio files."""


_PCM_SCALES = {
    np.dtype(np.int16): float(2**15),
    np.dtype(np.int32): float(2**31),
}


@dataclasses.dataclass(frozen=True)
class AudioClip:
    """Immutable multichannel audio snippet.

    samples: (channels, n_samples) array, dimensionless amplitudes.
    sample_rate: sampling frequency in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (channels, n), got ndim={samples.ndim}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError(f"empty audio: shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> "AudioClip":
        """Single channel as a new mono clip."""
        return AudioClip(self.samples[index : index + 1], self.sample_rate)

    def crop(self, start_s: float, stop_s: float) -> "AudioClip":
        """Sample-exact crop of the time span [start_s, stop_s)."""
        i0 = int(round(start_s * self.sample_rate))
        i1 = int(round(stop_s * self.sample_rate))
        if not (0 <= i0 < i1 <= self.n_samples):
            raise ValueError(
                f"crop [{start_s}, {stop_s}) s outside clip of {self.duration:.3f} s"
            )
        return AudioClip(self.samples[:, i0:i1], self.sample_rate)

    def mono(self) -> np.ndarray:
        """The single channel as a 1-D array; raises if multichannel."""
        if self.n_channels != 1:
            raise ValueError(f"expected mono clip, got {self.n_channels} channels")
        return self.samples[0]


def read_wav(path) -> AudioClip:
    """Read a RIFF WAV file; integer PCM is scaled to [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise AudioIOError(f"missing file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise AudioIOError(f"unsupported encoding in {path}: {exc}") from exc
    if data.size == 0:
        raise AudioIOError(f"zero-length audio: {path}")
    if data.ndim == 1:
        data = data[:, np.newaxis]
    if data.dtype in _PCM_SCALES:
        samples = data.astype(np.float64) / _PCM_SCALES[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioIOError(f"unsupported encoding in {path}: dtype {data.dtype}")
    return AudioClip(samples.T, int(rate))


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as a 32-bit float, channel-interleaved WAV file."""
    if not np.isfinite(clip.samples).all():
        raise AudioIOError("refusing to write non-finite samples")
    path = Path(path)
    try:
        wavfile.write(str(path), clip.sample_rate, clip.samples.T.astype(np.float32))
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc
