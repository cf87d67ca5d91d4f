"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .audio import AudioClip
from .stft import Spectrogram


def check_spectrogram(x, name: str = "X") -> Spectrogram:
    if not isinstance(x, Spectrogram):
        raise TypeError(f"{name} must be a Spectrogram, got {type(x).__name__}")
    return x


def check_reference(y, name: str = "y") -> np.ndarray:
    """Mono reference signal as a 1-D float array (AudioClip or array input)."""
    if isinstance(y, AudioClip):
        return y.mono()
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a mono clip or 1-D array, got shape {arr.shape}")
    return arr


def check_frame_indices(frames, n_frames: int, name: str = "frames") -> np.ndarray:
    frames = np.asarray(frames, dtype=np.intp).reshape(-1)
    if frames.size and (frames.min() < 0 or frames.max() >= n_frames):
        raise ValueError(
            f"{name} outside [0, {n_frames}): [{frames.min()}, {frames.max()}]"
        )
    return frames


def check_frame_sets(frame_sets, n_frames: int) -> dict:
    required = ("noise", "target", "interference")
    if not all(key in frame_sets for key in required):
        raise ValueError(f"frame_sets must contain keys {required}")
    return {k: check_frame_indices(frame_sets[k], n_frames, k) for k in required}


def check_reference_index(reference_index: int, n_channels: int) -> int:
    ref = int(reference_index)
    if not 0 <= ref < n_channels:
        raise ValueError(f"reference mic {ref} out of range for {n_channels} channels")
    return ref
