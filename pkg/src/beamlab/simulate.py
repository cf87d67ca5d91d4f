"""Multichannel scene rendering: point-source propagation, babble, timelines.

Anechoic propagation applies per-microphone fractional delays (relative to
the reference microphone, so the image is time-aligned to the scene clock)
and absolute 1/r gains, in the frequency domain of the full-length signal.
Channel ratios therefore equal the reference-normalized steering vectors.
Activity gating happens after rendering, which keeps the single-activity
frame sets exactly silent for inactive speakers.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import fftconvolve

from .audio import AudioClip, read_wav, write_wav
from .scenes import (
    SPEED_OF_SOUND,
    ArrayGeometry,
    SceneError,
    SceneSpec,
    SegmentPlan,
    load_scene_spec,
    save_scene_spec,
)
from .stft import DEFAULT_STFT, StftConfig

# SeedSequence stream tags, one per independent randomness consumer
_BABBLE_POSITIONS = 1
_BABBLE_SIGNALS = 2
_SYNTHETIC_CLIPS = 3


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for a (seed, stream...) combination."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def speech_shaped_noise(n_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary Gaussian noise with a long-term-average speech spectrum.

    Flat-ish between 100 and 500 Hz, -6 dB/octave above, first-order rise
    below; unit RMS.
    """
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    f = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    hp = (f / 100.0) / np.sqrt(1.0 + (f / 100.0) ** 2)
    lp = 1.0 / np.sqrt(1.0 + (f / 500.0) ** 2)
    shaped = np.fft.irfft(spectrum * hp * lp, n=n_samples)
    return shaped / np.sqrt(np.mean(shaped**2))


def speech_like_clip(n_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Speech-shaped noise with syllabic (~4 Hz) amplitude modulation, unit RMS."""
    carrier = speech_shaped_noise(n_samples, sample_rate, rng)
    n_nodes = max(4, int(round(4.0 * n_samples / sample_rate)) + 1)
    nodes = np.abs(rng.standard_normal(n_nodes)) + 0.15
    env = np.interp(
        np.linspace(0.0, 1.0, n_samples), np.linspace(0.0, 1.0, n_nodes), nodes
    )
    out = carrier * env
    return out / np.sqrt(np.mean(out**2))


@dataclasses.dataclass(frozen=True)
class SourceImage:
    """One source as seen by all microphones, aligned to the scene clock."""

    clip: AudioClip
    role: str
    source_index: int


def steering_vector(
    freq,
    source_pos,
    array: ArrayGeometry,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Near-field spherical-wave steering vector, reference element = 1.

    Element m is (r_ref/r_m) * exp(-2j*pi*f*(r_m - r_ref)/c). ``freq`` may be
    scalar (returns (M,)) or an array of F frequencies (returns (F, M)).
    """
    pos = np.asarray(source_pos, dtype=np.float64).reshape(3)
    dists = np.linalg.norm(array.mic_positions - pos[None, :], axis=1)
    if dists.min() <= 0.0:
        raise SceneError("source coincides with a microphone")
    r_ref = dists[array.reference_index]
    gains = r_ref / dists
    delays = (dists - r_ref) / speed_of_sound
    freq = np.asarray(freq, dtype=np.float64)
    phase = np.exp(-2j * np.pi * freq[..., None] * delays)
    return gains * phase


def render_source(
    clip: AudioClip,
    source_pos,
    array: ArrayGeometry,
    room=None,
    role: str = "interferer",
    source_index: int = 0,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> SourceImage:
    """Propagate a mono clip to all microphones (anechoic point model)."""
    mono = clip.mono()
    if room is not None:
        room = np.asarray(room, dtype=np.float64)
        pos = np.asarray(source_pos, dtype=np.float64).reshape(3)
        if not ((pos > 0).all() and (pos < room).all()):
            raise SceneError(f"source position {pos} outside room {room}")
    dists = np.linalg.norm(array.mic_positions - np.asarray(source_pos)[None, :], axis=1)
    r_ref = dists[array.reference_index]
    max_shift = (np.abs(dists - r_ref).max() / speed_of_sound) * clip.sample_rate
    pad = int(np.ceil(max_shift)) + 32
    n = mono.shape[0]
    n_fft = next_fast_len(n + 2 * pad)
    padded = np.zeros(n_fft)
    padded[pad : pad + n] = mono
    spectrum = np.fft.rfft(padded)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / clip.sample_rate)
    # absolute 1/r gains with reference-relative delays; channel ratios equal
    # the reference-normalized steering vector
    response = steering_vector(freqs, source_pos, array, speed_of_sound) / r_ref
    imaged = np.fft.irfft(spectrum[:, None] * response, n=n_fft, axis=0)
    samples = imaged[pad : pad + n].T
    return SourceImage(AudioClip(samples, clip.sample_rate), role, source_index)


def render_with_rir(
    clip: AudioClip,
    rirs: AudioClip,
    role: str = "interferer",
    source_index: int = 0,
) -> SourceImage:
    """Per-channel convolution with an M-channel impulse response."""
    mono = clip.mono()
    if rirs.sample_rate != clip.sample_rate:
        raise SceneError(
            f"RIR rate {rirs.sample_rate} does not match clip rate {clip.sample_rate}"
        )
    out = fftconvolve(mono[None, :], rirs.samples, mode="full", axes=-1)
    return SourceImage(AudioClip(out[:, : mono.shape[0]], clip.sample_rate), role, source_index)


def render_babble(
    spec: SceneSpec,
    array: Optional[ArrayGeometry] = None,
    rng_seed: Optional[int] = None,
) -> SourceImage:
    """Stationary babble: speech-shaped point sources near the room walls.

    The summed image is scaled so its RMS at the reference microphone equals
    the spec's babble level. Deterministic in (spec, seed).
    """
    array = array if array is not None else spec.array
    seed = spec.seed if rng_seed is None else rng_seed
    rate = spec.sample_rate
    n_total = int(round(spec.timeline.total_s * rate))
    pos_rng = seeded_rng(seed, _BABBLE_POSITIONS)
    total = np.zeros((array.n_mics, n_total))
    for i in range(spec.babble.speaker_count):
        position = _wall_position(pos_rng, spec.room, spec.babble.wall_margin_m)
        noise = speech_shaped_noise(n_total, rate, seeded_rng(seed, _BABBLE_SIGNALS, i))
        image = render_source(
            AudioClip(noise[None, :], rate), position, array, room=spec.room, role="babble"
        )
        total += image.clip.samples
    ref_rms = np.sqrt(np.mean(total[array.reference_index] ** 2))
    if ref_rms > 0:
        total *= spec.babble.level / ref_rms
    return SourceImage(AudioClip(total, rate), "babble", spec.n_speakers)


def _wall_position(rng: np.random.Generator, room: np.ndarray, margin: float) -> np.ndarray:
    wall = int(rng.integers(4))
    depth = rng.uniform(0.05, max(margin, 0.06))
    along_x = rng.uniform(0.1, room[0] - 0.1)
    along_y = rng.uniform(0.1, room[1] - 0.1)
    z = rng.uniform(1.0, min(2.0, room[2] - 0.1))
    if wall == 0:
        return np.array([depth, along_y, z])
    if wall == 1:
        return np.array([room[0] - depth, along_y, z])
    if wall == 2:
        return np.array([along_x, depth, z])
    return np.array([along_x, room[1] - depth, z])


@dataclasses.dataclass(frozen=True)
class SceneBundle:
    """Rendered scene: per-source images, mixture, timeline and frame sets.

    frame_sets maps 'noise'/'target'/'interference' to arrays of STFT frame
    indices lying wholly inside the corresponding single-activity segment
    (all empty for fully overlapped scenes).
    """

    mixture: AudioClip
    images: tuple
    timeline: SegmentPlan
    frame_sets: dict
    spec: SceneSpec
    stft_config: StftConfig

    @property
    def target_image(self) -> SourceImage:
        return next(im for im in self.images if im.role == "target")

    @property
    def interferer_images(self) -> tuple:
        return tuple(im for im in self.images if im.role == "interferer")

    @property
    def babble_image(self) -> SourceImage:
        return next(im for im in self.images if im.role == "babble")

    def target_reference(self) -> AudioClip:
        """Target image at the reference microphone (the loss/metric reference)."""
        return self.target_image.clip.channel(self.spec.array.reference_index)


def _activity_mask(role: str, spec: SceneSpec, n_total: int) -> np.ndarray:
    rate = spec.sample_rate
    mask = np.zeros(n_total)
    if spec.fully_overlapped or role == "babble":
        mask[:] = 1.0
        return mask
    bounds = spec.timeline.boundaries()
    if role == "target":
        spans = [bounds["target_only"], (bounds["estimation_mixture"][0], bounds["evaluation_mixture"][1])]
    else:
        spans = [(bounds["interference_only"][0], bounds["evaluation_mixture"][1])]
    for start, stop in spans:
        mask[int(round(start * rate)) : int(round(stop * rate))] = 1.0
    return mask


def _resolve_clip(source, index: int, n_total: int, spec: SceneSpec, base_dir) -> AudioClip:
    rate = spec.sample_rate
    if isinstance(source.clip, dict):
        params = source.clip.get("synthetic", {})
        seed = int(params.get("seed", spec.seed))
        rms = float(params.get("rms", 0.05))
        rng = seeded_rng(seed, _SYNTHETIC_CLIPS, index)
        samples = speech_like_clip(n_total, rate, rng) * rms
        clip = AudioClip(samples[None, :], rate)
    else:
        path = Path(source.clip)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        clip = read_wav(path)
        if clip.sample_rate != rate:
            raise SceneError(
                f"source clip {path} is {clip.sample_rate} Hz; scene requires {rate} Hz"
            )
        if clip.n_channels != 1:
            raise SceneError(f"source clip {path} must be mono")
        if clip.n_samples < n_total:
            raise SceneError(
                f"source clip {path} shorter than required activity "
                f"({clip.n_samples} < {n_total} samples)"
            )
        clip = AudioClip(clip.samples[:, :n_total], rate)
    if source.gain != 1.0:
        clip = AudioClip(clip.samples * source.gain, rate)
    return clip


def assemble_scene(
    spec: SceneSpec,
    stft_config: StftConfig = DEFAULT_STFT,
    base_dir=None,
) -> SceneBundle:
    """Render all sources, gate them per the timeline and sum the mixture."""
    rate = spec.sample_rate
    if rate != 16000:
        raise SceneError(f"the simulator requires 16 kHz scenes, got {rate} Hz")
    n_total = int(round(spec.timeline.total_s * rate))
    images = []
    for idx, source in enumerate(spec.sources):
        dry = _resolve_clip(source, idx, n_total, spec, base_dir)
        if source.rir is not None:
            rir_path = Path(source.rir)
            if base_dir is not None and not rir_path.is_absolute():
                rir_path = Path(base_dir) / rir_path
            rirs = read_wav(rir_path)
            if rirs.n_channels != spec.array.n_mics:
                raise SceneError(
                    f"RIR {rir_path} has {rirs.n_channels} channels; array has "
                    f"{spec.array.n_mics}"
                )
            image = render_with_rir(dry, rirs, role=source.role, source_index=idx)
        else:
            image = render_source(
                dry, source.position, spec.array, room=spec.room,
                role=source.role, source_index=idx,
            )
        mask = _activity_mask(source.role, spec, n_total)
        gated = AudioClip(image.clip.samples * mask[None, :], rate)
        images.append(SourceImage(gated, source.role, idx))
    images.append(render_babble(spec))

    mixture = AudioClip(sum(im.clip.samples for im in images), rate)
    frame_sets = derive_frame_sets(spec, stft_config)
    return SceneBundle(
        mixture=mixture,
        images=tuple(images),
        timeline=spec.timeline,
        frame_sets=frame_sets,
        spec=spec,
        stft_config=stft_config,
    )


def derive_frame_sets(spec: SceneSpec, config: StftConfig) -> dict:
    if spec.fully_overlapped:
        empty = np.arange(0)
        return {"noise": empty, "target": empty.copy(), "interference": empty.copy()}
    bounds = spec.timeline.boundaries()
    rate = spec.sample_rate
    return {
        "noise": config.frames_inside(*bounds["noise_only"], rate),
        "target": config.frames_inside(*bounds["target_only"], rate),
        "interference": config.frames_inside(*bounds["interference_only"], rate),
    }


def write_scene(bundle: SceneBundle, out_dir) -> Path:
    """Write mixture, per-source images, timeline.json and spec.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(bundle.mixture, out_dir / "mixture.wav")
    for image in bundle.images:
        write_wav(image.clip, out_dir / f"image_{image.role}_{image.source_index}.wav")
    timeline = {
        "sample_rate": bundle.spec.sample_rate,
        "fully_overlapped": bundle.spec.fully_overlapped,
        "segments_s": {k: list(v) for k, v in bundle.timeline.boundaries().items()},
        "frame_sets": {k: v.tolist() for k, v in bundle.frame_sets.items()},
        "stft": dataclasses.asdict(bundle.stft_config),
    }
    with open(out_dir / "timeline.json", "w", encoding="utf-8") as fh:
        json.dump(timeline, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_scene_spec(bundle.spec, out_dir / "spec.json")
    return out_dir


def load_scene(scene_dir) -> SceneBundle:
    """Reload a scene directory written by write_scene."""
    scene_dir = Path(scene_dir)
    spec = load_scene_spec(scene_dir / "spec.json")
    timeline_path = scene_dir / "timeline.json"
    if not timeline_path.exists():
        raise SceneError(f"missing timeline.json in {scene_dir}")
    with open(timeline_path, "r", encoding="utf-8") as fh:
        timeline = json.load(fh)
    stft_config = StftConfig(**timeline["stft"])
    frame_sets = {k: np.asarray(v, dtype=np.intp) for k, v in timeline["frame_sets"].items()}
    mixture = read_wav(scene_dir / "mixture.wav")
    images = []
    for idx, source in enumerate(spec.sources):
        clip = read_wav(scene_dir / f"image_{source.role}_{idx}.wav")
        images.append(SourceImage(clip, source.role, idx))
    babble_path = scene_dir / f"image_babble_{spec.n_speakers}.wav"
    if babble_path.exists():
        images.append(SourceImage(read_wav(babble_path), "babble", spec.n_speakers))
    return SceneBundle(
        mixture=mixture,
        images=tuple(images),
        timeline=spec.timeline,
        frame_sets=frame_sets,
        spec=spec,
        stft_config=stft_config,
    )
