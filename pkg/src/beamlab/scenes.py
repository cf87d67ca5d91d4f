"""Scene descriptions: rooms, microphone arrays, sources, activity timelines.

Scene files are JSON with explicit units in the field names (``*_m`` meters,
``*_s`` seconds). Top-level keys: ``room``, ``array``, ``sources``, ``babble``,
``timeline``, ``seed``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np

CANONICAL_RATE = 16000
SPEED_OF_SOUND = 343.0


class SceneError(ValueError):
    """Raised for invalid or inconsistent scene descriptions."""


@dataclasses.dataclass(frozen=True)
class SegmentPlan:
    """Durations of the five consecutive activity segments, in seconds.

    noise-only, target-only, interference-only, estimation mixture (all
    active; used to fit beamformers) and evaluation mixture (all active;
    held out for metrics). Defaults sum to 8 s.
    """

    noise_only_s: float = 0.5
    target_only_s: float = 1.0
    interference_only_s: float = 1.0
    estimation_mixture_s: float = 1.5
    evaluation_mixture_s: float = 4.0

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not value > 0:
                raise SceneError(f"segment duration {name} must be > 0, got {value}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def total_s(self) -> float:
        return sum(self.as_dict().values())

    @property
    def estimation_end_s(self) -> float:
        """End of the span used for beamformer estimation."""
        return self.total_s - self.evaluation_mixture_s

    def boundaries(self) -> dict:
        """Mapping segment name -> (start_s, stop_s)."""
        out = {}
        t = 0.0
        for name, dur in self.as_dict().items():
            out[name.removesuffix("_s")] = (t, t + dur)
            t += dur
        return out


@dataclasses.dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions (M, 3) in meters plus the reference element."""

    mic_positions: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise SceneError(f"mic_positions must be (M>=2, 3), got {pos.shape}")
        diffs = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(diffs, np.inf)
        if diffs.min() <= 0:
            raise SceneError("microphone positions must be pairwise distinct")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise SceneError(f"reference_index {self.reference_index} out of range")
        pos = pos.copy()
        pos.flags.writeable = False
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @classmethod
    def linear(
        cls,
        count: int = 8,
        spacing_m: float = 0.05,
        center: tuple = (0.0, 0.0, 1.3),
        tilt_deg: float = 0.0,
        reference_index: int = 0,
    ) -> "ArrayGeometry":
        """Uniform linear array in the horizontal plane.

        At zero tilt the array lies along the x axis; ``tilt_deg`` rotates
        it about the vertical axis through its center.
        """
        offsets = (np.arange(count) - (count - 1) / 2.0) * spacing_m
        phi = math.radians(tilt_deg)
        axis = np.array([math.cos(phi), math.sin(phi), 0.0])
        pos = np.asarray(center, dtype=np.float64)[None, :] + offsets[:, None] * axis[None, :]
        return cls(pos, reference_index=reference_index)


@dataclasses.dataclass(frozen=True)
class SourceSpec:
    """One speaker: position, role and where its dry signal comes from.

    ``clip`` is either a WAV path or a ``{"synthetic": {...}}`` mapping for a
    seeded speech-like generator. ``rir`` optionally points to an M-channel
    impulse-response WAV; when present the source is rendered by convolution
    instead of the anechoic point model.
    """

    position: np.ndarray
    role: str
    clip: Union[str, dict]
    gain: float = 1.0
    rir: Optional[str] = None

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        if self.role not in ("target", "interferer"):
            raise SceneError(f"source role must be target|interferer, got {self.role!r}")


@dataclasses.dataclass(frozen=True)
class BabbleSpec:
    """Stationary babble bed: point sources near the walls.

    ``level`` is the RMS of the summed babble at the reference microphone.
    """

    speaker_count: int = 20
    level: float = 0.04
    wall_margin_m: float = 0.3

    def __post_init__(self):
        if self.speaker_count < 1:
            raise SceneError("babble speaker_count must be >= 1")
        if self.level < 0:
            raise SceneError("babble level must be >= 0")


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    """Complete description of one simulated recording."""

    room: np.ndarray  # (width, length, height) in meters
    array: ArrayGeometry
    sources: tuple
    babble: BabbleSpec = BabbleSpec()
    timeline: SegmentPlan = SegmentPlan()
    fully_overlapped: bool = False
    seed: int = 0
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        room = np.asarray(self.room, dtype=np.float64).reshape(3)
        if (room <= 0).any():
            raise SceneError(f"room dimensions must be positive, got {room}")
        room.flags.writeable = False
        object.__setattr__(self, "room", room)
        object.__setattr__(self, "sources", tuple(self.sources))

        n_targets = sum(1 for s in self.sources if s.role == "target")
        if n_targets != 1:
            raise SceneError(f"exactly one target source required, got {n_targets}")
        j = len(self.sources)
        m = self.array.n_mics
        if not 2 <= j <= m:
            raise SceneError(f"speaker count J={j} must satisfy 2 <= J <= M={m}")
        for s in self.sources:
            if not _inside_room(s.position, room):
                raise SceneError(f"source at {s.position} lies outside the room {room}")
        for p in self.array.mic_positions:
            if not _inside_room(p, room):
                raise SceneError(f"microphone at {p} lies outside the room {room}")

    @property
    def n_speakers(self) -> int:
        return len(self.sources)

    @property
    def target_index(self) -> int:
        return next(i for i, s in enumerate(self.sources) if s.role == "target")

    @property
    def interferer_indices(self) -> tuple:
        return tuple(i for i, s in enumerate(self.sources) if s.role == "interferer")


def _inside_room(point, room) -> bool:
    p = np.asarray(point, dtype=np.float64)
    return bool((p > 0).all() and (p < room).all())


def _array_from_dict(d: dict) -> ArrayGeometry:
    ref = int(d.get("reference_index", 0))
    if "positions_m" in d:
        return ArrayGeometry(np.asarray(d["positions_m"], dtype=np.float64), reference_index=ref)
    return ArrayGeometry.linear(
        count=int(d.get("count", 8)),
        spacing_m=float(d.get("spacing_m", 0.05)),
        center=tuple(d.get("center_m", (0.0, 0.0, 1.3))),
        tilt_deg=float(d.get("tilt_deg", 0.0)),
        reference_index=ref,
    )


def _timeline_from_dict(d: Optional[dict]):
    if not d:
        return SegmentPlan(), False
    fully = bool(d.get("fully_overlapped", False))
    kwargs = {}
    for field in dataclasses.fields(SegmentPlan):
        if field.name in d:
            kwargs[field.name] = float(d[field.name])
    return SegmentPlan(**kwargs), fully


def scene_spec_from_dict(d: dict) -> SceneSpec:
    """Build and validate a SceneSpec from parsed JSON."""
    try:
        room_d = d["room"]
        room = (room_d["width_m"], room_d["length_m"], room_d["height_m"])
        array = _array_from_dict(d["array"])
        sources = []
        for s in d["sources"]:
            sources.append(
                SourceSpec(
                    position=np.asarray(s["position_m"], dtype=np.float64),
                    role=s["role"],
                    clip=s["clip"],
                    gain=float(s.get("gain", 1.0)),
                    rir=s.get("rir"),
                )
            )
        babble_d = d.get("babble", {})
        babble = BabbleSpec(
            speaker_count=int(babble_d.get("speaker_count", 20)),
            level=float(babble_d.get("level", 0.04)),
            wall_margin_m=float(babble_d.get("wall_margin_m", 0.3)),
        )
        timeline, fully = _timeline_from_dict(d.get("timeline"))
        seed = int(d.get("seed", 0))
        rate = int(d.get("sample_rate", CANONICAL_RATE))
    except KeyError as exc:
        raise SceneError(f"scene spec missing required field: {exc}") from exc
    return SceneSpec(
        room=room,
        array=array,
        sources=tuple(sources),
        babble=babble,
        timeline=timeline,
        fully_overlapped=fully,
        seed=seed,
        sample_rate=rate,
    )


def scene_spec_to_dict(spec: SceneSpec) -> dict:
    """Resolved, JSON-serializable form of a SceneSpec (round-trips exactly)."""
    timeline = {k: v for k, v in spec.timeline.as_dict().items()}
    timeline["fully_overlapped"] = spec.fully_overlapped
    return {
        "room": {
            "width_m": float(spec.room[0]),
            "length_m": float(spec.room[1]),
            "height_m": float(spec.room[2]),
        },
        "array": {
            "positions_m": spec.array.mic_positions.tolist(),
            "reference_index": spec.array.reference_index,
        },
        "sources": [
            {
                "position_m": s.position.tolist(),
                "role": s.role,
                "clip": s.clip,
                "gain": s.gain,
                **({"rir": s.rir} if s.rir else {}),
            }
            for s in spec.sources
        ],
        "babble": {
            "speaker_count": spec.babble.speaker_count,
            "level": spec.babble.level,
            "wall_margin_m": spec.babble.wall_margin_m,
        },
        "timeline": timeline,
        "seed": spec.seed,
        "sample_rate": spec.sample_rate,
    }


def load_scene_spec(path) -> SceneSpec:
    """Parse and validate a scene JSON file."""
    path = Path(path)
    if not path.exists():
        raise SceneError(f"missing scene file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneError(f"malformed scene JSON {path}: {exc}") from exc
    return scene_spec_from_dict(data)


def save_scene_spec(spec: SceneSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
