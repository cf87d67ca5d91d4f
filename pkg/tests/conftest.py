"""Shared scene factories and fixtures.

Speaker placement follows the experimental protocol: rooms 6-9 m on a side,
3 m high, an 8-mic 5 cm linear array at 1.3 m with random tilt, speakers
1-1.5 m from the array center. Bearings are kept at least 15 degrees apart
after folding across the array axis (a linear array cannot tell mirror
bearings apart, and colinear speakers make null-while-pass impossible for
any method).
"""

import numpy as np
import pytest

from beamlab.metrics import source_bearing_deg
from beamlab.scenes import ArrayGeometry, BabbleSpec, SceneSpec, SegmentPlan, SourceSpec
from beamlab.simulate import assemble_scene

TARGET_RMS = 0.05
# target-over-babble RMS of 1.46 dB at the reference mic (the reported input
# SNR), accounting for the 1/r gain at the mean 1.25 m speaker distance
BABBLE_LEVEL = TARGET_RMS / 1.25 / 10 ** (1.46 / 20)


def folded_bearing(bearing_deg: float) -> float:
    if bearing_deg > 90.0:
        return 180.0 - bearing_deg
    if bearing_deg < -90.0:
        return -180.0 - bearing_deg
    return bearing_deg


def protocol_scene(
    seed: int,
    n_interferers: int = 2,
    min_separation_deg: float = 15.0,
    distance_range=(1.0, 1.5),
    timeline: SegmentPlan = None,
    fully_overlapped: bool = False,
    babble_level: float = BABBLE_LEVEL,
    in_plane: bool = False,
    max_bearing_deg: float = None,
) -> SceneSpec:
    rng = np.random.default_rng(seed)
    width, length = rng.uniform(6.0, 9.0, 2)
    room = (width, length, 3.0)
    center = np.array([width / 2, length / 2, 1.3])
    array = ArrayGeometry.linear(
        count=8, spacing_m=0.05, center=center, tilt_deg=rng.uniform(-45.0, 45.0)
    )
    sources = []
    used = []
    for i, role in enumerate(["target"] + ["interferer"] * n_interferers):
        position = None
        for _ in range(1000):
            dist = rng.uniform(*distance_range)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            z_off = 0.0 if in_plane else rng.uniform(-0.2, 0.4)
            cand = center + np.array(
                [dist * np.cos(angle), dist * np.sin(angle), z_off]
            )
            if not ((cand > 0.25).all() and (cand < np.asarray(room) - 0.25).all()):
                continue
            fb = folded_bearing(source_bearing_deg(array, cand))
            if max_bearing_deg is not None and abs(fb) > max_bearing_deg:
                continue
            if all(abs(fb - other) >= min_separation_deg for other in used):
                used.append(fb)
                position = cand
                break
        assert position is not None, f"no admissible position for source {i}"
        sources.append(
            SourceSpec(
                position=position,
                role=role,
                clip={"synthetic": {"seed": int(seed * 100 + i), "rms": TARGET_RMS}},
            )
        )
    kwargs = {}
    if timeline is not None:
        kwargs["timeline"] = timeline
    return SceneSpec(
        room=room,
        array=array,
        sources=tuple(sources),
        babble=BabbleSpec(level=babble_level),
        fully_overlapped=fully_overlapped,
        seed=seed,
        **kwargs,
    )


SHORT_TIMELINE = SegmentPlan(0.3, 0.5, 0.5, 0.8, 1.0)


@pytest.fixture(scope="session")
def small_scene():
    """A 3-speaker anechoic scene with a shortened timeline, for module tests."""
    return assemble_scene(protocol_scene(42, timeline=SHORT_TIMELINE))


@pytest.fixture(scope="session")
def small_scene_2spk():
    return assemble_scene(protocol_scene(43, n_interferers=1, timeline=SHORT_TIMELINE))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
