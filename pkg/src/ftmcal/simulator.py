"""Synthetic scenes, random-waypoint walks and burst-mode FTM ranging.

Randomness is drawn from named substreams of a single seed: ``walk`` and
``noise`` per device (and per ``tag``, so test walks differ from training
walks), ``minibatch`` in the trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ._random import substream
from .calibration import fit_calibration
from .core import (
    ApKind,
    ApNode,
    DeviceTrack,
    ParamSet,
    Point2,
    RangingPair,
    RangingSnapshot,
    Scene,
)

WALK_SPEED = 3.0 / 3.6  # 3 km/h
DEFAULT_DT = 0.5


@dataclass(frozen=True)
class DistortionModel:
    """Forward map true distance -> mean FTM distance, plus burst noise."""

    forward: Tuple[float, ...] = (0.0, 1.0, 0.0)
    noise_sigma: float = 1.0
    burst_size: int = 8
    range_limit: float = 40.0

    def __post_init__(self):
        object.__setattr__(self, "forward", tuple(float(c) for c in self.forward))
        if self.burst_size < 2:
            raise ValueError("burst_size must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not self.range_limit > 0:
            raise ValueError("range_limit must be positive")
        self.check_monotone(self.range_limit)

    def mean(self, d_true):
        return sum(c * np.asarray(d_true, dtype=float) ** l for l, c in enumerate(self.forward))

    def check_monotone(self, upper: float, samples: int = 1001) -> None:
        d = np.linspace(0.0, upper, samples)
        if np.any(np.diff(self.mean(d)) <= 0):
            raise ValueError(f"forward distortion {self.forward} is not increasing on [0, {upper}]")


def office_scene() -> Scene:
    """A 56 x 37 m floor with 10 APs; the four corner-most (1, 3, 7, 9) are anchors."""
    layout = {
        "AP1": (4.0, 4.0), "AP2": (28.0, 5.0), "AP3": (52.0, 4.0),
        "AP4": (16.0, 15.0), "AP5": (40.0, 14.0), "AP6": (28.0, 22.0),
        "AP7": (4.0, 33.0), "AP8": (17.0, 30.0), "AP9": (52.0, 33.0),
        "AP10": (40.0, 29.0),
    }
    anchors = {"AP1", "AP3", "AP7", "AP9"}
    aps = tuple(
        ApNode(ap, ApKind.ANCHOR if ap in anchors else ApKind.UNKNOWN, Point2(*xy))
        for ap, xy in layout.items()
    )
    return Scene(56.0, 37.0, aps)


def gen_walk(scene: Scene, speed: float, dt: float, steps: int, rng: np.random.Generator) -> List[Point2]:
    """Random-waypoint trajectory sampled every ``dt`` seconds."""
    if not speed > 0:
        raise ValueError("speed must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    size = np.array([scene.width, scene.height])
    pos = rng.uniform(0.0, 1.0, 2) * size
    target = rng.uniform(0.0, 1.0, 2) * size
    stride = speed * dt
    out = [Point2.from_array(pos)]
    while len(out) < steps:
        gap = target - pos
        dist = math.hypot(gap[0], gap[1])
        if dist <= stride:
            pos = target
            target = rng.uniform(0.0, 1.0, 2) * size
        else:
            pos = pos + gap * (stride / dist)
        out.append(Point2.from_array(pos))
    return out


def measure(d_true: float, model: DistortionModel, rng: np.random.Generator) -> Optional[Tuple[float, float]]:
    """One burst: mean and sample std-dev of ``burst_size`` distorted noisy ranges."""
    if d_true < 0:
        raise ValueError("true distance must be non-negative")
    if d_true > model.range_limit:
        return None
    samples = model.mean(d_true) + rng.normal(0.0, 1.0, model.burst_size) * model.noise_sigma
    return float(np.mean(samples)), float(np.std(samples, ddof=1))


def measure_walk(walk: Sequence[Point2], scene: Scene, model: DistortionModel,
                 rng: np.random.Generator, device_id: str, dt: float) -> DeviceTrack:
    aps = [ap for ap in scene.aps if ap.coords is not None]
    snaps = []
    for i, p in enumerate(walk):
        pairs = []
        for ap in aps:
            m = measure(math.hypot(p.x - ap.coords.x, p.y - ap.coords.y), model, rng)
            if m is not None:
                pairs.append(RangingPair(ap.id, *m))
        snaps.append(RangingSnapshot(i, tuple(pairs)))
    return DeviceTrack(device_id, dt, tuple(snaps), tuple(walk))


def true_distances(track: DeviceTrack, scene: Scene):
    """(d_ftm, d_true) arrays over every pair in a track with ground truth."""
    coords = scene.true_coords()
    d_ftm, d_true = [], []
    for snap, p in zip(track.snapshots, track.truth):
        for pair in snap.pairs:
            c = coords[pair.ap_id]
            d_ftm.append(pair.d_ftm)
            d_true.append(math.hypot(p.x - c.x, p.y - c.y))
    return np.array(d_ftm), np.array(d_true)


def simulate_dataset(scene: Scene, models: Union[DistortionModel, Sequence[DistortionModel]],
                     devices: int = 3, duration_steps: int = 600, dt: float = DEFAULT_DT,
                     speed: float = WALK_SPEED, seed: int = 0, tag: str = "train",
                     order: int = 2) -> Tuple[List[DeviceTrack], ParamSet]:
    """Simulate one walk per device; return tracks with truth and the reference ParamSet.

    The reference calibration of each device is the least-squares polynomial
    from its observed raw distances to the true distances.
    """
    if isinstance(models, DistortionModel):
        models = [models] * devices
    if len(models) != devices:
        raise ValueError("need one distortion model per device")
    missing = [ap.id for ap in scene.aps if ap.coords is None]
    if missing:
        raise ValueError(f"simulation needs true coordinates for every AP: {missing}")
    diag = math.hypot(scene.width, scene.height)
    tracks, calib = [], {}
    for k, model in enumerate(models):
        model.check_monotone(diag)
        device_id = f"dev{k}"
        walk = gen_walk(scene, speed, dt, duration_steps, substream(seed, f"{tag}/walk", k))
        track = measure_walk(walk, scene, model, substream(seed, f"{tag}/noise", k), device_id, dt)
        tracks.append(track)
        d_ftm, d_true = true_distances(track, scene)
        calib[device_id] = fit_calibration(d_ftm, d_true, order)
    return tracks, ParamSet(scene.true_unknown_coords(), calib)
