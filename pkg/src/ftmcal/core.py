"""Shared domain types for FTM self-calibration.

All distances are meters and all times are seconds. Types are frozen
value objects; anything that looks like an update returns a new object.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


class FtmCalError(Exception):
    """Base class for every error raised by this package."""


class DegenerateGeometry(FtmCalError):
    pass


class SingularMeasurement(FtmCalError):
    pass


class NoFixAvailable(FtmCalError):
    pass


class NoAnchors(FtmCalError):
    pass


class TrackTooShort(FtmCalError):
    pass


class NonFiniteGradient(FtmCalError):
    pass


class KeyMismatch(FtmCalError):
    pass


class LengthMismatch(FtmCalError):
    pass


class EmptyInput(FtmCalError):
    pass


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Point2":
        return cls(float(a[0]), float(a[1]))


def distance(a: Point2, b: Point2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


class ApKind(enum.Enum):
    ANCHOR = "anchor"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ApNode:
    """An access point.

    For anchors ``coords`` is the surveyed position. For unknown APs it is
    the true position when known (simulation, evaluation) or None.
    """

    id: str
    kind: ApKind
    coords: Optional[Point2] = None

    @property
    def is_anchor(self) -> bool:
        return self.kind is ApKind.ANCHOR


@dataclass(frozen=True)
class RangingPair:
    ap_id: str
    d_ftm: float
    s_ftm: float

    def __post_init__(self):
        if not math.isfinite(self.d_ftm):
            raise ValueError(f"non-finite FTM distance for {self.ap_id}")
        if not (self.s_ftm >= 0.0 and math.isfinite(self.s_ftm)):
            raise ValueError(f"invalid FTM std-dev {self.s_ftm} for {self.ap_id}")


@dataclass(frozen=True)
class RangingSnapshot:
    step: int
    pairs: Tuple[RangingPair, ...] = ()

    def __post_init__(self):
        ids = [p.ap_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate AP in snapshot {self.step}")


@dataclass(frozen=True)
class DeviceTrack:
    """One device's ranging history at a fixed measurement interval."""

    device_id: str
    dt: float
    snapshots: Tuple[RangingSnapshot, ...]
    truth: Optional[Tuple[Point2, ...]] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for a, b in zip(self.snapshots, self.snapshots[1:]):
            if b.step != a.step + 1:
                raise ValueError(
                    f"track {self.device_id}: steps must increase by 1 ({a.step} -> {b.step})"
                )
        if self.truth is not None and len(self.truth) != len(self.snapshots):
            raise ValueError(f"track {self.device_id}: truth length mismatch")

    def __len__(self) -> int:
        return len(self.snapshots)

    def window(self, start: int, length: int) -> "DeviceTrack":
        truth = None if self.truth is None else self.truth[start:start + length]
        return DeviceTrack(self.device_id, self.dt, self.snapshots[start:start + length], truth)

    def ap_ids(self) -> set:
        return {p.ap_id for s in self.snapshots for p in s.pairs}


@dataclass(frozen=True)
class CalibrationPoly:
    """Inverse-distortion polynomial, coefficients in ascending order (c_0, c_1, ..., c_L)."""

    coeffs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) < 1:
            raise ValueError("calibration polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise ValueError("non-finite calibration coefficient")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def identity(cls, order: int = 2) -> "CalibrationPoly":
        return cls((0.0, 1.0) + (0.0,) * (order - 1))


@dataclass(frozen=True)
class ParamSet:
    """Trainable state: unknown-AP coordinates plus one calibration per device."""

    unknown_coords: Mapping[str, Point2]
    calib: Mapping[str, CalibrationPoly]

    def __post_init__(self):
        object.__setattr__(self, "unknown_coords", dict(sorted(self.unknown_coords.items())))
        object.__setattr__(self, "calib", dict(sorted(self.calib.items())))

    def with_calib(self, device_id: str, poly: CalibrationPoly) -> "ParamSet":
        calib = dict(self.calib)
        calib[device_id] = poly
        return ParamSet(self.unknown_coords, calib)


@dataclass(frozen=True)
class CostWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.1

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("cost weights must be non-negative")

    def scaled(self, factor: float) -> "CostWeights":
        return CostWeights(self.lambda1 * factor, self.lambda2 * factor, self.lambda3 * factor)


@dataclass(frozen=True)
class Scene:
    width: float
    height: float
    aps: Tuple[ApNode, ...]

    def __post_init__(self):
        ids = [ap.id for ap in self.aps]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate AP id in scene")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("scene width and height must be positive")
        for ap in self.aps:
            p = ap.coords
            if p is not None and not (0 <= p.x <= self.width and 0 <= p.y <= self.height):
                raise ValueError(f"AP {ap.id} at ({p.x}, {p.y}) lies outside the scene")

    @property
    def anchor_ids(self) -> List[str]:
        return [ap.id for ap in self.aps if ap.is_anchor]

    @property
    def unknown_ids(self) -> List[str]:
        return sorted(ap.id for ap in self.aps if not ap.is_anchor)

    def ap(self, ap_id: str) -> ApNode:
        for ap in self.aps:
            if ap.id == ap_id:
                return ap
        raise KeyError(ap_id)

    def anchor_coords(self) -> Dict[str, Point2]:
        return {ap.id: ap.coords for ap in self.aps if ap.is_anchor}

    def true_unknown_coords(self) -> Dict[str, Point2]:
        return {ap.id: ap.coords for ap in self.aps if not ap.is_anchor and ap.coords is not None}

    def true_coords(self) -> Dict[str, Point2]:
        return {ap.id: ap.coords for ap in self.aps if ap.coords is not None}

    def with_anchors_only(self, keep: Iterable[str]) -> "Scene":
        keep = set(keep)
        return Scene(self.width, self.height, tuple(ap for ap in self.aps if ap.id in keep))

    def coords_with(self, params: ParamSet) -> Dict[str, Point2]:
        """AP coordinates used for localization: anchors fixed, unknowns from params."""
        out = self.anchor_coords()
        out.update(params.unknown_coords)
        return out


@dataclass(frozen=True)
class FixSeries:
    """Per-step localizer output for one track.

    ``steps`` are indices into the track (not snapshot step labels). For
    every kept step, ``selected`` holds the AP ids used, with the matching
    calibrated distances and std-dev estimates.
    """

    device_id: str
    dt: float
    steps: Tuple[int, ...]
    estimates: Tuple[Point2, ...]
    selected: Tuple[Tuple[str, ...], ...]
    d_hat: Tuple[Tuple[float, ...], ...]
    s_hat: Tuple[Tuple[float, ...], ...]

    def __len__(self) -> int:
        return len(self.estimates)

    def as_array(self) -> np.ndarray:
        if not self.estimates:
            return np.zeros((0, 2))
        return np.array([[p.x, p.y] for p in self.estimates])


def points_array(points: Sequence[Point2]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)
