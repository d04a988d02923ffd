"""Text formats for scenes, ranging logs, parameters, trajectories and reports.

Every format starts with a ``<kind> <version>`` line; unknown versions are
rejected. Blank lines and ``#`` comments are ignored. Example ranging log::

    ftmcal-log 1
    interval_ms 500
    device pixel3 600
    m pixel3 0 AP1 12345 410

Measurement records are ``m <device> <step> <ap> <distance_mm> <stddev_mm>``;
steps run from 0 to the declared count minus one, and steps without any
record become empty snapshots.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

from .core import (
    ApKind,
    ApNode,
    CalibrationPoly,
    DeviceTrack,
    FixSeries,
    FtmCalError,
    ParamSet,
    Point2,
    RangingPair,
    RangingSnapshot,
    Scene,
)

SCENE_TAG = "ftmcal-scene"
LOG_TAG = "ftmcal-log"
PARAMS_TAG = "ftmcal-params"
VERSION = "1"


class ParseError(FtmCalError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path, self.line = path, line


class ValidationError(FtmCalError):
    pass


class NonMonotonicSteps(ParseError):
    pass


class DuplicateMeasurement(ParseError):
    pass


def _lines(path) -> Iterator[Tuple[int, List[str]]]:
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield no, text.split()


def _check_header(path, lines, tag):
    try:
        no, fields = next(lines)
    except StopIteration:
        raise ParseError(path, 1, f"empty file, expected '{tag} {VERSION}'") from None
    if len(fields) != 2 or fields[0] != tag:
        raise ParseError(path, no, f"expected header '{tag} {VERSION}'")
    if fields[1] != VERSION:
        raise ParseError(path, no, f"unsupported {tag} version {fields[1]!r}")


def _float(path, no, text, what):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, no, f"bad {what} {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, no, f"non-finite {what}")
    return v


def _int(path, no, text, what):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, no, f"bad {what} {text!r}") from None


# -- scene ------------------------------------------------------------------------

def validate_scene(scene: Scene) -> None:
    seen = set()
    for ap in scene.aps:
        if ap.id in seen:
            raise ValidationError(f"duplicate AP id {ap.id}")
        seen.add(ap.id)
        if ap.is_anchor and ap.coords is None:
            raise ValidationError(f"anchor {ap.id} has no coordinates")
        if ap.coords is not None and not (0 <= ap.coords.x <= scene.width and 0 <= ap.coords.y <= scene.height):
            raise ValidationError(f"AP {ap.id} lies outside the {scene.width} x {scene.height} area")


def load_scene(path) -> Scene:
    lines = _lines(path)
    _check_header(path, lines, SCENE_TAG)
    area = None
    aps = []
    for no, f in lines:
        if f[0] == "area":
            if len(f) != 3:
                raise ParseError(path, no, "expected 'area <width> <height>'")
            area = (_float(path, no, f[1], "width"), _float(path, no, f[2], "height"))
        elif f[0] == "ap":
            if len(f) not in (3, 5):
                raise ParseError(path, no, "expected 'ap <id> anchor|unknown [<x> <y>]'")
            try:
                kind = ApKind(f[2])
            except ValueError:
                raise ParseError(path, no, f"AP kind must be anchor or unknown, got {f[2]!r}") from None
            coords = None
            if len(f) == 5:
                coords = Point2(_float(path, no, f[3], "x"), _float(path, no, f[4], "y"))
            aps.append(ApNode(f[1], kind, coords))
        else:
            raise ParseError(path, no, f"unknown directive {f[0]!r}")
    if area is None:
        raise ParseError(path, 1, "missing 'area' line")
    ids = [ap.id for ap in aps]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ValidationError(f"duplicate AP id {dup[0]}")
    try:
        scene = Scene(area[0], area[1], tuple(aps))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    validate_scene(scene)
    return scene


def save_scene(scene: Scene, path) -> None:
    validate_scene(scene)
    out = [f"{SCENE_TAG} {VERSION}", f"area {scene.width!r} {scene.height!r}"]
    for ap in scene.aps:
        row = f"ap {ap.id} {ap.kind.value}"
        if ap.coords is not None:
            row += f" {ap.coords.x!r} {ap.coords.y!r}"
        out.append(row)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# -- ranging log ------------------------------------------------------------------

def to_mm(meters: float) -> int:
    return int(round(meters * 1000.0))


def quantize_track(track: DeviceTrack) -> DeviceTrack:
    """Round distances to whole millimeters, as stored on disk."""
    snaps = tuple(
        RangingSnapshot(s.step, tuple(RangingPair(p.ap_id, to_mm(p.d_ftm) / 1000.0, to_mm(p.s_ftm) / 1000.0)
                                      for p in s.pairs))
        for s in track.snapshots
    )
    return DeviceTrack(track.device_id, track.dt, snaps, track.truth)


def load_ranging_log(path) -> List[DeviceTrack]:
    lines = _lines(path)
    _check_header(path, lines, LOG_TAG)
    interval_ms = None
    lengths: Dict[str, int] = {}
    records: Dict[str, Dict[int, Dict[str, RangingPair]]] = {}
    last_step: Dict[str, int] = {}
    for no, f in lines:
        if f[0] == "interval_ms":
            if len(f) != 2:
                raise ParseError(path, no, "expected 'interval_ms <ms>'")
            interval_ms = _int(path, no, f[1], "interval")
            if interval_ms <= 0:
                raise ParseError(path, no, "interval must be positive")
        elif f[0] == "device":
            if len(f) != 3:
                raise ParseError(path, no, "expected 'device <id> <steps>'")
            if f[1] in lengths:
                raise ParseError(path, no, f"device {f[1]} declared twice")
            lengths[f[1]] = _int(path, no, f[2], "step count")
            if lengths[f[1]] < 0:
                raise ParseError(path, no, "step count must be non-negative")
            records[f[1]] = {}
        elif f[0] == "m":
            if len(f) != 6:
                raise ParseError(path, no, "expected 'm <device> <step> <ap> <distance_mm> <stddev_mm>'")
            dev, ap = f[1], f[3]
            if dev not in lengths:
                raise ParseError(path, no, f"undeclared device {dev}")
            step = _int(path, no, f[2], "step")
            if not 0 <= step < lengths[dev]:
                raise ParseError(path, no, f"step {step} outside 0..{lengths[dev] - 1}")
            if step < last_step.get(dev, 0):
                raise NonMonotonicSteps(path, no, f"device {dev}: step {step} after {last_step[dev]}")
            last_step[dev] = step
            dist = _int(path, no, f[4], "distance_mm")
            std = _int(path, no, f[5], "stddev_mm")
            if std < 0:
                raise ParseError(path, no, "stddev_mm must be unsigned")
            snap = records[dev].setdefault(step, {})
            if ap in snap:
                raise DuplicateMeasurement(path, no, f"repeated measurement ({dev}, {step}, {ap})")
            snap[ap] = RangingPair(ap, dist / 1000.0, std / 1000.0)
        else:
            raise ParseError(path, no, f"unknown directive {f[0]!r}")
    if lengths and interval_ms is None:
        raise ParseError(path, 1, "missing 'interval_ms' line")
    tracks = []
    for dev, n in lengths.items():
        snaps = tuple(RangingSnapshot(i, tuple(records[dev].get(i, {}).values())) for i in range(n))
        tracks.append(DeviceTrack(dev, interval_ms / 1000.0, snaps))
    return tracks


def save_ranging_log(tracks: Sequence[DeviceTrack], path) -> None:
    if not tracks:
        dt_ms = 500
    else:
        dts = {to_mm(t.dt) for t in tracks}
        if len(dts) != 1:
            raise ValidationError("all tracks in one log must share the measurement interval")
        dt_ms = dts.pop()
    out = [f"{LOG_TAG} {VERSION}", f"interval_ms {dt_ms}"]
    for t in tracks:
        out.append(f"device {t.device_id} {len(t)}")
    for t in tracks:
        for i, snap in enumerate(t.snapshots):
            for p in snap.pairs:
                out.append(f"m {t.device_id} {i} {p.ap_id} {to_mm(p.d_ftm)} {to_mm(p.s_ftm)}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# -- parameters ------------------------------------------------------------------

def save_params(params: ParamSet, path) -> None:
    out = [f"{PARAMS_TAG} {VERSION}", "[unknown_aps]"]
    for ap, p in params.unknown_coords.items():
        out.append(f"{ap} {float(p.x)!r} {float(p.y)!r}")
    out.append("[devices]")
    for dev, poly in params.calib.items():
        out.append(" ".join([dev] + [repr(float(c)) for c in poly.coeffs]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_params(path) -> ParamSet:
    lines = _lines(path)
    _check_header(path, lines, PARAMS_TAG)
    section = None
    seen = set()
    coords, calib = {}, {}
    for no, f in lines:
        if len(f) == 1 and f[0] in ("[unknown_aps]", "[devices]"):
            if f[0] in seen:
                raise ParseError(path, no, f"duplicate section {f[0]}")
            section = f[0]
            seen.add(section)
        elif section == "[unknown_aps]":
            if len(f) != 3:
                raise ParseError(path, no, "expected '<ap> <x> <y>'")
            if f[0] in coords:
                raise ParseError(path, no, f"duplicate AP {f[0]}")
            coords[f[0]] = Point2(_float(path, no, f[1], "x"), _float(path, no, f[2], "y"))
        elif section == "[devices]":
            if len(f) < 2:
                raise ParseError(path, no, "expected '<device> <c0> [<c1> ...]'")
            if f[0] in calib:
                raise ParseError(path, no, f"duplicate device {f[0]}")
            calib[f[0]] = CalibrationPoly(tuple(_float(path, no, c, "coefficient") for c in f[1:]))
        else:
            raise ParseError(path, no, "record outside a section")
    for name in ("[unknown_aps]", "[devices]"):
        if name not in seen:
            raise ParseError(path, 1, f"missing {name} section")
    return ParamSet(coords, calib)


# -- plot-ready series and reports --------------------------------------------------

SERIES_FIELDS = ["device", "step", "x", "y"]


def save_series(rows: Iterable[Tuple[str, int, float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_FIELDS)
        for dev, step, x, y in rows:
            w.writerow([dev, step, repr(float(x)), repr(float(y))])


def fixes_rows(fixes: FixSeries):
    for step, p in zip(fixes.steps, fixes.estimates):
        yield fixes.device_id, step, p.x, p.y


def load_series(path) -> Dict[str, Dict[int, Point2]]:
    """device -> {step -> point} from a trajectory/fixes CSV."""
    out: Dict[str, Dict[int, Point2]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_FIELDS:
            raise ParseError(path, 1, f"expected header {','.join(SERIES_FIELDS)}")
        for no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(path, no, "expected 4 columns")
            dev = row[0]
            step = _int(path, no, row[1], "step")
            pt = Point2(_float(path, no, row[2], "x"), _float(path, no, row[3], "y"))
            if step in out.setdefault(dev, {}):
                raise ParseError(path, no, f"duplicate step {step} for {dev}")
            out[dev][step] = pt
    return out


def save_cdf(points: Sequence[Tuple[float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["error", "fraction"])
        for e, f in points:
            w.writerow([repr(float(e)), repr(float(f))])


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
