"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Sequence

from .core import DeviceTrack, NoAnchors, ParamSet, Scene


def check_scene(scene, require_unknown: bool = False) -> Scene:
    if not isinstance(scene, Scene):
        raise TypeError(f"expected a Scene, got {type(scene).__name__}")
    if not scene.anchor_ids:
        raise NoAnchors("scene has no anchor APs")
    for ap in scene.aps:
        if ap.is_anchor and ap.coords is None:
            raise ValueError(f"anchor {ap.id} has no coordinates")
    if require_unknown and not scene.unknown_ids:
        raise ValueError("scene has no unknown APs")
    return scene


def check_tracks(tracks, scene: Scene = None, min_len: int = 1) -> list:
    """Validate a list of device tracks; returns it as a list."""
    if isinstance(tracks, DeviceTrack):
        tracks = [tracks]
    tracks = list(tracks)
    if not tracks:
        raise ValueError("no device tracks given")
    ids = [t.device_id for t in tracks if isinstance(t, DeviceTrack)]
    if len(ids) != len(tracks):
        raise TypeError("every element must be a DeviceTrack")
    if len(set(ids)) != len(ids):
        raise ValueError("device ids must be unique")
    for t in tracks:
        if len(t) < min_len:
            raise ValueError(f"track {t.device_id} has {len(t)} steps, need at least {min_len}")
    if scene is not None:
        known = {ap.id for ap in scene.aps}
        for t in tracks:
            missing = t.ap_ids() - known
            if missing:
                raise ValueError(f"track {t.device_id} references APs not in the scene: {sorted(missing)}")
    return tracks


def check_params_cover(params: ParamSet, tracks: Sequence[DeviceTrack]) -> None:
    missing = [t.device_id for t in tracks if t.device_id not in params.calib]
    if missing:
        raise KeyError(f"no calibration for device(s) {', '.join(missing)}")
