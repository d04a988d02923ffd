"""Geometric and smoothness costs over a series of fixes."""

from __future__ import annotations

import warnings
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import CostWeights, DeviceTrack, FixSeries, NoFixAvailable, ParamSet, Scene
from .trilateration import Algo, LocalizerConfig, localize_track


def _consecutive(steps, span):
    """Indices t such that steps[t-span..t] are consecutive track steps."""
    steps = np.asarray(steps)
    if len(steps) <= span:
        return np.zeros(0, dtype=int)
    ok = steps[span:] - steps[:-span] == span
    return np.nonzero(ok)[0] + span


def _geometric(fixes: FixSeries, coords: Mapping[str, np.ndarray], tangents=None):
    total = 0.0
    grad = None if tangents is None else 0.0
    for t, (est, ids) in enumerate(zip(fixes.estimates, fixes.selected)):
        if not ids:
            continue
        z = np.array([est.x, est.y])
        pos = np.array([coords[a] for a in ids])
        d = np.asarray(fixes.d_hat[t])
        s = np.asarray(fixes.s_hat[t])
        diff = z[None, :] - pos
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        res = (r - d) / s
        total += float(res @ res)
        if tangents is not None:
            unit = diff / np.maximum(r, 1e-300)[:, None]
            ddiff = tangents.est[t][None, :, :] - tangents.ap_pos[t]
            dr = np.einsum("ij,ijp->ip", unit, ddiff)
            grad = grad + 2.0 * ((res / s) @ (dr - tangents.d_hat[t]))
    return total, grad


def _position(est: np.ndarray, steps, dest=None):
    idx = _consecutive(steps, 1)
    if len(idx) == 0:
        return 0.0, None if dest is None else 0.0
    delta = est[idx] - est[idx - 1]
    cost = float(np.sum(delta * delta))
    if dest is None:
        return cost, None
    return cost, 2.0 * np.einsum("ij,ijp->p", delta, dest[idx] - dest[idx - 1])


def _velocity(est: np.ndarray, steps, dt: float, dest=None):
    idx = _consecutive(steps, 2)
    if len(idx) == 0:
        return 0.0, None if dest is None else 0.0
    accel = (est[idx] - 2.0 * est[idx - 1] + est[idx - 2]) / dt
    cost = float(np.sum(accel * accel))
    if dest is None:
        return cost, None
    daccel = (dest[idx] - 2.0 * dest[idx - 1] + dest[idx - 2]) / dt
    return cost, 2.0 * np.einsum("ij,ijp->p", accel, daccel)


def _coords(scene: Scene, params: ParamSet):
    return {k: v.as_array() for k, v in scene.coords_with(params).items()}


def geometric_cost(fixes: FixSeries, scene: Scene, params: ParamSet) -> float:
    """Sum of squared, std-normalized circle residuals at each fix."""
    return _geometric(fixes, _coords(scene, params))[0]


def position_cost(fixes: FixSeries) -> float:
    return _position(fixes.as_array(), fixes.steps)[0]


def velocity_cost(fixes: FixSeries, dt: Optional[float] = None) -> float:
    dt = fixes.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _velocity(fixes.as_array(), fixes.steps, dt)[0]


def unified_cost(fixes: FixSeries, scene: Scene, params: ParamSet, w: CostWeights,
                 dt: Optional[float] = None) -> float:
    dt = fixes.dt if dt is None else dt
    total = 0.0
    if w.lambda1:
        total += w.lambda1 * geometric_cost(fixes, scene, params)
    if w.lambda2:
        total += w.lambda2 * position_cost(fixes)
    if w.lambda3:
        total += w.lambda3 * velocity_cost(fixes, dt)
    return total


def unified_cost_and_grad(fixes: FixSeries, tangents, coords, w: CostWeights):
    """Unified cost and its gradient given localizer tangents (see trilateration)."""
    est = fixes.as_array()
    dest = np.array(tangents.est)
    geo, g_geo = _geometric(fixes, coords, tangents)
    pos, g_pos = _position(est, fixes.steps, dest)
    vel, g_vel = _velocity(est, fixes.steps, fixes.dt, dest)
    cost = w.lambda1 * geo + w.lambda2 * pos + w.lambda3 * vel
    grad = w.lambda1 * g_geo + w.lambda2 * g_pos + w.lambda3 * g_vel
    n_params = dest.shape[-1]
    return cost, np.broadcast_to(np.asarray(grad, dtype=float), (n_params,)).copy()


def device_costs(tracks: Sequence[DeviceTrack], scene: Scene, params: ParamSet, w: CostWeights,
                 algo=Algo.EKF, cfg: Optional[LocalizerConfig] = None) -> dict:
    """Unified cost per device id; devices that cannot be localized are left out with a warning."""
    out = {}
    for track in sorted(tracks, key=lambda t: t.device_id):
        try:
            fixes = localize_track(track, scene, params, algo, cfg)
        except NoFixAvailable as exc:
            warnings.warn(f"excluding device {track.device_id}: {exc}", RuntimeWarning)
            continue
        out[track.device_id] = out.get(track.device_id, 0.0) + unified_cost(fixes, scene, params, w)
    if tracks and not out:
        raise NoFixAvailable("no device could be localized")
    return out


def combined_cost(tracks: Sequence[DeviceTrack], scene: Scene, params: ParamSet, w: CostWeights,
                  algo=Algo.EKF, cfg: Optional[LocalizerConfig] = None) -> float:
    """Sum of per-device unified costs, accumulated in ascending device id order."""
    return float(sum(device_costs(tracks, scene, params, w, algo, cfg).values()))
