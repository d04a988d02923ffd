"""Device localizers: linearized LS/WLS and a range-only constant-velocity EKF.

Every solver can optionally carry forward-mode tangents (derivatives with
respect to a flat parameter vector, stored in a trailing axis) so the
trainer can differentiate fixes through the exact same arithmetic used
for plain localization.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .calibration import DEFAULT_STD_FLOOR, calibrate_with_jacobian
from .core import (
    CalibrationPoly,
    DegenerateGeometry,
    DeviceTrack,
    FixSeries,
    NoFixAvailable,
    ParamSet,
    Point2,
    RangingSnapshot,
    Scene,
    SingularMeasurement,
)


class Algo(str, enum.Enum):
    LS = "ls"
    WLS = "wls"
    EKF = "ekf"


@dataclass(frozen=True)
class LocalizerConfig:
    k_max: int = 5
    std_floor: float = DEFAULT_STD_FLOOR
    q: float = 1.0
    init_cov: Tuple[float, float, float, float] = (25.0, 25.0, 4.0, 4.0)
    cond_limit: float = 1e10

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if not self.std_floor > 0:
            raise ValueError("std_floor must be positive")
        if self.q < 0:
            raise ValueError("q must be non-negative")


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray  # (x, y, vx, vy)
    cov: np.ndarray  # 4x4


def select_aps(snapshot: RangingSnapshot, poly: CalibrationPoly, k_max: int = 5,
               floor: float = DEFAULT_STD_FLOOR) -> List[str]:
    """Ids of the (up to) ``k_max`` APs with the smallest calibrated distance."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not snapshot.pairs:
        return []
    d_hat, _ = calibrate_with_jacobian(poly, np.array([p.d_ftm for p in snapshot.pairs]))
    order = sorted(range(len(snapshot.pairs)), key=lambda j: (d_hat[j], snapshot.pairs[j].ap_id))
    return [snapshot.pairs[j].ap_id for j in order[:k_max]]


# -- linearized least squares ------------------------------------------------

def _lls(pos, d, w, cond_limit, dpos=None, dd=None):
    """Weighted linearized LS; the last AP is the reference circle.

    pos (k, 2), d (k,), w (k-1,) row weights. Tangents dpos (k, 2, p) and
    dd (k, p) are optional; returns (u, du).
    """
    if len(pos) < 3:
        raise DegenerateGeometry("need at least 3 APs")
    ref = pos[-1]
    A = 2.0 * (pos[:-1] - ref)
    sq = np.einsum("ij,ij->i", pos, pos)
    b = sq[:-1] - sq[-1] - d[:-1] ** 2 + d[-1] ** 2
    Aw = A * w[:, None]
    normal = A.T @ Aw
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > cond_limit:
        raise DegenerateGeometry("AP geometry is (nearly) collinear")
    u = np.linalg.solve(normal, Aw.T @ b)
    if dpos is None:
        return u, None
    dA = 2.0 * (dpos[:-1] - dpos[-1][None])
    dsq = 2.0 * np.einsum("ij,ijp->ip", pos, dpos)
    db = dsq[:-1] - dsq[-1][None] - 2.0 * d[:-1, None] * dd[:-1] + 2.0 * d[-1] * dd[-1][None]
    resid = b - A @ u
    rhs = np.einsum("ijp,i->jp", dA, w * resid) + Aw.T @ (db - np.einsum("ijp,j->ip", dA, u))
    return u, np.linalg.solve(normal, rhs)


def _as_arrays(aps):
    pos = np.array([[p.x, p.y] for p, *_ in aps], dtype=float).reshape(-1, 2)
    d = np.array([a[1] for a in aps], dtype=float)
    return pos, d


def solve_ls(aps: Sequence[Tuple[Point2, float]], cond_limit: float = 1e10) -> Point2:
    """Linear least-squares trilateration from (AP position, distance) pairs."""
    pos, d = _as_arrays(aps)
    u, _ = _lls(pos, d, np.ones(max(len(pos) - 1, 0)), cond_limit)
    return Point2.from_array(u)


def solve_wls(aps: Sequence[Tuple[Point2, float, float]], cond_limit: float = 1e10) -> Point2:
    """Weighted variant of :func:`solve_ls`; row j is weighted by 1/s_j**2."""
    pos, d = _as_arrays(aps)
    s = np.array([a[2] for a in aps], dtype=float)
    if np.any(s <= 0):
        raise ValueError("std-dev estimates must be positive")
    u, _ = _lls(pos, d, 1.0 / s[:-1] ** 2, cond_limit)
    return Point2.from_array(u)


# -- EKF -------------------------------------------------------------------

def _transition(dt):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def _process_noise(dt, q):
    # white-acceleration model, per axis [[dt^3/3, dt^2/2], [dt^2/2, dt]]
    Q = np.zeros((4, 4))
    for i in (0, 1):
        Q[i, i] = dt ** 3 / 3.0
        Q[i, i + 2] = Q[i + 2, i] = dt ** 2 / 2.0
        Q[i + 2, i + 2] = dt
    return q * Q


def _predict(mean, cov, dt, q, dmean=None, dcov=None):
    F = _transition(dt)
    mean = F @ mean
    cov = F @ cov @ F.T + _process_noise(dt, q)
    if dmean is not None:
        dmean = F @ dmean
        dcov = np.einsum("ij,jkp,lk->ilp", F, dcov, F)
    return mean, cov, dmean, dcov


def _update(mean, cov, pos, d, s, dmean=None, dcov=None, dpos=None, dd=None):
    diff = mean[:2][None, :] - pos
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(r < 1e-9):
        raise SingularMeasurement("predicted position coincides with an AP")
    unit = diff / r[:, None]
    k = len(pos)
    H = np.zeros((k, 4))
    H[:, :2] = unit
    R = np.diag(s ** 2)
    PHt = cov @ H.T
    S = H @ PHt + R
    S_inv = np.linalg.inv(S)
    K = PHt @ S_inv
    innov = d - r
    new_mean = mean + K @ innov
    A = np.eye(4) - K @ H
    new_cov = A @ cov @ A.T + K @ R @ K.T
    new_cov = 0.5 * (new_cov + new_cov.T)
    if dmean is None:
        return new_mean, new_cov, None, None

    ddiff = dmean[None, :2, :] - dpos  # (k, 2, p)
    dr = np.einsum("ij,ijp->ip", unit, ddiff)
    dunit = (ddiff - unit[:, :, None] * dr[:, None, :]) / r[:, None, None]
    dH = np.zeros((k, 4, dmean.shape[1]))
    dH[:, :2, :] = dunit
    dPHt = np.einsum("ijp,kj->ikp", dcov, H) + np.einsum("ij,kjp->ikp", cov, dH)
    dS = np.einsum("ijp,jk->ikp", dH, PHt) + np.einsum("ij,jkp->ikp", H, dPHt)
    dS_inv = -np.einsum("ij,jkp,kl->ilp", S_inv, dS, S_inv)
    dK = np.einsum("ijp,jk->ikp", dPHt, S_inv) + np.einsum("ij,jkp->ikp", PHt, dS_inv)
    dinnov = dd - dr
    new_dmean = dmean + np.einsum("ijp,j->ip", dK, innov) + K @ dinnov
    dA = -(np.einsum("ijp,jk->ikp", dK, H) + np.einsum("ij,jkp->ikp", K, dH))
    APA = np.einsum("ijp,jk,lk->ilp", dA, cov, A)
    KRK = np.einsum("ijp,jk,lk->ilp", dK, R, K)
    new_dcov = APA + np.transpose(APA, (1, 0, 2)) + np.einsum("ij,jkp,lk->ilp", A, dcov, A) \
        + KRK + np.transpose(KRK, (1, 0, 2))
    new_dcov = 0.5 * (new_dcov + np.transpose(new_dcov, (1, 0, 2)))
    return new_mean, new_cov, new_dmean, new_dcov


def ekf_predict(state: EkfState, dt: float, q: float = 1.0) -> EkfState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if q < 0:
        raise ValueError("q must be non-negative")
    mean, cov, _, _ = _predict(np.asarray(state.mean, float), np.asarray(state.cov, float), dt, q)
    return EkfState(mean, cov)


def ekf_update(state: EkfState, aps: Sequence[Tuple[Point2, float, float]]) -> EkfState:
    """Range-only update with measurement noise diag(s**2); Joseph-form covariance."""
    if not aps:
        raise ValueError("need at least one AP")
    pos, d = _as_arrays(aps)
    s = np.array([a[2] for a in aps], dtype=float)
    if np.any(s <= 0):
        raise ValueError("std-dev estimates must be positive")
    mean, cov, _, _ = _update(np.asarray(state.mean, float), np.asarray(state.cov, float), pos, d, s)
    return EkfState(mean, cov)


# -- whole-track localization -----------------------------------------------

@dataclass
class _Tangents:
    """Per-step derivative records collected while localizing with tangents."""

    est: List[np.ndarray]  # (2, p) per kept step
    ap_pos: List[np.ndarray]  # (k, 2, p) per kept step
    d_hat: List[np.ndarray]  # (k, p) per kept step


def _localize(track: DeviceTrack, coords: Mapping[str, np.ndarray], poly: CalibrationPoly,
              algo: Algo, cfg: LocalizerConfig, coord_tangent: Optional[Mapping[str, np.ndarray]] = None,
              coeff_slice: Optional[slice] = None, n_params: int = 0):
    """Shared localization loop. With ``coord_tangent`` given, also returns tangents.

    ``coord_tangent`` maps ap_id -> (2, p) derivative of that AP's position;
    APs absent from it are fixed. ``coeff_slice`` locates the device's
    calibration coefficients inside the parameter vector.
    """
    algo = Algo(algo)
    with_tangents = coord_tangent is not None
    zero_tangent = np.zeros((2, n_params))
    steps, estimates, selected, d_out, s_out = [], [], [], [], []
    tangents = _Tangents([], [], []) if with_tangents else None
    mean = cov = dmean = dcov = None

    for idx, snap in enumerate(track.snapshots):
        pairs = snap.pairs
        for p in pairs:
            if p.ap_id not in coords:
                raise KeyError(f"AP {p.ap_id} not in scene")
        if pairs:
            d_all, jac_all = calibrate_with_jacobian(poly, np.array([p.d_ftm for p in pairs]))
            order = sorted(range(len(pairs)), key=lambda j: (d_all[j], pairs[j].ap_id))[:cfg.k_max]
        else:
            order = []
        ids = tuple(pairs[j].ap_id for j in order)
        d = np.array([d_all[j] for j in order]) if order else np.zeros(0)
        s = np.array([max(pairs[j].s_ftm, cfg.std_floor) for j in order])
        pos = np.array([coords[a] for a in ids], dtype=float).reshape(-1, 2)
        dpos = dd = None
        if with_tangents:
            dpos = np.array([coord_tangent.get(a, zero_tangent) for a in ids]).reshape(-1, 2, n_params)
            dd = np.zeros((len(ids), n_params))
            if order:
                dd[:, coeff_slice] = jac_all[order]

        if algo is Algo.EKF and mean is not None:
            mean, cov, dmean, dcov = _predict(mean, cov, track.dt, cfg.q, dmean, dcov)
            if len(ids):
                mean, cov, dmean, dcov = _update(mean, cov, pos, d, s, dmean, dcov, dpos, dd)
            est, dest = mean[:2], (dmean[:2] if with_tangents else None)
        else:
            weights = 1.0 / s[:-1] ** 2 if algo is Algo.WLS else np.ones(max(len(ids) - 1, 0))
            try:
                est, dest = _lls(pos, d, weights, cfg.cond_limit, dpos, dd)
            except DegenerateGeometry:
                continue
            if algo is Algo.EKF:
                mean = np.array([est[0], est[1], 0.0, 0.0])
                cov = np.diag(np.asarray(cfg.init_cov, dtype=float))
                if with_tangents:
                    dmean = np.zeros((4, n_params))
                    dmean[:2] = dest
                    dcov = np.zeros((4, 4, n_params))

        steps.append(idx)
        estimates.append(Point2(float(est[0]), float(est[1])))
        selected.append(ids)
        d_out.append(tuple(float(v) for v in d))
        s_out.append(tuple(float(v) for v in s))
        if with_tangents:
            tangents.est.append(np.array(dest))
            tangents.ap_pos.append(dpos)
            tangents.d_hat.append(dd)

    if not estimates:
        raise NoFixAvailable(f"no solvable step in track {track.device_id}")
    fixes = FixSeries(track.device_id, track.dt, tuple(steps), tuple(estimates),
                      tuple(selected), tuple(d_out), tuple(s_out))
    return fixes, tangents


def localize_track(track: DeviceTrack, scene: Scene, params: ParamSet, algo=Algo.EKF,
                   cfg: Optional[LocalizerConfig] = None) -> FixSeries:
    """Localize every step of ``track`` using the device's calibration in ``params``."""
    cfg = cfg or LocalizerConfig()
    try:
        poly = params.calib[track.device_id]
    except KeyError:
        raise KeyError(f"no calibration for device {track.device_id}") from None
    coords = {k: v.as_array() for k, v in scene.coords_with(params).items()}
    fixes, _ = _localize(track, coords, poly, algo, cfg)
    return fixes
