"""Gradient-descent training of unknown-AP coordinates and per-device calibration."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._random import substream
from .core import (
    CalibrationPoly,
    CostWeights,
    DeviceTrack,
    NoAnchors,
    NoFixAvailable,
    NonFiniteGradient,
    ParamSet,
    Point2,
    Scene,
    SingularMeasurement,
    TrackTooShort,
)
from .costs import device_costs, unified_cost_and_grad
from .trilateration import Algo, LocalizerConfig, _localize

logger = logging.getLogger(__name__)


class GradMode(str, enum.Enum):
    FINITE_DIFF = "finite_diff"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.01
    iterations: int = 1000
    batch_len: int = 30
    weights: CostWeights = CostWeights(1.0, 0.1, 0.1)
    algo: Algo = Algo.EKF
    k_max: int = 5
    std_floor: float = 0.1
    seed: int = 0
    grad_mode: GradMode = GradMode.FINITE_DIFF
    fd_step: float = 1e-4
    fd_coeff_steps: Tuple[float, ...] = (1e-2, 1e-4, 1e-6)
    eval_every: int = 20
    poly_order: int = 2
    q: float = 1.0
    coeff_scale: float = 80.0
    max_step: Optional[float] = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_len < 3:
            raise ValueError("batch_len must be >= 3")
        if not self.fd_step > 0 or any(h <= 0 for h in self.fd_coeff_steps):
            raise ValueError("finite-difference steps must be positive")
        if len(self.fd_coeff_steps) < self.poly_order + 1:
            raise ValueError("need one finite-difference step per calibration coefficient")
        if not self.coeff_scale > 0:
            raise ValueError("coeff_scale must be positive")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        object.__setattr__(self, "algo", Algo(self.algo))
        object.__setattr__(self, "grad_mode", GradMode(self.grad_mode))

    def localizer(self) -> LocalizerConfig:
        return LocalizerConfig(k_max=self.k_max, std_floor=self.std_floor, q=self.q)


@dataclass(frozen=True)
class ParamGradient:
    """Gradient laid out like a ParamSet."""

    coords: Dict[str, np.ndarray]
    calib: Dict[str, np.ndarray]

    def norm(self) -> float:
        parts = list(self.coords.values()) + list(self.calib.values())
        return float(np.sqrt(sum(float(v @ v) for v in parts))) if parts else 0.0

    def scaled(self, factor: float) -> "ParamGradient":
        return ParamGradient({k: v * factor for k, v in self.coords.items()},
                             {k: v * factor for k, v in self.calib.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.coords[k] for k in sorted(self.coords)]
                              + [self.calib[k] for k in sorted(self.calib)]) \
            if (self.coords or self.calib) else np.zeros(0)


@dataclass
class TrainReport:
    minibatch_costs: List[Dict[str, float]] = field(default_factory=list)
    eval_iterations: List[int] = field(default_factory=list)
    eval_costs: List[float] = field(default_factory=list)
    snapshots: List[dict] = field(default_factory=list)
    best_params: Optional[ParamSet] = None
    best_iteration: int = 0
    best_cost: float = math.inf
    updates: int = 0

    @property
    def best_so_far(self) -> List[float]:
        return list(np.minimum.accumulate(self.eval_costs)) if self.eval_costs else []

    def to_dict(self) -> dict:
        return {
            "updates": self.updates,
            "best_iteration": self.best_iteration,
            "best_cost": self.best_cost,
            "minibatch_costs": self.minibatch_costs,
            "eval": [{"iteration": i, "cost": c} for i, c in zip(self.eval_iterations, self.eval_costs)],
            "snapshots": self.snapshots,
        }


def init_params(scene: Scene, devices: Sequence[str], order: int = 2) -> ParamSet:
    """Unknown APs at the anchor centroid, identity calibration for every device."""
    anchors = list(scene.anchor_coords().values())
    if not anchors:
        raise NoAnchors("scene has no anchor APs")
    cx = float(np.mean([p.x for p in anchors]))
    cy = float(np.mean([p.y for p in anchors]))
    return ParamSet({ap: Point2(cx, cy) for ap in scene.unknown_ids},
                    {dev: CalibrationPoly.identity(order) for dev in devices})


def sample_minibatch(track: DeviceTrack, batch_len: int, rng: np.random.Generator) -> DeviceTrack:
    """Uniformly random contiguous window of exactly ``batch_len`` snapshots."""
    n = len(track)
    if n < batch_len:
        raise TrackTooShort(f"track {track.device_id} has {n} steps, need {batch_len}")
    start = int(rng.integers(0, n - batch_len + 1))
    return track.window(start, batch_len)


# -- gradients ------------------------------------------------------------------

def _device_grad_analytic(track, scene, params, cfg: TrainerConfig):
    """(cost, coord grads (U, 2), coeff grad) for one device via forward-mode tangents."""
    unknown = list(params.unknown_coords)
    n_coord = 2 * len(unknown)
    poly = params.calib[track.device_id]
    n_params = n_coord + len(poly.coeffs)
    coord_tangent = {}
    for j, ap in enumerate(unknown):
        t = np.zeros((2, n_params))
        t[0, 2 * j] = t[1, 2 * j + 1] = 1.0
        coord_tangent[ap] = t
    coords = {k: v.as_array() for k, v in scene.coords_with(params).items()}
    fixes, tangents = _localize(track, coords, poly, cfg.algo, cfg.localizer(), coord_tangent,
                                slice(n_coord, n_params), n_params)
    cost, grad = unified_cost_and_grad(fixes, tangents, coords, cfg.weights)
    return cost, grad[:n_coord].reshape(-1, 2), grad[n_coord:]


def _perturbed(params: ParamSet, ap=None, axis=0, device=None, coeff=0, h=0.0) -> ParamSet:
    if ap is not None:
        p = params.unknown_coords[ap]
        moved = Point2(p.x + h, p.y) if axis == 0 else Point2(p.x, p.y + h)
        return ParamSet({**params.unknown_coords, ap: moved}, params.calib)
    c = list(params.calib[device].coeffs)
    c[coeff] += h
    return params.with_calib(device, CalibrationPoly(tuple(c)))


def _device_grad_fd(track, scene, params, cfg: TrainerConfig):
    def cost(p):
        return device_costs([track], scene, p, cfg.weights, cfg.algo, cfg.localizer())[track.device_id]

    base = cost(params)
    unknown = list(params.unknown_coords)
    coord_grad = np.zeros((len(unknown), 2))
    h = cfg.fd_step
    used = track.ap_ids()
    for j, ap in enumerate(unknown):
        if ap not in used:
            continue  # the AP never enters this device's fixes
        for axis in (0, 1):
            coord_grad[j, axis] = (cost(_perturbed(params, ap=ap, axis=axis, h=h))
                                   - cost(_perturbed(params, ap=ap, axis=axis, h=-h))) / (2 * h)
    ncoef = len(params.calib[track.device_id].coeffs)
    coeff_grad = np.zeros(ncoef)
    for l in range(ncoef):
        hl = cfg.fd_coeff_steps[l]
        coeff_grad[l] = (cost(_perturbed(params, device=track.device_id, coeff=l, h=hl))
                         - cost(_perturbed(params, device=track.device_id, coeff=l, h=-hl))) / (2 * hl)
    return base, coord_grad, coeff_grad


def _device_grad(track, scene, params, cfg):
    if cfg.grad_mode is GradMode.ANALYTIC:
        return _device_grad_analytic(track, scene, params, cfg)
    return _device_grad_fd(track, scene, params, cfg)


def _gradient(tracks, scene, params, cfg, strict=True):
    """Gradient of the combined cost plus the per-device costs that went into it."""
    unknown = list(params.unknown_coords)
    coord_total = np.zeros((len(unknown), 2))
    calib = {dev: np.zeros(len(poly.coeffs)) for dev, poly in params.calib.items()}
    costs = {}
    for track in sorted(tracks, key=lambda t: t.device_id):
        try:
            c, g_coord, g_coeff = _device_grad(track, scene, params, cfg)
        except (NoFixAvailable, SingularMeasurement) as exc:
            if strict:
                raise
            logger.debug("device %s skipped this iteration: %s", track.device_id, exc)
            continue
        if not (np.all(np.isfinite(g_coord)) and np.all(np.isfinite(g_coeff)) and math.isfinite(c)):
            if strict:
                raise NonFiniteGradient(f"non-finite gradient from device {track.device_id}")
            logger.debug("device %s produced a non-finite gradient", track.device_id)
            continue
        costs[track.device_id] = costs.get(track.device_id, 0.0) + c
        coord_total += g_coord
        calib[track.device_id] = calib[track.device_id] + g_coeff
    grad = ParamGradient({ap: coord_total[j] for j, ap in enumerate(unknown)}, calib)
    return grad, costs


def compute_gradient(tracks: Sequence[DeviceTrack], scene: Scene, params: ParamSet,
                     cfg: TrainerConfig) -> ParamGradient:
    """Gradient of the combined cost w.r.t. unknown-AP coordinates and all calibration coefficients."""
    grad, _ = _gradient(tracks, scene, params, cfg, strict=True)
    return grad


def gd_step(params: ParamSet, grad: ParamGradient, alpha: float, coeff_scale: float = 1.0,
            max_step: Optional[float] = None) -> ParamSet:
    """One descent step on every trainable scalar; anchors are not part of ``params``.

    With ``coeff_scale`` = D the calibration curve is stepped in the units
    sum_l theta_l (d / D)**l, i.e. coefficient l moves by alpha * D**(-2 l) * grad.
    ``max_step`` caps the Euclidean length of the whole update in those units
    (meters for coordinates), keeping its direction. D = 1 and no cap is the
    plain update.
    """
    coord_step = {ap: alpha * np.asarray(g, float) for ap, g in grad.coords.items() if ap in params.unknown_coords}
    theta_step = {}
    for dev, g in grad.calib.items():
        if dev in params.calib:
            scale = float(coeff_scale) ** -np.arange(len(g), dtype=float)
            theta_step[dev] = (alpha * np.asarray(g, float) * scale, scale)
    if max_step is not None:
        length = math.sqrt(sum(float(v @ v) for v in coord_step.values())
                           + sum(float(v @ v) for v, _ in theta_step.values()))
        if length > max_step:
            shrink = max_step / length
            coord_step = {k: v * shrink for k, v in coord_step.items()}
            theta_step = {k: (v * shrink, sc) for k, (v, sc) in theta_step.items()}
    coords = {}
    for ap, p in params.unknown_coords.items():
        d = coord_step.get(ap)
        coords[ap] = p if d is None else Point2(p.x - d[0], p.y - d[1])
    calib = {}
    for dev, poly in params.calib.items():
        if dev not in theta_step:
            calib[dev] = poly
            continue
        step, scale = theta_step[dev]
        calib[dev] = CalibrationPoly(tuple(np.asarray(poly.coeffs) - step * scale))
    return ParamSet(coords, calib)


def _snapshot(iteration: int, params: ParamSet) -> dict:
    return {
        "iteration": iteration,
        "unknown_coords": {k: [p.x, p.y] for k, p in params.unknown_coords.items()},
        "calib": {k: list(c.coeffs) for k, c in params.calib.items()},
    }


def full_cost(tracks, scene, params, cfg: TrainerConfig) -> float:
    return float(sum(device_costs(tracks, scene, params, cfg.weights, cfg.algo, cfg.localizer()).values()))


def train(tracks: Sequence[DeviceTrack], scene: Scene, cfg: TrainerConfig,
          init: Optional[ParamSet] = None, progress=None,
          report: Optional[TrainReport] = None) -> Tuple[ParamSet, TrainReport]:
    """Stochastic gradient descent over minibatch windows.

    The returned parameters are those with the lowest full-data cost among
    the periodic evaluations (taken at iteration 0, every ``eval_every``
    iterations and at the end). Pass ``report`` to have it filled in place,
    which keeps partial results if training raises.
    """
    if not scene.anchor_ids:
        raise NoAnchors("scene has no anchor APs")
    if not scene.unknown_ids:
        raise ValueError("scene has no unknown APs to estimate")
    tracks = sorted(tracks, key=lambda t: t.device_id)
    for track in tracks:
        if len(track) < cfg.batch_len:
            raise TrackTooShort(f"track {track.device_id} has {len(track)} steps, need {cfg.batch_len}")
    params = init or init_params(scene, [t.device_id for t in tracks], cfg.poly_order)
    rng = substream(cfg.seed, "minibatch")
    report = TrainReport() if report is None else report

    def evaluate(iteration, p):
        try:
            c = full_cost(tracks, scene, p, cfg)
        except (NoFixAvailable, SingularMeasurement) as exc:
            logger.warning("full-data evaluation failed at iteration %d: %s", iteration, exc)
            c = math.inf
        report.eval_iterations.append(iteration)
        report.eval_costs.append(c)
        report.snapshots.append(_snapshot(iteration, p))
        if c < report.best_cost or report.best_params is None:
            report.best_cost, report.best_iteration, report.best_params = c, iteration, p

    evaluate(0, params)
    for it in range(1, cfg.iterations + 1):
        batch = [sample_minibatch(t, cfg.batch_len, rng) for t in tracks]
        grad, costs = _gradient(batch, scene, params, cfg, strict=False)
        if not costs:
            raise NoFixAvailable(f"no usable device at iteration {it}")
        params = gd_step(params, grad, cfg.learning_rate, cfg.coeff_scale, cfg.max_step)
        report.updates += 1
        report.minibatch_costs.append(costs)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            evaluate(it, params)
        if progress is not None:
            progress(it, costs)
    return report.best_params, report
