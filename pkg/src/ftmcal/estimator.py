"""Scikit-learn style wrapper around training and localization."""

from __future__ import annotations

from typing import List

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calibration import calibrate
from .core import CostWeights, FixSeries
from .costs import combined_cost
from .trainer import TrainerConfig, train
from .trilateration import localize_track
from .validation import check_params_cover, check_scene, check_tracks


class SelfCalibratingLocator(BaseEstimator):
    """Learns unknown-AP coordinates and per-device calibration from unlabeled tracks.

    ``fit`` takes a list of :class:`~ftmcal.core.DeviceTrack`; ``predict``
    returns one ``(n_steps, 2)`` array per track with NaN rows where no fix
    was produced. Fitted state lives in ``params_`` and ``report_``.
    """

    def __init__(self, scene=None, learning_rate=0.01, iterations=1000, batch_len=30,
                 weights=(1.0, 0.1, 0.1), algo="ekf", k_max=5, std_floor=0.1, random_state=0,
                 grad_mode="finite_diff", eval_every=20, coeff_scale=80.0, max_step=0.5):
        self.scene = scene
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_len = batch_len
        self.weights = weights
        self.algo = algo
        self.k_max = k_max
        self.std_floor = std_floor
        self.random_state = random_state
        self.grad_mode = grad_mode
        self.eval_every = eval_every
        self.coeff_scale = coeff_scale
        self.max_step = max_step

    def _config(self) -> TrainerConfig:
        return TrainerConfig(
            learning_rate=self.learning_rate, iterations=self.iterations, batch_len=self.batch_len,
            weights=CostWeights(*self.weights), algo=self.algo, k_max=self.k_max,
            std_floor=self.std_floor, seed=int(self.random_state or 0), grad_mode=self.grad_mode,
            eval_every=self.eval_every, coeff_scale=self.coeff_scale, max_step=self.max_step,
        )

    def fit(self, X, y=None):
        scene = check_scene(self.scene, require_unknown=True)
        cfg = self._config()
        tracks = check_tracks(X, scene, min_len=cfg.batch_len)
        self.params_, self.report_ = train(tracks, scene, cfg)
        self.device_ids_ = sorted(t.device_id for t in tracks)
        self.best_iteration_ = self.report_.best_iteration
        return self

    def localize(self, X) -> List[FixSeries]:
        check_is_fitted(self, "params_")
        cfg = self._config()
        tracks = check_tracks(X, self.scene)
        check_params_cover(self.params_, tracks)
        return [localize_track(t, self.scene, self.params_, cfg.algo, cfg.localizer()) for t in tracks]

    def predict(self, X) -> List[np.ndarray]:
        out = []
        tracks = check_tracks(X, self.scene)
        for track, fixes in zip(tracks, self.localize(tracks)):
            arr = np.full((len(track), 2), np.nan)
            arr[list(fixes.steps)] = fixes.as_array()
            out.append(arr)
        return out

    def calibrate(self, device_id: str, d_ftm):
        """Calibrated distances for raw FTM readings of one fitted device."""
        check_is_fitted(self, "params_")
        return calibrate(self.params_.calib[device_id], np.asarray(d_ftm, dtype=float))

    def score(self, X, y=None) -> float:
        """Negative full-data combined cost (higher is better)."""
        check_is_fitted(self, "params_")
        cfg = self._config()
        tracks = check_tracks(X, self.scene)
        return -combined_cost(tracks, self.scene, self.params_, cfg.weights, cfg.algo, cfg.localizer())
