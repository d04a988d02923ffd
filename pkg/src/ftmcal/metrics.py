"""Error metrics for AP coordinates, ranging and positioning."""

from __future__ import annotations

import math
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .core import EmptyInput, FixSeries, KeyMismatch, LengthMismatch, Point2


def empirical_cdf(errors) -> list:
    """(error, fraction of samples <= error) at each distinct sorted error."""
    e = np.sort(np.asarray(errors, dtype=float))
    n = len(e)
    out = []
    for i, v in enumerate(e):
        if i + 1 < n and e[i + 1] == v:
            continue
        out.append((float(v), (i + 1) / n))
    return out


def _summary(errors) -> Dict[str, float]:
    e = np.asarray(errors, dtype=float)
    return {
        "mae": float(np.mean(e)),
        "rmse": float(math.sqrt(np.mean(e * e))),
        "max": float(np.max(e)),
    }


def coord_errors(est: Mapping[str, Point2], truth: Mapping[str, Point2]) -> Dict[str, float]:
    if set(est) != set(truth):
        raise KeyMismatch(f"estimated {sorted(set(est) ^ set(truth))} do not match truth")
    if not est:
        raise EmptyInput("no coordinates to compare")
    keys = sorted(est)
    errors = [math.hypot(est[k].x - truth[k].x, est[k].y - truth[k].y) for k in keys]
    return _summary(errors)


def ranging_errors(calibrated: Sequence[Tuple[float, float]]) -> dict:
    """Statistics of |d_hat - d_true| over (d_hat, d_true) pairs."""
    if len(calibrated) == 0:
        raise EmptyInput("no ranging samples")
    arr = np.asarray(calibrated, dtype=float).reshape(-1, 2)
    errors = np.abs(arr[:, 0] - arr[:, 1])
    out = _summary(errors)
    out["cdf"] = empirical_cdf(errors)
    return out


def positioning_errors(fixes, truth: Sequence[Point2]) -> dict:
    """Per-step Euclidean errors; ``fixes`` is a FixSeries or a sequence of points aligned with ``truth``."""
    est = list(fixes.estimates) if isinstance(fixes, FixSeries) else list(fixes)
    if len(est) != len(truth):
        raise LengthMismatch(f"{len(est)} estimates vs {len(truth)} truth points")
    if not est:
        raise EmptyInput("no fixes")
    errors = [math.hypot(a.x - b.x, a.y - b.y) for a, b in zip(est, truth)]
    out = _summary(errors)
    out["cdf"] = empirical_cdf(errors)
    return out


def aligned_truth(fixes: FixSeries, truth: Sequence[Point2]) -> list:
    """Truth points at the steps that produced a fix."""
    return [truth[i] for i in fixes.steps]
