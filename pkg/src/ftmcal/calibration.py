"""Raw FTM distance -> calibrated distance."""

from __future__ import annotations

import numpy as np

from .core import CalibrationPoly, RangingPair

DEFAULT_STD_FLOOR = 0.1


def _polyval(coeffs, d):
    # Horner, ascending coefficients
    acc = np.zeros_like(d, dtype=float) if isinstance(d, np.ndarray) else 0.0
    for c in reversed(coeffs):
        acc = acc * d + c
    return acc


def calibrate(poly: CalibrationPoly, d_ftm):
    """Evaluate the calibration curve and clamp at zero.

    Works on scalars or numpy arrays.
    """
    value = _polyval(poly.coeffs, d_ftm)
    if isinstance(value, np.ndarray):
        return np.maximum(value, 0.0)
    return max(float(value), 0.0)


def calibrate_with_jacobian(poly: CalibrationPoly, d_ftm: np.ndarray):
    """Calibrated distances and their derivatives w.r.t. each coefficient.

    Returns ``(d_hat, jac)`` with ``jac`` of shape ``(len(d_ftm), L + 1)``.
    Rows where the clamp is active get a zero derivative.
    """
    d_ftm = np.asarray(d_ftm, dtype=float)
    raw = _polyval(poly.coeffs, d_ftm)
    powers = d_ftm[:, None] ** np.arange(len(poly.coeffs))[None, :]
    active = raw > 0.0
    return np.where(active, raw, 0.0), powers * active[:, None]


def offset_calibration(b: float, order: int = 2) -> CalibrationPoly:
    """Pure-offset curve d + b, expressed as a polynomial."""
    return CalibrationPoly((float(b), 1.0) + (0.0,) * (order - 1))


def estimate_std(pair: RangingPair, floor: float = DEFAULT_STD_FLOOR) -> float:
    if not floor > 0:
        raise ValueError("std floor must be positive")
    return max(pair.s_ftm, floor)


def fit_calibration(d_ftm, d_true, order: int = 2) -> CalibrationPoly:
    """Least-squares polynomial mapping raw distances onto true distances."""
    d_ftm = np.asarray(d_ftm, dtype=float)
    d_true = np.asarray(d_true, dtype=float)
    vander = d_ftm[:, None] ** np.arange(order + 1)[None, :]
    coeffs, *_ = np.linalg.lstsq(vander, d_true, rcond=None)
    return CalibrationPoly(tuple(coeffs))
