import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftmcal.core import (
    ApKind,
    ApNode,
    CalibrationPoly,
    CostWeights,
    DeviceTrack,
    FixSeries,
    NoFixAvailable,
    ParamSet,
    Point2,
    RangingSnapshot,
    Scene,
)
from ftmcal.costs import (
    combined_cost,
    device_costs,
    geometric_cost,
    position_cost,
    unified_cost,
    velocity_cost,
)
from ftmcal.trilateration import Algo, localize_track

ONE_AP = Scene(10, 10, (ApNode("A", ApKind.ANCHOR, Point2(0, 0)),))
NO_PARAMS = ParamSet({}, {})


def series(points, steps=None, dt=0.5, selected=None, d_hat=None, s_hat=None):
    n = len(points)
    steps = tuple(range(n)) if steps is None else tuple(steps)
    return FixSeries(
        "dev", dt, steps, tuple(Point2(*p) for p in points),
        selected or ((),) * n, d_hat or ((),) * n, s_hat or ((),) * n,
    )


# -- geometric ---------------------------------------------------------------------

def test_geometric_single_residual():
    fx = series([(3, 4)], selected=(("A",),), d_hat=((4.0,),), s_hat=((0.5,),))
    assert geometric_cost(fx, ONE_AP, NO_PARAMS) == pytest.approx(4.0, abs=1e-12)


def test_geometric_doubling_std_quarters_cost():
    fx = series([(3, 4), (1, 1)], selected=(("A",), ("A",)), d_hat=((4.0,), (2.0,)), s_hat=((0.5,), (0.3,)))
    fx2 = series([(3, 4), (1, 1)], selected=(("A",), ("A",)), d_hat=((4.0,), (2.0,)), s_hat=((1.0,), (0.6,)))
    assert geometric_cost(fx2, ONE_AP, NO_PARAMS) == pytest.approx(geometric_cost(fx, ONE_AP, NO_PARAMS) / 4, rel=1e-14)


def test_geometric_perfect_geometry_is_zero(noiseless_office):
    scene, tracks, truth = noiseless_office
    fx = localize_track(tracks[0], scene, truth, Algo.LS)
    assert geometric_cost(fx, scene, truth) < 1e-12


def test_geometric_positive_when_residual(noiseless_office):
    scene, tracks, truth = noiseless_office
    ap = scene.unknown_ids[0]
    p = truth.unknown_coords[ap]
    moved = ParamSet({**truth.unknown_coords, ap: Point2(p.x + 1, p.y)}, truth.calib)
    fx = localize_track(tracks[0], scene, moved, Algo.LS)
    assert geometric_cost(fx, scene, moved) > 1e-3


# -- position / velocity -------------------------------------------------------------

def test_position_examples():
    assert position_cost(series([(2, 2)] * 5)) == 0
    assert position_cost(series([(0, 0), (3, 4)])) == 25
    assert position_cost(series([(0, 0), (1, 0), (2, 0)])) == 2
    assert position_cost(series([(1, 1)])) == 0


def test_velocity_examples():
    assert velocity_cost(series([(0, 0), (1, 0), (1, 0)]), 0.5) == pytest.approx(4.0)
    assert velocity_cost(series([(i, 2 * i) for i in range(6)]), 0.5) == 0
    assert velocity_cost(series([(0, 0), (1, 0)]), 0.5) == 0


def test_velocity_dt_scaling():
    fx = series([(0, 0), (1, 0.5), (1, 2), (4, 1)])
    assert velocity_cost(fx, 1.5) == pytest.approx(velocity_cost(fx, 0.5) / 9, rel=1e-12)


def test_velocity_rejects_bad_dt():
    with pytest.raises(ValueError):
        velocity_cost(series([(0, 0), (1, 0), (1, 0)]), 0.0)


def test_gaps_break_consecutiveness():
    fx = series([(0, 0), (3, 4), (100, 100), (101, 100)], steps=[0, 1, 5, 6])
    assert position_cost(fx) == 25 + 1
    assert velocity_cost(fx, 0.5) == 0
    fx = series([(0, 0), (1, 0), (1, 0), (7, 7)], steps=[0, 1, 2, 4])
    assert velocity_cost(fx, 0.5) == pytest.approx(4.0)


# -- unified / combined ---------------------------------------------------------------

def _real(noiseless_office):
    scene, tracks, truth = noiseless_office
    params = ParamSet({k: Point2(v.x + 0.7, v.y - 0.4) for k, v in truth.unknown_coords.items()},
                      {k: CalibrationPoly((0.3, 0.97, 0.001)) for k in truth.calib})
    return scene, tracks, params


def test_unified_masks(noiseless_office):
    scene, tracks, params = _real(noiseless_office)
    fx = localize_track(tracks[0], scene, params)
    assert unified_cost(fx, scene, params, CostWeights(1, 0, 0)) == geometric_cost(fx, scene, params)
    assert unified_cost(fx, scene, params, CostWeights(0, 0, 0)) == 0


def test_unified_weighted_sum(noiseless_office):
    scene, tracks, params = _real(noiseless_office)
    fx = localize_track(tracks[0], scene, params)
    g, p, v = geometric_cost(fx, scene, params), position_cost(fx), velocity_cost(fx)
    assert unified_cost(fx, scene, params, CostWeights(1, 0.1, 0.1)) == pytest.approx(g + 0.1 * p + 0.1 * v, rel=1e-14)


def test_weighted_arithmetic():
    w = CostWeights(1, 0.1, 0.1)
    assert w.lambda1 * 10 + w.lambda2 * 2 + w.lambda3 * 5 == pytest.approx(10.7)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 100))
@settings(max_examples=30, deadline=None)
def test_unified_linear_in_weights(l1, l2, l3, c):
    fx = series([(3, 4), (3.5, 4), (3.5, 4.6)], selected=(("A",),) * 3,
                d_hat=((4.0,), (5.5,), (6.1,)), s_hat=((0.5,), (0.4,), (1.0,)))
    a = unified_cost(fx, ONE_AP, NO_PARAMS, CostWeights(l1, l2, l3))
    b = unified_cost(fx, ONE_AP, NO_PARAMS, CostWeights(c * l1, c * l2, c * l3))
    assert b == pytest.approx(c * a, rel=1e-12, abs=1e-12)
    assert a >= 0 and np.isfinite(a)


def test_combined_single_device(noiseless_office):
    scene, tracks, params = _real(noiseless_office)
    w = CostWeights()
    fx = localize_track(tracks[0], scene, params)
    assert combined_cost(tracks[:1], scene, params, w) == unified_cost(fx, scene, params, w)


def test_combined_additive_and_order_invariant(noiseless_office):
    scene, tracks, params = _real(noiseless_office)
    w = CostWeights()
    t = tracks[0]
    twin = DeviceTrack("twin", t.dt, t.snapshots, t.truth)
    both = params.with_calib("twin", params.calib[t.device_id])
    single = combined_cost([t], scene, params, w)
    assert combined_cost([t, twin], scene, both, w) == 2 * single
    assert combined_cost(tracks, scene, params, w) == combined_cost(tracks[::-1], scene, params, w)


def test_failing_device_excluded_with_warning(noiseless_office):
    scene, tracks, params = _real(noiseless_office)
    t = tracks[0]
    dead = DeviceTrack("zzz", t.dt, tuple(RangingSnapshot(s.step) for s in t.snapshots))
    p = params.with_calib("zzz", CalibrationPoly.identity())
    with pytest.warns(RuntimeWarning, match="zzz"):
        out = device_costs([t, dead], scene, p, CostWeights())
    assert list(out) == [t.device_id]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(NoFixAvailable):
            combined_cost([dead], scene, p, CostWeights())


@pytest.mark.parametrize("algo", list(Algo))
def test_end_to_end_cost_responds_to_unknown_ap(noiseless_office, algo):
    scene, tracks, params = _real(noiseless_office)
    w = CostWeights()
    base = combined_cost(tracks, scene, params, w, algo)
    for ap in scene.unknown_ids:
        p = params.unknown_coords[ap]
        moved = ParamSet({**params.unknown_coords, ap: Point2(p.x + 1e-3, p.y)}, params.calib)
        assert combined_cost(tracks, scene, moved, w, algo) != base
