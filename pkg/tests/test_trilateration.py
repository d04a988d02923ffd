import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftmcal.core import (
    CalibrationPoly,
    DegenerateGeometry,
    DeviceTrack,
    NoFixAvailable,
    ParamSet,
    Point2,
    RangingPair,
    RangingSnapshot,
    SingularMeasurement,
    distance,
)
from ftmcal.trilateration import (
    Algo,
    EkfState,
    ekf_predict,
    ekf_update,
    localize_track,
    select_aps,
    solve_ls,
    solve_wls,
)

IDENT = CalibrationPoly((0.0, 1.0, 0.0))
SQUARE = [Point2(0, 0), Point2(10, 0), Point2(10, 10), Point2(0, 10)]


def ranges(aps, target):
    return [(a, distance(a, target)) for a in aps]


def snap(**d):
    return RangingSnapshot(0, tuple(RangingPair(k, v, 0.5) for k, v in d.items()))


# -- select_aps ------------------------------------------------------------------

def test_select_by_calibrated_distance():
    assert select_aps(snap(A=5, B=2, C=9), IDENT, 2) == ["B", "A"]


def test_select_empty():
    assert select_aps(RangingSnapshot(0), IDENT, 5) == []


def test_select_tie_break_by_id():
    assert select_aps(snap(B=5, A=5), IDENT, 1) == ["A"]


# -- LS / WLS --------------------------------------------------------------------

def test_ls_three_aps():
    target = Point2(3, 4)
    aps = ranges(SQUARE[:2] + [SQUARE[3]], target)
    assert [d for _, d in aps] == pytest.approx([5, math.sqrt(65), math.sqrt(45)])
    est = solve_ls(aps)
    assert distance(est, target) < 1e-9


def test_ls_collinear():
    with pytest.raises(DegenerateGeometry):
        solve_ls([(Point2(0, 0), 1.0), (Point2(1, 0), 1.0), (Point2(2, 0), 1.0)])


def test_ls_square_center():
    est = solve_ls(ranges(SQUARE, Point2(5, 5)))
    assert distance(est, Point2(5, 5)) < 1e-9


def test_wls_uniform_weights_equal_ls():
    aps = ranges(SQUARE[:2] + [SQUARE[3]], Point2(3, 4))
    a = solve_ls(aps)
    b = solve_wls([(p, d, 0.7) for p, d in aps])
    assert abs(a.x - b.x) < 1e-12 and abs(a.y - b.y) < 1e-12


def test_wls_exact_data_weight_invariant():
    aps = ranges(SQUARE, Point2(3, 4))
    est = solve_wls([(p, d, s) for (p, d), s in zip(aps, [0.1, 3.0, 0.5, 1.7])])
    assert distance(est, Point2(3, 4)) < 1e-9


def test_wls_vanishing_weight_drops_row():
    # noisy ranges so the rows disagree; the first AP gets weight 1e-12
    noisy = [(p, d + e) for (p, d), e in zip(ranges(SQUARE, Point2(3, 4)), [0.8, -0.3, 0.2, 0.1])]
    w = solve_wls([(noisy[0][0], noisy[0][1], 1e6)] + [(p, d, 1.0) for p, d in noisy[1:]])
    ref = solve_ls(noisy[1:])
    assert distance(w, ref) < 1e-6


def _random_instance(rng, k):
    while True:
        aps = [Point2(*rng.uniform(0, 50, 2)) for _ in range(k)]
        pts = np.array([[p.x, p.y] for p in aps])
        centered = pts - pts.mean(axis=0)
        if np.linalg.svd(centered, compute_uv=False)[-1] > 2.0:
            w = rng.dirichlet(np.ones(k))
            return aps, Point2.from_array(w @ pts)


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 8))
@settings(max_examples=200, deadline=None)
def test_solvers_recover_noiseless_point(seed, k):
    aps, target = _random_instance(np.random.default_rng(seed), k)
    rs = ranges(aps, target)
    ls = solve_ls(rs)
    wls = solve_wls([(p, d, 1.0) for p, d in rs])
    assert distance(ls, target) < 1e-9
    assert distance(wls, target) < 1e-9
    assert abs(ls.x - wls.x) <= 1e-12 and abs(ls.y - wls.y) <= 1e-12


# -- EKF -------------------------------------------------------------------------

def _state(mean, cov=None):
    return EkfState(np.array(mean, float), np.diag([25.0, 25, 4, 4]) if cov is None else cov)


def test_predict_kinematics():
    out = ekf_predict(_state([0, 0, 1, 0]), 0.5)
    np.testing.assert_allclose(out.mean, [0.5, 0, 1, 0])


def test_predict_noiseless_zero_cov():
    out = ekf_predict(_state([1, 2, 3, 4], np.zeros((4, 4))), 0.5, q=0.0)
    assert np.all(out.cov == 0)


@pytest.mark.parametrize("dt", [0.1, 0.5, 3.0])
def test_predict_zero_velocity_keeps_position(dt):
    out = ekf_predict(_state([2, 3, 0, 0]), dt)
    np.testing.assert_array_equal(out.mean[:2], [2, 3])


def test_update_zero_innovation():
    st_ = _state([3, 4, 0.5, 0])
    out = ekf_update(st_, [(p, d, 0.5) for p, d in ranges(SQUARE, Point2(3, 4))])
    np.testing.assert_allclose(out.mean, st_.mean, atol=1e-12)


def test_update_uninformative():
    st_ = _state([3, 4, 0, 0])
    out = ekf_update(st_, [(p, d + 5, 1e6) for p, d in ranges(SQUARE, Point2(6, 6))])
    np.testing.assert_allclose(out.mean, st_.mean, atol=1e-6)


def test_update_at_ap_is_singular():
    with pytest.raises(SingularMeasurement):
        ekf_update(_state([0, 0, 0, 0]), [(Point2(0, 0), 1.0, 0.5)])


def test_static_target_updates_shrink_error_monotonically():
    target = Point2(3, 4)
    st_ = _state([6, 7, 0, 0])
    errors = []
    for _ in range(50):
        st_ = ekf_update(st_, [(p, d, 0.5) for p, d in ranges(SQUARE, target)])
        errors.append(math.hypot(st_.mean[0] - 3, st_.mean[1] - 4))
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_static_target_filter_converges():
    target = Point2(3, 4)
    st_ = _state([6, 7, 0, 0])
    for _ in range(50):
        st_ = ekf_update(ekf_predict(st_, 0.5, 1.0), [(p, d, 0.5) for p, d in ranges(SQUARE, target)])
    assert math.hypot(st_.mean[0] - 3, st_.mean[1] - 4) < 1e-3


def test_covariance_stays_symmetric_psd(rng):
    st_ = _state([20, 20, 0, 0])
    worst_asym, worst_eig = 0.0, 0.0
    for _ in range(10_000):
        st_ = ekf_predict(st_, rng.uniform(0.05, 2.0), rng.uniform(0, 3))
        k = rng.integers(1, 6)
        aps = [(Point2(*rng.uniform(-30, 70, 2)), rng.uniform(0, 60), rng.uniform(0.05, 5)) for _ in range(k)]
        st_ = ekf_update(st_, aps)
        if not np.all(np.isfinite(st_.mean)) or np.abs(st_.mean[:2]).max() > 1e3:
            st_ = _state([20, 20, 0, 0], st_.cov)
        worst_asym = max(worst_asym, np.abs(st_.cov - st_.cov.T).max())
        worst_eig = min(worst_eig, np.linalg.eigvalsh(st_.cov).min())
    assert worst_asym < 1e-9
    assert worst_eig > -1e-9


# -- localize_track ----------------------------------------------------------------

def test_noiseless_ls_track(noiseless_office):
    scene, tracks, truth = noiseless_office
    fixes = localize_track(tracks[0], scene, truth, Algo.LS)
    assert len(fixes) == len(tracks[0])
    for i, p in zip(fixes.steps, fixes.estimates):
        assert distance(p, tracks[0].truth[i]) < 1e-6


def test_noiseless_wls_track(noiseless_office):
    scene, tracks, truth = noiseless_office
    fixes = localize_track(tracks[1], scene, truth, Algo.WLS)
    assert max(distance(p, tracks[1].truth[i]) for i, p in zip(fixes.steps, fixes.estimates)) < 1e-6


def test_noiseless_ekf_track(noiseless_office):
    scene, tracks, truth = noiseless_office
    fixes = localize_track(tracks[0], scene, truth, Algo.EKF)
    errs = [distance(p, tracks[0].truth[i]) for i, p in zip(fixes.steps, fixes.estimates)]
    assert max(errs[5:]) < 0.1


def test_step_with_two_aps_skipped(noiseless_office):
    scene, tracks, truth = noiseless_office
    t = tracks[0]
    snaps = list(t.snapshots)
    snaps[10] = RangingSnapshot(snaps[10].step, snaps[10].pairs[:2])
    cut = DeviceTrack(t.device_id, t.dt, tuple(snaps), t.truth)
    full = localize_track(t, scene, truth, Algo.LS)
    fixes = localize_track(cut, scene, truth, Algo.LS)
    assert 10 not in fixes.steps
    assert fixes.steps == tuple(i for i in full.steps if i != 10)
    kept = [p for i, p in zip(full.steps, full.estimates) if i != 10]
    assert list(fixes.estimates) == kept


def test_no_fix_available(noiseless_office):
    scene, tracks, truth = noiseless_office
    t = tracks[0]
    thin = DeviceTrack(t.device_id, t.dt, tuple(RangingSnapshot(s.step, s.pairs[:2]) for s in t.snapshots))
    with pytest.raises(NoFixAvailable):
        localize_track(thin, scene, truth, Algo.LS)


@pytest.mark.parametrize("algo", list(Algo))
def test_localize_deterministic(noiseless_office, algo):
    scene, tracks, truth = noiseless_office
    a = localize_track(tracks[0], scene, truth, algo)
    b = localize_track(tracks[0], scene, truth, algo)
    assert repr(a) == repr(b)


@pytest.mark.parametrize("algo", list(Algo))
def test_fixes_are_smooth_in_params(noiseless_office, algo, rng):
    scene, tracks, truth = noiseless_office
    params = ParamSet(
        {k: Point2(v.x + rng.normal(0, 0.5), v.y + rng.normal(0, 0.5)) for k, v in truth.unknown_coords.items()},
        {k: CalibrationPoly((0.1, 0.98, 0.0005)) for k in truth.calib},
    )
    track = tracks[0].window(0, 20)
    base = localize_track(track, scene, params, algo)
    h = 1e-5
    ap = sorted(params.unknown_coords)[0]
    for shift in ("x", "c1"):
        def moved(sign):
            if shift == "x":
                p = params.unknown_coords[ap]
                return ParamSet({**params.unknown_coords, ap: Point2(p.x + sign * h, p.y)}, params.calib)
            c = list(params.calib[track.device_id].coeffs)
            c[1] += sign * h
            return params.with_calib(track.device_id, CalibrationPoly(c))
        plus = localize_track(track, scene, moved(1), algo).as_array()
        minus = localize_track(track, scene, moved(-1), algo).as_array()
        jac = (plus - minus) / (2 * h)
        assert plus.shape == base.as_array().shape
        assert np.all(np.isfinite(jac))
