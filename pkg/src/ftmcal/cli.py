"""Command line entry point: ``ftmcal simulate | train | locate | eval``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io, metrics
from .calibration import calibrate
from .core import CostWeights, DeviceTrack, FtmCalError, LengthMismatch
from .simulator import DEFAULT_DT, WALK_SPEED, DistortionModel, simulate_dataset, true_distances
from .trainer import TrainerConfig, TrainReport, train
from .trilateration import Algo, LocalizerConfig, localize_track
from .validation import check_params_cover, check_scene

log = logging.getLogger("ftmcal")

EXIT_RUNTIME = 1
EXIT_INPUT = 2


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception, code: int):
        super().__init__(f"{stage}: {exc}")
        self.code = code


def _load(stage, fn, *args):
    try:
        return fn(*args)
    except (OSError, FtmCalError, ValueError, KeyError) as exc:
        raise StageError(stage, exc, EXIT_INPUT) from exc


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> None:
    scene = _load("load scene", io.load_scene, args.scene)
    try:
        model = DistortionModel(tuple(args.distortion), args.noise, args.burst, args.range_limit)
        tracks, truth = simulate_dataset(scene, model, args.devices, args.steps, args.dt, args.speed,
                                         seed=args.seed, tag="train")
        tests = []
        if args.test_steps:
            tests, _ = simulate_dataset(scene, model, args.devices, args.test_steps, args.dt, args.speed,
                                        seed=args.seed, tag="test")
    except (ValueError, FtmCalError) as exc:
        raise StageError("simulate", exc, EXIT_INPUT) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_ranging_log(tracks, out / "train.log")
    io.save_series(_truth_rows(tracks), out / "train_truth.csv")
    io.save_params(truth, out / "truth.params")
    if tests:
        io.save_ranging_log(tests, out / "test.log")
        io.save_series(_truth_rows(tests), out / "test_truth.csv")
    log.info("wrote %d device logs to %s", len(tracks), out)


def _truth_rows(tracks):
    for t in tracks:
        for i, p in enumerate(t.truth):
            yield t.device_id, i, p.x, p.y


# -- train ------------------------------------------------------------------------

def cmd_train(args) -> None:
    scene = _load("load scene", io.load_scene, args.scene)
    tracks = []
    for path in args.logs:
        tracks.extend(_load("load log", io.load_ranging_log, path))
    try:
        check_scene(scene, require_unknown=True)
        cfg = TrainerConfig(
            learning_rate=args.alpha, iterations=args.iters, batch_len=args.batch_len,
            weights=CostWeights(*args.lambdas), algo=Algo(args.algo), k_max=args.k_max,
            std_floor=args.std_floor, seed=args.seed, eval_every=args.eval_every,
            grad_mode=args.grad_mode, coeff_scale=args.coeff_scale,
            max_step=args.max_step if args.max_step > 0 else None,
        )
    except (ValueError, FtmCalError) as exc:
        raise StageError("configure", exc, EXIT_INPUT) from exc
    report_path = args.report or str(args.out) + ".report.json"
    report = TrainReport()

    def progress(it, costs):
        if it % max(cfg.eval_every, 1) == 0:
            log.info("iteration %d minibatch cost %.6g", it, sum(costs.values()))

    try:
        best, report = train(tracks, scene, cfg, progress=progress, report=report)
    except (FtmCalError, ValueError) as exc:
        io.save_json(report.to_dict(), report_path)
        raise StageError("train", exc, EXIT_RUNTIME) from exc
    io.save_params(best, args.out)
    io.save_json(report.to_dict(), report_path)


# -- locate -----------------------------------------------------------------------

def cmd_locate(args) -> None:
    scene = _load("load scene", io.load_scene, args.scene)
    params = _load("load params", io.load_params, args.params)
    tracks = _load("load log", io.load_ranging_log, args.log)
    try:
        check_params_cover(params, tracks)
    except KeyError as exc:
        raise StageError("locate", exc, EXIT_INPUT) from exc
    cfg = LocalizerConfig(k_max=args.k_max, std_floor=args.std_floor)
    rows = []
    try:
        for t in sorted(tracks, key=lambda t: t.device_id):
            rows.extend(io.fixes_rows(localize_track(t, scene, params, Algo(args.algo), cfg)))
    except (FtmCalError, ValueError, KeyError) as exc:
        raise StageError("locate", exc, EXIT_RUNTIME) from exc
    io.save_series(rows, args.out)


# -- eval -------------------------------------------------------------------------

def _eval_ap_coords(args):
    truth = _load("load truth params", io.load_params, args.truth_params)
    est = _load("load params", io.load_params, args.params)
    return metrics.coord_errors(est.unknown_coords, truth.unknown_coords)


def _eval_ranging(args):
    scene = _load("load scene", io.load_scene, args.scene)
    tracks = _load("load log", io.load_ranging_log, args.log)
    traj = _load("load truth trajectory", io.load_series, args.truth)
    params = _load("load params", io.load_params, args.params) if args.params else None
    pairs = []
    for t in sorted(tracks, key=lambda t: t.device_id):
        pts = traj.get(t.device_id, {})
        if len(pts) != len(t):
            raise LengthMismatch(f"device {t.device_id}: {len(pts)} truth points for {len(t)} steps")
        t = DeviceTrack(t.device_id, t.dt, t.snapshots, tuple(pts[i] for i in range(len(t))))
        d_ftm, d_true = true_distances(t, scene)
        d_hat = calibrate(params.calib[t.device_id], d_ftm) if params else d_ftm
        pairs.extend(zip(d_hat, d_true))
    return metrics.ranging_errors(pairs)


def _eval_positioning(args):
    traj = _load("load truth trajectory", io.load_series, args.truth)
    fixes = _load("load fixes", io.load_series, args.fixes)
    est, ref = [], []
    for dev in sorted(fixes):
        if dev not in traj:
            raise LengthMismatch(f"no truth trajectory for device {dev}")
        for step in sorted(fixes[dev]):
            if step not in traj[dev]:
                raise LengthMismatch(f"device {dev}: no truth for step {step}")
            est.append(fixes[dev][step])
            ref.append(traj[dev][step])
    return metrics.positioning_errors(est, ref)


def cmd_eval(args) -> None:
    handlers = {"ap-coords": _eval_ap_coords, "ranging": _eval_ranging, "positioning": _eval_positioning}
    try:
        result = handlers[args.which](args)
    except (FtmCalError, KeyError, ValueError) as exc:
        raise StageError(f"eval {args.which}", exc, EXIT_RUNTIME) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cdf = result.pop("cdf", None)
    io.save_json(result, out / f"{args.which}.json")
    if cdf is not None:
        io.save_cdf(cdf, out / f"{args.which}_cdf.csv")
    print(" ".join(f"{k}={v:.6g}" for k, v in sorted(result.items())))


# -- wiring -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftmcal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic ranging logs with ground truth")
    p.add_argument("scene")
    p.add_argument("out_dir")
    p.add_argument("--devices", type=int, default=3)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--test-steps", type=int, default=480, help="held-out walk length (0 to skip)")
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--speed", type=float, default=WALK_SPEED)
    p.add_argument("--burst", type=int, default=8)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--distortion", type=float, nargs="+", default=[3.0, 1.08, 0.003],
                   metavar="E", help="forward distortion coefficients e0 e1 [e2 ...]")
    p.add_argument("--range-limit", type=float, default=40.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="estimate unknown-AP coordinates and calibration")
    p.add_argument("scene")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True, help="output parameter file")
    p.add_argument("--report", help="run report JSON (default: <out>.report.json)")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch-len", type=int, default=30)
    p.add_argument("--lambdas", type=float, nargs=3, default=[1.0, 0.1, 0.1])
    p.add_argument("--algo", choices=[a.value for a in Algo], default="ekf")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--std-floor", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=20)
    p.add_argument("--grad-mode", choices=["finite_diff", "analytic"], default="finite_diff")
    p.add_argument("--coeff-scale", type=float, default=80.0)
    p.add_argument("--max-step", type=float, default=0.5, help="update length cap (0 disables)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("locate", help="localize every step of a ranging log")
    p.add_argument("scene")
    p.add_argument("params")
    p.add_argument("log")
    p.add_argument("--out", required=True)
    p.add_argument("--algo", choices=[a.value for a in Algo], default="ekf")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--std-floor", type=float, default=0.1)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("eval", help="metric tables and CDF series")
    p.add_argument("--which", choices=["ap-coords", "ranging", "positioning"], required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--truth-params")
    p.add_argument("--params")
    p.add_argument("--scene")
    p.add_argument("--log")
    p.add_argument("--truth", help="truth trajectory CSV")
    p.add_argument("--fixes")
    p.set_defaults(func=cmd_eval)
    return parser


_REQUIRED = {
    "ap-coords": ("truth_params", "params"),
    "ranging": ("scene", "log", "truth"),
    "positioning": ("truth", "fixes"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "eval":
        missing = [f"--{n.replace('_', '-')}" for n in _REQUIRED[args.which] if getattr(args, n) is None]
        if missing:
            parser.error(f"eval --which {args.which} needs {' '.join(missing)}")
    try:
        args.func(args)
    except StageError as exc:
        print(f"ftmcal {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
