"""Command-line entry point: ``cliff-lhmp <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataio, serialization
from .errors import (
    CliffError,
    EmptyMapError,
    EmptyReportError,
    InsufficientDataError,
    InvalidArgumentError,
    MalformedTrajectoryError,
    NumericalDegenerateError,
    ParseError,
)
from .evaluation import AGGREGATIONS, METHODS, SWEEP_AXES, EvalConfig, evaluate_method, parameter_sweep
from .mapping import EmConfig, GridSpec, build_map_with_summary, compare_maps_kl
from .predictor import (
    DEFAULT_BETA,
    DEFAULT_DELTA_T,
    DEFAULT_OBSERVATION_DT,
    DEFAULT_OBSERVATION_STEPS,
    DEFAULT_SAMPLING_RADIUS,
    PredictionConfig,
    current_state,
    predict_ensemble,
)
from .serialization import PredictionRecord
from .synthetic import SCENARIOS, generate_synthetic, make_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PAPER = "(paper default)"

log = logging.getLogger("cliff_lhmp")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _horizons(text: str) -> tuple[float, ...]:
    # "1:50" expands to 1, 2, ..., 50 seconds
    if ":" in text:
        a, b = text.split(":", 1)
        try:
            lo, hi = int(a), int(b)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad horizon range {text!r}") from None
        return tuple(float(h) for h in range(lo, hi + 1))
    return tuple(_float_list(text))


# ------------------------------------------------------------------ flag groups


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="worker processes; results do not depend on this")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _add_input(p: argparse.ArgumentParser, nargs="+") -> None:
    p.add_argument("trajectories", nargs=nargs, help="trajectory files (canonical t_s,person_id,x_m,y_m)")
    p.add_argument("--atc", action="store_true", help="inputs are raw ATC files (ms, mm); downsample and filter them")
    p.add_argument("--target-hz", type=float, default=dataio.TARGET_HZ, help=f"resampling rate for --atc {PAPER}")
    p.add_argument("--min-duration", type=float, default=0.0,
                   help="drop trajectories shorter than this many seconds (the paper uses 60 for ATC)")
    p.add_argument("--max-gap", type=float, default=None, help="split tracks at gaps longer than this; unset means 2 / target-hz")
    p.add_argument("--tolerance", type=float, default=0.01, help="tolerated fraction of malformed ATC rows")


def _add_prediction(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("prediction")
    g.add_argument("--beta", type=float, default=DEFAULT_BETA, help=f"orientation kernel width {PAPER}")
    g.add_argument("--rs", type=float, default=DEFAULT_SAMPLING_RADIUS, help=f"sampling radius in m {PAPER}")
    g.add_argument("--dt", type=float, default=DEFAULT_DELTA_T, help=f"prediction time step in s {PAPER}")
    g.add_argument("--os", type=float, default=None,
                   help="observation horizon in s for the velocity estimate; unset uses every observed position, "
                        f"{DEFAULT_OBSERVATION_STEPS} x {DEFAULT_OBSERVATION_DT:g} s {PAPER}")
    g.add_argument("--horizon", type=float, default=50.0, help=f"prediction horizon in s {PAPER}")
    g.add_argument("--k", type=int, default=10, help="samples per ensemble")
    g.add_argument("--sigma-obs", type=float, default=1.0, help="width of the observation weighting")
    g.add_argument("--observation-steps", type=int, default=DEFAULT_OBSERVATION_STEPS,
                   help=f"observed positions per trajectory {PAPER}")
    g.add_argument("--observation-dt", type=float, default=DEFAULT_OBSERVATION_DT,
                   help=f"spacing of observed positions in s {PAPER}")


def _add_eval(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--horizons", type=_horizons, default=tuple(float(h) for h in range(1, 51)),
                   help="evaluated horizons in s, comma list or lo:hi; unset means 1:50")
    g.add_argument("--aggregation", choices=AGGREGATIONS, default="mean_k",
                   help="headline ensemble aggregation; both are always computed")
    g.add_argument("--table", default=None, help="also write a CSV table here")


def _pred_cfg(a) -> PredictionConfig:
    return PredictionConfig(
        delta_t=a.dt, horizon_s=a.horizon, beta=a.beta, sampling_radius=a.rs,
        sigma_obs=a.sigma_obs, k=a.k, seed=a.seed, observation_s=a.os,
    )


def _eval_cfg(a) -> EvalConfig:
    return EvalConfig(
        horizons_s=a.horizons, aggregation=a.aggregation,
        observation_steps=a.observation_steps, observation_dt=a.observation_dt,
    )


def _load_trajectories(a) -> list:
    out = []
    for path in a.trajectories:
        if a.atc:
            res = dataio.parse_atc(path, a.tolerance)
            if res.skipped_rows:
                log.warning("%s: skipped %d malformed rows", path, res.skipped_rows)
            out.extend(dataio.preprocess(res.trajectories, a.target_hz, a.min_duration, a.max_gap))
        else:
            trajs = dataio.read_trajectories(path)
            if a.min_duration > 0:
                trajs = dataio.segment_and_filter(trajs, a.min_duration, a.max_gap)
            out.extend(trajs)
    return out


def _grid(a, trajs) -> GridSpec:
    if a.width is not None or a.height is not None or a.origin_x is not None or a.origin_y is not None:
        missing = [n for n in ("origin_x", "origin_y", "width", "height") if getattr(a, n) is None]
        if missing:
            raise InvalidArgumentError("an explicit grid needs --origin-x, --origin-y, --width and --height")
        return GridSpec(a.origin_x, a.origin_y, a.resolution, a.width, a.height)
    if not trajs:
        raise EmptyMapError("empty-map: no trajectories in input")
    xs = np.concatenate([t.x for t in trajs])
    ys = np.concatenate([t.y for t in trajs])
    return GridSpec.covering(xs, ys, a.resolution, a.margin)


def _out(dest):
    return sys.stdout if dest in (None, "-") else dest


# ------------------------------------------------------------------ commands


def cmd_build_map(a) -> int:
    trajs = _load_trajectories(a)
    grid = _grid(a, trajs)
    cfg = EmConfig(
        max_components=a.max_components, max_iterations=a.max_iterations,
        log_likelihood_tolerance=a.em_tolerance, covariance_floor=a.covariance_floor,
        seed=a.seed, min_observations_per_cell=a.min_observations, windings=a.windings,
    )
    cliff_map, summary = build_map_with_summary(trajs, grid, cfg, a.workers)
    serialization.write_map(cliff_map, a.out)
    doc = {"map": a.out, "trajectories": len(trajs), **summary.to_dict()}
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_predict(a) -> int:
    cliff_map = serialization.read_map(a.map)
    trajs = _load_trajectories(a)
    cfg = _pred_cfg(a)
    records, skipped, truncated = [], 0, 0
    for i, tr in enumerate(trajs):
        split = dataio.make_observation_splits(tr, a.observation_steps, a.observation_dt)
        if split is None:
            skipped += 1
            continue
        start = current_state(split.history, cfg.sigma_obs, cfg.observation_s)
        for j, pred in enumerate(predict_ensemble(cliff_map, start, cfg, key=(i,))):
            truncated += pred.truncated
            records.append(PredictionRecord(tr.person_id, j, start, pred, split.t0, cfg.delta_t))
    serialization.write_predictions(records, a.out)
    print(f"predicted {len(records)} samples for {len(trajs) - skipped} trajectories "
          f"({skipped} skipped as too short); {truncated} samples truncated")
    return EXIT_OK


def _methods(a) -> list[str]:
    return list(METHODS) if a.method == "both" else [a.method]


def cmd_evaluate(a) -> int:
    methods = _methods(a)
    cliff_map = serialization.read_map(a.map) if a.map else None
    if cliff_map is None and "cliff_lhmp" in methods:
        raise InvalidArgumentError("--map is required to evaluate cliff_lhmp")
    trajs = _load_trajectories(a)
    pcfg, ecfg = _pred_cfg(a), _eval_cfg(a)
    reports = [evaluate_method(cliff_map, trajs, m, pcfg, ecfg, a.workers) for m in methods]
    serialization.write_reports(reports, _out(a.out))
    if a.table:
        serialization.write_table(reports, a.table)
    return EXIT_OK


def cmd_sweep(a) -> int:
    cliff_map = serialization.read_map(a.map)
    trajs = _load_trajectories(a)
    reports = parameter_sweep(cliff_map, trajs, _pred_cfg(a), a.axis, a.values, _eval_cfg(a), "cliff_lhmp", a.workers)
    serialization.write_reports(reports, _out(a.out))
    if a.table:
        serialization.write_table(reports, a.table)
    return EXIT_OK


def cmd_compare_maps(a) -> int:
    ma, mb = serialization.read_map(a.map_a), serialization.read_map(a.map_b)
    heat = compare_maps_kl(ma, mb, a.samples, a.seed)
    meta = {"map_a": a.map_a, "map_b": a.map_b, "n_samples": a.samples, "seed": a.seed}
    serialization.write_heatmap(heat, _out(a.out), meta)
    if a.table:
        serialization.write_heatmap_table(heat, a.table)
    if a.out not in (None, "-"):
        print(f"{int(heat.defined.sum())} cells compared, mean KL {heat.mean():.6g} nats")
    return EXIT_OK


def cmd_gen_synthetic(a) -> int:
    sc = make_scenario(a.scenario, heading_noise=a.noise, speed=a.speed)
    trajs = generate_synthetic(sc, a.n, np.random.default_rng(a.seed))
    dataio.write_trajectories(trajs, _out(a.out))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cliff-lhmp", description=__doc__, formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-map", help="fit a flow map from trajectories", formatter_class=_Formatter)
    _add_input(p)
    p.add_argument("-o", "--out", required=True, help="map JSON to write")
    g = p.add_argument_group("grid")
    g.add_argument("--resolution", type=float, default=1.0, help=f"cell size in m {PAPER}")
    g.add_argument("--origin-x", type=float, default=None, help="grid origin; default covers the data")
    g.add_argument("--origin-y", type=float, default=None)
    g.add_argument("--width", type=int, default=None, help="cells along x")
    g.add_argument("--height", type=int, default=None, help="cells along y")
    g.add_argument("--margin", type=float, default=0.0, help="padding around the data when sizing the grid")
    g = p.add_argument_group("EM")
    g.add_argument("--max-components", type=int, default=5, help="largest K tried by BIC")
    g.add_argument("--max-iterations", type=int, default=100)
    g.add_argument("--em-tolerance", type=float, default=1e-6, help="relative log-likelihood change for convergence")
    g.add_argument("--covariance-floor", type=float, default=1e-4, help="minimum covariance eigenvalue")
    g.add_argument("--min-observations", type=int, default=10, help="observations needed to fit a cell")
    g.add_argument("--windings", type=int, default=1, help="winding numbers summed on each side of zero")
    _add_common(p)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("predict", help="sample trajectory ensembles", formatter_class=_Formatter)
    p.add_argument("--map", required=True, help="map JSON")
    _add_input(p)
    p.add_argument("-o", "--out", required=True, help="prediction CSV to write")
    _add_prediction(p)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="ADE/FDE per horizon", formatter_class=_Formatter)
    p.add_argument("--map", default=None, help="map JSON (not needed for cvm)")
    _add_input(p)
    p.add_argument("--method", choices=(*METHODS, "both"), default="both")
    p.add_argument("-o", "--out", default="-", help="report JSON ('-' for stdout)")
    _add_prediction(p)
    _add_eval(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate over one parameter axis", formatter_class=_Formatter)
    p.add_argument("--map", required=True, help="map JSON")
    _add_input(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES), help="parameter to vary")
    p.add_argument("--values", required=True, type=_float_list, help="comma-separated values")
    p.add_argument("-o", "--out", default="-", help="report JSON ('-' for stdout)")
    _add_prediction(p)
    _add_eval(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-maps", help="per-cell KL divergence between two maps", formatter_class=_Formatter)
    p.add_argument("map_a")
    p.add_argument("map_b")
    p.add_argument("--samples", type=int, default=10_000, help="Monte Carlo samples per cell")
    p.add_argument("-o", "--out", default="-", help="heatmap JSON ('-' for stdout)")
    p.add_argument("--table", default=None, help="also write a CSV table here")
    _add_common(p)
    p.set_defaults(func=cmd_compare_maps)

    p = sub.add_parser("gen-synthetic", help="simulate a synthetic flow scenario", formatter_class=_Formatter)
    p.add_argument("scenario", choices=sorted(SCENARIOS))
    p.add_argument("-n", type=int, default=100, help="number of trajectories")
    p.add_argument("--noise", type=float, default=None, help="heading noise std in rad (scenario default 0.1)")
    p.add_argument("--speed", type=float, default=None, help="walking speed in m/s (scenario default)")
    p.add_argument("-o", "--out", default="-", help="canonical trajectory file ('-' for stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericalDegenerateError):
        return EXIT_NUMERIC
    if isinstance(exc, (ParseError, MalformedTrajectoryError, EmptyMapError, EmptyReportError,
                        InsufficientDataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, InvalidArgumentError):
        return EXIT_USAGE
    if isinstance(exc, (FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (CliffError, OSError, ArithmeticError) as exc:
        print(f"cliff-lhmp {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
