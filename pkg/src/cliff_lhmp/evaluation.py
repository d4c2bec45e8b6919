"""ADE/FDE scoring, ensemble aggregation, success ratio and parameter sweeps."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import ground_truth_on_grid, make_observation_splits
from .errors import EmptyReportError, InvalidArgumentError
from .mapping import CliffMap
from .predictor import (
    DEFAULT_OBSERVATION_DT,
    DEFAULT_OBSERVATION_STEPS,
    PredictedTrajectory,
    PredictionConfig,
    current_state,
    cvm_predict,
    predict_ensemble,
    steps_for,
)
from .trajectory import Trajectory

AGGREGATIONS = ("mean_k", "best_k")
METHODS = ("cliff_lhmp", "cvm")
SWEEP_AXES = {
    "beta": "beta",
    "r_s": "sampling_radius",
    "rs": "sampling_radius",
    "O_s": "observation_s",
    "os": "observation_s",
    "delta_t": "delta_t",
    "dt": "delta_t",
}


@dataclass(frozen=True)
class EvalConfig:
    horizons_s: tuple[float, ...] = tuple(float(h) for h in range(1, 51))
    aggregation: str = "mean_k"
    # ensemble size and seed overrides; None keeps the prediction config's values
    k: int | None = None
    min_gt_duration_s: float = 0.0
    seed: int | None = None
    observation_steps: int = DEFAULT_OBSERVATION_STEPS
    observation_dt: float = DEFAULT_OBSERVATION_DT

    def __post_init__(self):
        h = tuple(float(v) for v in self.horizons_s)
        if not h or any(v <= 0 for v in h) or any(b <= a for a, b in zip(h, h[1:])):
            raise InvalidArgumentError("horizons must be positive and strictly ascending")
        object.__setattr__(self, "horizons_s", h)
        if self.aggregation not in AGGREGATIONS:
            raise InvalidArgumentError(f"aggregation must be one of {AGGREGATIONS}")
        if self.k is not None and self.k < 1:
            raise InvalidArgumentError("k must be >= 1")


# ------------------------------------------------------------------- metrics


def _positions(pred) -> np.ndarray:
    if isinstance(pred, PredictedTrajectory):
        return pred.xy
    return np.asarray(pred, dtype=float).reshape(-1, 2)


def displacement_errors(pred, gt, horizon_s: float, delta_t: float = 1.0) -> np.ndarray:
    """Per-step Euclidean errors over the steps both trajectories cover up to the horizon.

    ``gt`` holds positions on the prediction grid (row i is step i + 1).
    Truncated predictions are scored only up to their last predicted point.
    """
    p = _positions(pred)
    g = np.asarray(gt, dtype=float).reshape(-1, 2)
    n = min(steps_for(horizon_s, delta_t), len(p), len(g))
    return np.hypot(p[:n, 0] - g[:n, 0], p[:n, 1] - g[:n, 1])


def ade(pred, gt, horizon_s: float, delta_t: float = 1.0) -> float:
    """Average displacement error; NaN when no step overlaps."""
    err = displacement_errors(pred, gt, horizon_s, delta_t)
    return float(err.mean()) if err.size else math.nan


def fde(pred, gt, horizon_s: float, delta_t: float = 1.0) -> float:
    """Error at the last scored step; NaN when no step overlaps."""
    err = displacement_errors(pred, gt, horizon_s, delta_t)
    return float(err[-1]) if err.size else math.nan


def aggregate_ensemble(scores: Sequence[float], aggregation: str) -> float:
    """best_k takes the minimum, mean_k the mean; undefined (NaN) scores are ignored."""
    if aggregation not in AGGREGATIONS:
        raise InvalidArgumentError(f"aggregation must be one of {AGGREGATIONS}")
    arr = np.asarray(scores, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return math.nan
    return float(arr.min()) if aggregation == "best_k" else float(arr.mean())


def reaches_horizon(pred: PredictedTrajectory, horizon_s: float, delta_t: float) -> bool:
    return len(pred) >= steps_for(horizon_s, delta_t)


def success_ratio(ensembles: Sequence[Sequence[PredictedTrajectory]], horizon_s: float, delta_t: float = 1.0) -> float:
    """Fraction of trajectories with at least one sample reaching the full horizon."""
    if len(ensembles) == 0:
        raise InvalidArgumentError("success ratio of an empty dataset is undefined")
    hits = sum(1 for ens in ensembles if any(reaches_horizon(p, horizon_s, delta_t) for p in ens))
    return hits / len(ensembles)


# -------------------------------------------------------------------- report


@dataclass
class HorizonRecord:
    horizon_s: float
    ade_mean: float
    ade_std: float
    fde_mean: float
    fde_std: float
    n_trajectories: int
    success_ratio: float
    n_undefined: int = 0


@dataclass
class EvalReport:
    method: str
    aggregation: str
    tables: dict[str, list[HorizonRecord]]
    n_evaluated: int = 0
    n_skipped: int = 0
    axis: str | None = None
    axis_value: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def records(self) -> list[HorizonRecord]:
        return self.tables[self.aggregation]

    def at(self, horizon_s: float, aggregation: str | None = None) -> HorizonRecord:
        for rec in self.tables[aggregation or self.aggregation]:
            if math.isclose(rec.horizon_s, horizon_s):
                return rec
        raise KeyError(horizon_s)

    def rows(self) -> list[dict]:
        """Flat table rows, one per (aggregation, horizon)."""
        out = []
        for agg in AGGREGATIONS:
            for r in self.tables.get(agg, []):
                out.append(
                    {
                        "method": self.method,
                        "aggregation": agg,
                        "axis": self.axis or "",
                        "axis_value": "" if self.axis_value is None else self.axis_value,
                        "horizon_s": r.horizon_s,
                        "ade_mean": r.ade_mean,
                        "ade_std": r.ade_std,
                        "fde_mean": r.fde_mean,
                        "fde_std": r.fde_std,
                        "n": r.n_trajectories,
                        "success_ratio": r.success_ratio,
                    }
                )
        return out


def _mean_std(values: list[float]) -> tuple[float, float, int, int]:
    arr = np.asarray(values, dtype=float)
    ok = arr[~np.isnan(arr)]
    if ok.size == 0:
        return math.nan, math.nan, 0, int(arr.size)
    return float(ok.mean()), float(ok.std()), int(ok.size), int(arr.size - ok.size)


# ---------------------------------------------------------------- evaluation


@dataclass
class _TrajectoryScore:
    ade: dict[str, list[float]]  # aggregation -> per-horizon value
    fde: dict[str, list[float]]
    success: list[bool]


def _score_one(cliff_map, traj: Trajectory, index: int, method: str, cfg: PredictionConfig, ecfg: EvalConfig):
    split = make_observation_splits(traj, ecfg.observation_steps, ecfg.observation_dt)
    if split is None:
        return None
    start = current_state(split.history, cfg.sigma_obs, cfg.observation_s)
    gt = ground_truth_on_grid(split, cfg.delta_t, cfg.n_steps)
    if method == "cvm":
        ensemble = [cvm_predict(start, cfg)]
    else:
        ensemble = predict_ensemble(cliff_map, start, cfg, key=(index,))
    score = _TrajectoryScore({a: [] for a in AGGREGATIONS}, {a: [] for a in AGGREGATIONS}, [])
    for h in ecfg.horizons_s:
        a_s = [ade(p, gt, h, cfg.delta_t) for p in ensemble]
        f_s = [fde(p, gt, h, cfg.delta_t) for p in ensemble]
        for agg in AGGREGATIONS:
            score.ade[agg].append(aggregate_ensemble(a_s, agg))
            score.fde[agg].append(aggregate_ensemble(f_s, agg))
        score.success.append(any(reaches_horizon(p, h, cfg.delta_t) for p in ensemble))
    return score


_WORKER_STATE: dict = {}


def _init_worker(cliff_map, method, cfg, ecfg):
    _WORKER_STATE.update(cliff_map=cliff_map, method=method, cfg=cfg, ecfg=ecfg)


def _worker_task(job):
    index, traj = job
    s = _WORKER_STATE
    return _score_one(s["cliff_map"], traj, index, s["method"], s["cfg"], s["ecfg"])


def evaluate_method(
    cliff_map: CliffMap | None,
    dataset: Sequence[Trajectory],
    method: str,
    pred_cfg: PredictionConfig = PredictionConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> EvalReport:
    """Score one predictor over a dataset at every horizon in ``eval_cfg``.

    Each trajectory is split into its observation window and ground truth,
    predicted once out to the largest horizon, and scored on prefixes.
    Trajectory ``i`` of the filtered dataset uses random streams keyed by
    (seed, i, sample), so results do not depend on ``workers``.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"method must be one of {METHODS}")
    if method == "cliff_lhmp" and cliff_map is None:
        raise InvalidArgumentError("cliff_lhmp needs a map")
    overrides = {"horizon_s": max(max(eval_cfg.horizons_s), pred_cfg.delta_t)}
    if eval_cfg.k is not None:
        overrides["k"] = eval_cfg.k
    if eval_cfg.seed is not None:
        overrides["seed"] = eval_cfg.seed
    cfg = dataclasses.replace(pred_cfg, **overrides)
    data = [t for t in dataset if t.duration + 1e-9 >= eval_cfg.min_gt_duration_s]
    if not data:
        raise EmptyReportError("empty-report: no trajectories left after duration filtering")
    jobs = list(enumerate(data))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cliff_map, method, cfg, eval_cfg)) as pool:
            scores = list(pool.map(_worker_task, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        scores = [_score_one(cliff_map, t, i, method, cfg, eval_cfg) for i, t in jobs]
    kept = [s for s in scores if s is not None]
    if not kept:
        raise EmptyReportError("empty-report: every trajectory was too short to split")
    tables: dict[str, list[HorizonRecord]] = {}
    for agg in AGGREGATIONS:
        recs = []
        for hi, h in enumerate(eval_cfg.horizons_s):
            am, asd, n, undef = _mean_std([s.ade[agg][hi] for s in kept])
            fm, fsd, _, _ = _mean_std([s.fde[agg][hi] for s in kept])
            sr = sum(s.success[hi] for s in kept) / len(kept)
            recs.append(HorizonRecord(h, am, asd, fm, fsd, n, sr, undef))
        tables[agg] = recs
    return EvalReport(
        method,
        eval_cfg.aggregation,
        tables,
        n_evaluated=len(kept),
        n_skipped=len(scores) - len(kept),
        extra={"k": cfg.k if method == "cliff_lhmp" else 1, "seed": cfg.seed},
    )


def parameter_sweep(
    cliff_map: CliffMap,
    dataset: Sequence[Trajectory],
    base_cfg: PredictionConfig,
    axis: str,
    values: Sequence[float],
    eval_cfg: EvalConfig = EvalConfig(),
    method: str = "cliff_lhmp",
    workers: int = 1,
) -> list[EvalReport]:
    """One evaluation per value of ``axis`` (beta, r_s, O_s or delta_t), all else fixed."""
    try:
        fname = SWEEP_AXES[axis]
    except KeyError:
        raise InvalidArgumentError(f"unknown sweep axis {axis!r}; choose from beta, r_s, O_s, delta_t") from None
    if len(values) == 0:
        raise InvalidArgumentError("sweep needs at least one value")
    canonical = {"sampling_radius": "r_s", "observation_s": "O_s"}.get(fname, fname)
    reports = []
    for v in values:
        cfg = dataclasses.replace(base_cfg, **{fname: float(v)})
        rep = evaluate_method(cliff_map, dataset, method, cfg, eval_cfg, workers)
        rep.axis, rep.axis_value = canonical, float(v)
        reports.append(rep)
    return reports


def sweep_rows(reports: Sequence[EvalReport]) -> list[dict]:
    return [row for rep in reports for row in rep.rows()]
