"""Trajectory ingestion and preprocessing.

Two on-disk formats are understood: the raw ATC tracker export
(``time_ms, person_id, x_mm, y_mm, z_mm, velocity_mm_s, motion_angle, facing_angle``)
and a canonical ``t_s,person_id,x_m,y_m`` CSV. Only positions and times are
kept; velocities are always recomputed by finite differences.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, MalformedTrajectoryError, ParseError
from .motion import State, wrap_angle
from .predictor import DEFAULT_OBSERVATION_DT, DEFAULT_OBSERVATION_STEPS, ObservationHistory
from .trajectory import Trajectory

log = logging.getLogger(__name__)

CANONICAL_HEADER = ("t_s", "person_id", "x_m", "y_m")
ATC_SOURCE_HZ = 30.0
TARGET_HZ = 2.5


def person_sort_key(pid: str):
    try:
        return (0, int(pid), "")
    except ValueError:
        return (1, 0, pid)


def _open_text(source, mode="r"):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode, encoding="utf-8", newline="")
    return None


def _group(rows: list[tuple[float, str, float, float]]) -> list[Trajectory]:
    by_person: dict[str, list[tuple[float, float, float]]] = {}
    for t, pid, x, y in rows:
        by_person.setdefault(pid, []).append((t, x, y))
    out = []
    for pid in sorted(by_person, key=person_sort_key):
        samples = sorted(by_person[pid], key=lambda r: r[0])
        arr = np.array(samples, dtype=float)
        # the tracker occasionally repeats a timestamp; keep the first
        keep = np.concatenate([[True], np.diff(arr[:, 0]) > 0])
        arr = arr[keep]
        if len(arr) < 2:
            log.debug("person %s has fewer than 2 distinct samples, skipped", pid)
            continue
        out.append(Trajectory(pid, arr[:, 0], arr[:, 1], arr[:, 2]))
    return out


@dataclass
class AtcParseResult:
    trajectories: list[Trajectory]
    total_rows: int
    skipped_rows: int
    skipped_lines: list[int]


def parse_atc(source, tolerance: float = 0.01) -> AtcParseResult:
    """Parse an ATC export (path or text stream) into per-person trajectories.

    Malformed rows are skipped as long as they make up at most ``tolerance``
    of all rows; otherwise a :class:`ParseError` lists the offending lines.
    """
    fh = _open_text(source)
    stream = fh if fh is not None else source
    rows, bad = [], []
    total = 0
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            total += 1
            parts = line.split(",")
            try:
                if len(parts) < 4:
                    raise ValueError("too few columns")
                t = float(parts[0]) / 1000.0
                pid = parts[1].strip()
                x = float(parts[2]) / 1000.0
                y = float(parts[3]) / 1000.0
                if not pid or not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y)):
                    raise ValueError("empty id or non-finite value")
            except ValueError:
                bad.append(lineno)
                continue
            rows.append((t, pid, x, y))
    finally:
        if fh is not None:
            fh.close()
    if total and len(bad) / total > tolerance:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise ParseError(f"{len(bad)} of {total} rows malformed (tolerance {tolerance:.3g}); lines: {shown}")
    return AtcParseResult(_group(rows), total, len(bad), bad)


def read_trajectories(source) -> list[Trajectory]:
    """Read the canonical ``t_s,person_id,x_m,y_m`` format; an empty file gives no trajectories."""
    fh = _open_text(source)
    stream = fh if fh is not None else source
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None:
            # a zero-byte file holds no trajectories
            return []
        if tuple(h.strip() for h in header) != CANONICAL_HEADER:
            raise ParseError(f"bad header {header!r}, expected {','.join(CANONICAL_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise ParseError(f"line {lineno}: expected 4 fields, got {len(rec)}")
            try:
                rows.append((float(rec[0]), rec[1], float(rec[2]), float(rec[3])))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    finally:
        if fh is not None:
            fh.close()
    try:
        return _group(rows)
    except MalformedTrajectoryError as exc:
        raise ParseError(str(exc)) from None


def write_trajectories(trajectories: Iterable[Trajectory], dest) -> None:
    """Write the canonical format; floats use ``repr`` so reading back is bit-exact."""
    fh = _open_text(dest, "w")
    stream = fh if fh is not None else dest
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for tr in trajectories:
            for t, x, y in zip(tr.t, tr.x, tr.y):
                w.writerow((repr(float(t)), tr.person_id, repr(float(x)), repr(float(y))))
    finally:
        if fh is not None:
            fh.close()


def trajectories_to_text(trajectories: Iterable[Trajectory]) -> str:
    buf = io.StringIO()
    write_trajectories(trajectories, buf)
    return buf.getvalue()


def source_rate(traj: Trajectory) -> float:
    return 1.0 / float(np.median(np.diff(traj.t)))


def downsample(traj: Trajectory, target_hz: float = TARGET_HZ) -> Trajectory:
    """Keep the sample nearest to each instant of the grid t0 + n / target_hz."""
    if not target_hz > 0:
        raise InvalidArgumentError("target rate must be > 0")
    src = source_rate(traj)
    if target_hz > src * (1 + 1e-6):
        raise InvalidArgumentError(f"target rate {target_hz} Hz exceeds source rate {src:.4g} Hz")
    t = traj.t
    n = int(math.floor((t[-1] - t[0]) * target_hz + 1e-9))
    grid = t[0] + np.arange(n + 1) / target_hz
    right = np.clip(np.searchsorted(t, grid), 1, len(t) - 1)
    left = right - 1
    idx = np.where(grid - t[left] <= t[right] - grid, left, right)
    idx = np.unique(idx)
    if len(idx) < 2:
        raise MalformedTrajectoryError(
            f"{traj.person_id}: only {len(idx)} sample(s) remain after downsampling to {target_hz} Hz"
        )
    return Trajectory(traj.person_id, t[idx], traj.x[idx], traj.y[idx])


def segment_and_filter(
    trajectories: Iterable[Trajectory], min_duration_s: float, max_gap_s: float | None = None
) -> list[Trajectory]:
    """Split tracks at gaps longer than ``max_gap_s`` and keep pieces lasting ``min_duration_s`` or more.

    ``max_gap_s`` defaults to twice the track's median sampling period. Split
    pieces get ``#<n>`` appended to the person id.
    """
    out = []
    for tr in trajectories:
        gap = max_gap_s if max_gap_s is not None else 2.0 / source_rate(tr)
        cuts = np.nonzero(np.diff(tr.t) > gap)[0] + 1
        bounds = [0, *cuts.tolist(), len(tr)]
        pieces = [(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        for n, (a, b) in enumerate(pieces):
            if b - a < 2:
                continue
            if tr.t[b - 1] - tr.t[a] + 1e-9 < min_duration_s:
                continue
            pid = tr.person_id if len(pieces) == 1 else f"{tr.person_id}#{n}"
            out.append(tr.slice(a, b, pid))
    return out


def preprocess(trajectories: Iterable[Trajectory], target_hz: float = TARGET_HZ, min_duration_s: float = 0.0,
               max_gap_s: float | None = None) -> list[Trajectory]:
    """Downsample then segment; tracks too short to downsample are dropped."""
    ds = []
    for tr in trajectories:
        try:
            ds.append(downsample(tr, target_hz) if source_rate(tr) > target_hz * (1 + 1e-6) else tr)
        except MalformedTrajectoryError:
            continue
    gap = max_gap_s if max_gap_s is not None else 2.0 / target_hz
    return segment_and_filter(ds, min_duration_s, gap)


@dataclass(frozen=True, eq=False)
class ObservationSplit:
    """Observed prefix plus the ground-truth remainder of one trajectory."""

    person_id: str
    history: ObservationHistory
    t0: float  # time of the newest observed position
    gt_t: np.ndarray
    gt_xy: np.ndarray


def history_from_positions(t, x, y, delta_t: float | None = None) -> ObservationHistory:
    """States from positions; each state carries the velocity of the step that reached it.

    The oldest state has no incoming step and reuses the first step's velocity.
    """
    t, x, y = (np.asarray(v, dtype=float) for v in (t, x, y))
    dt = np.diff(t)
    rho = np.hypot(np.diff(x), np.diff(y)) / dt
    theta = wrap_angle(np.arctan2(np.diff(y), np.diff(x)))
    rho = np.concatenate([[rho[0]], rho])
    theta = np.concatenate([[theta[0]], theta])
    states = tuple(State(float(a), float(b), float(r), float(h)) for a, b, r, h in zip(x, y, rho, theta))
    return ObservationHistory(states, float(delta_t if delta_t is not None else np.mean(dt)))


def make_observation_splits(
    traj: Trajectory,
    observation_steps: int = DEFAULT_OBSERVATION_STEPS,
    delta_t_obs: float = DEFAULT_OBSERVATION_DT,
    spacing_tol: float = 0.05,
) -> ObservationSplit | None:
    """First ``observation_steps`` samples as history, the rest as ground truth.

    Returns None (the caller counts it as skipped) when nothing is left for
    ground truth or the observed samples are not evenly spaced at
    ``delta_t_obs`` within ``spacing_tol`` seconds.
    """
    if observation_steps < 2:
        raise InvalidArgumentError("observation_steps must be >= 2")
    if len(traj) <= observation_steps:
        return None
    t = traj.t[:observation_steps]
    if np.any(np.abs(np.diff(t) - delta_t_obs) > spacing_tol):
        return None
    hist = history_from_positions(t, traj.x[:observation_steps], traj.y[:observation_steps], delta_t_obs)
    gt_t = traj.t[observation_steps:].copy()
    gt_xy = np.column_stack([traj.x[observation_steps:], traj.y[observation_steps:]])
    return ObservationSplit(traj.person_id, hist, float(t[-1]), gt_t, gt_xy)


def ground_truth_on_grid(split: ObservationSplit, delta_t: float, n_steps: int) -> np.ndarray:
    """Ground-truth positions at t0 + i * delta_t (i = 1..n_steps), linearly interpolated.

    Instants past the last recorded sample are not extrapolated, so the result
    may have fewer than ``n_steps`` rows.
    """
    times = split.t0 + delta_t * np.arange(1, n_steps + 1)
    # the newest observed sample anchors interpolation before the first ground-truth sample
    t_all = np.concatenate([[split.t0], split.gt_t])
    xy_all = np.vstack([[split.history.last.x, split.history.last.y], split.gt_xy])
    times = times[times <= t_all[-1] + 1e-9]
    return np.column_stack([np.interp(times, t_all, xy_all[:, 0]), np.interp(times, t_all, xy_all[:, 1])])


@dataclass
class DatasetSplit:
    train: list[Trajectory]
    test: list[Trajectory]
    note: str = ""

    def __post_init__(self):
        overlap = {t.person_id for t in self.train} & {t.person_id for t in self.test}
        if overlap:
            raise InvalidArgumentError(f"train and test share trajectories: {sorted(overlap)[:5]}")


def split_dataset(trajectories: Sequence[Trajectory], train_fraction: float, seed: int = 0) -> DatasetSplit:
    """Random disjoint train/test split by trajectory identity."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(trajectories))
    n_train = int(round(train_fraction * len(trajectories)))
    train = [trajectories[i] for i in sorted(order[:n_train])]
    test = [trajectories[i] for i in sorted(order[n_train:])]
    return DatasetSplit(train, test, f"random {train_fraction:.2f}/{1 - train_fraction:.2f} split, seed {seed}")


def split_by_time(trajectories: Sequence[Trajectory], boundary_t: float) -> DatasetSplit:
    """Tracks starting before ``boundary_t`` train, the rest test (e.g. first recording day)."""
    train = [t for t in trajectories if t.t[0] < boundary_t]
    test = [t for t in trajectories if t.t[0] >= boundary_t]
    return DatasetSplit(train, test, f"time split at t={boundary_t}")
