"""Learning a grid of semi-wrapped mixtures (a flow-field map) from trajectories."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from numba import njit

from ._rng import substream
from .errors import EmptyMapError, InsufficientDataError, InvalidArgumentError, MalformedTrajectoryError
from .motion import (
    DEFAULT_WINDINGS,
    LOG_TWO_PI,
    SWGMM,
    SemiWrappedComponent,
    Velocity,
    circular_mean,
    swgmm_logpdf,
    swgmm_sample_n,
    winding_offsets,
    wrap_angle,
    wrapped_log_terms,
)
from .trajectory import Trajectory

log = logging.getLogger(__name__)

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    resolution: float = 1.0
    width: int = 1
    height: int = 1

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InvalidArgumentError(f"grid resolution must be > 0, got {self.resolution!r}")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"grid size must be positive integers, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def covering(cls, xs, ys, resolution: float = 1.0, margin: float = 0.0) -> "GridSpec":
        """Smallest resolution-aligned grid covering all points (plus ``margin``)."""
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if xs.size == 0:
            raise InvalidArgumentError("cannot size a grid from zero points")
        ox = math.floor((xs.min() - margin) / resolution) * resolution
        oy = math.floor((ys.min() - margin) / resolution) * resolution
        w = int(math.floor((xs.max() + margin - ox) / resolution)) + 1
        h = int(math.floor((ys.max() + margin - oy) / resolution)) + 1
        return cls(ox, oy, resolution, w, h)

    def contains(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_of(self, x: float, y: float) -> Cell | None:
        ix = math.floor((x - self.origin_x) / self.resolution)
        iy = math.floor((y - self.origin_y) / self.resolution)
        return (ix, iy) if self.contains(ix, iy) else None

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    @property
    def center(self) -> tuple[float, float]:
        return (
            self.origin_x + 0.5 * self.width * self.resolution,
            self.origin_y + 0.5 * self.height * self.resolution,
        )


@dataclass(frozen=True)
class CellModel:
    mixture: SWGMM
    observation_count: int

    def __post_init__(self):
        if self.observation_count < 0:
            raise InvalidArgumentError("observation_count must be >= 0")


@dataclass(frozen=True, eq=False)
class CliffMap:
    """Sparse grid of per-cell velocity mixtures."""

    grid: GridSpec
    cells: Mapping[Cell, CellModel]

    def __post_init__(self):
        cells = {}
        for key in sorted(self.cells):
            ix, iy = int(key[0]), int(key[1])
            if not self.grid.contains(ix, iy):
                raise InvalidArgumentError(f"cell {(ix, iy)} lies outside the grid")
            cells[(ix, iy)] = self.cells[key]
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other):
        if not isinstance(other, CliffMap):
            return NotImplemented
        return self.grid == other.grid and self.cells == other.cells

    __hash__ = None

    def __len__(self):
        return len(self.cells)

    def cells_near(self, x: float, y: float, radius: float) -> list[Cell]:
        """Populated cells whose centre lies strictly closer than ``radius`` to (x, y).

        Ordered by (ix, iy) so that random choices over the result are reproducible.
        """
        g = self.grid
        res = g.resolution
        fx = (x - g.origin_x) / res - 0.5
        fy = (y - g.origin_y) / res - 0.5
        span = radius / res
        ix0 = max(math.ceil(fx - span), 0)
        ix1 = min(math.floor(fx + span), g.width - 1)
        iy0 = max(math.ceil(fy - span), 0)
        iy1 = min(math.floor(fy + span), g.height - 1)
        out = []
        r2 = radius * radius
        cells = self.cells
        for ix in range(ix0, ix1 + 1):
            cx = g.origin_x + (ix + 0.5) * res - x
            for iy in range(iy0, iy1 + 1):
                if (ix, iy) in cells:
                    cy = g.origin_y + (iy + 0.5) * res - y
                    if cx * cx + cy * cy < r2:
                        out.append((ix, iy))
        return out


@dataclass(frozen=True)
class EmConfig:
    max_components: int = 5
    max_iterations: int = 100
    log_likelihood_tolerance: float = 1e-6
    covariance_floor: float = 1e-4
    seed: int = 0
    min_observations_per_cell: int = 10
    windings: int = DEFAULT_WINDINGS

    def __post_init__(self):
        if self.max_components < 1 or self.max_iterations < 1 or self.min_observations_per_cell < 1:
            raise InvalidArgumentError("component, iteration and observation counts must be >= 1")
        if not self.covariance_floor > 0 or not self.log_likelihood_tolerance > 0:
            raise InvalidArgumentError("covariance_floor and tolerance must be > 0")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be >= 0")


@dataclass
class FitResult:
    mixture: SWGMM
    log_likelihood: float
    bic: float
    converged: bool
    iterations: int
    log_likelihood_trace: list[float]
    bic_by_components: dict[int, float]

    @property
    def n_components(self) -> int:
        return len(self.mixture)


# ---------------------------------------------------------------- velocities


def derive_velocities(trajectory: Trajectory) -> np.ndarray:
    """Forward finite-difference velocities attributed to the earlier sample.

    Returns an array of shape (len - 1, 4) with columns x, y, theta, rho.
    """
    t, x, y = trajectory.t, trajectory.x, trajectory.y
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise MalformedTrajectoryError(f"{trajectory.person_id}: non-increasing timestamps")
    dx, dy = np.diff(x), np.diff(y)
    rho = np.hypot(dx, dy) / dt
    theta = wrap_angle(np.arctan2(dy, dx))
    return np.column_stack([x[:-1], y[:-1], theta, rho])


@dataclass
class BinnedObservations:
    cells: dict[Cell, np.ndarray]  # cell -> (n, 2) array of (theta, rho)
    dropped: int


def bin_observations(velocities: np.ndarray, grid: GridSpec) -> BinnedObservations:
    """Group (x, y, theta, rho) rows by containing cell; rows off the grid are counted and dropped."""
    v = np.asarray(velocities, dtype=float).reshape(-1, 4)
    ix = np.floor((v[:, 0] - grid.origin_x) / grid.resolution).astype(np.int64)
    iy = np.floor((v[:, 1] - grid.origin_y) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    dropped = int(np.count_nonzero(~inside))
    v, ix, iy = v[inside], ix[inside], iy[inside]
    cells: dict[Cell, np.ndarray] = {}
    if len(v):
        flat = ix * grid.height + iy
        order = np.argsort(flat, kind="stable")
        flat, v = flat[order], v[order]
        keys, starts = np.unique(flat, return_index=True)
        bounds = list(starts[1:]) + [len(flat)]
        for k, s, e in zip(keys, starts, bounds):
            cells[(int(k // grid.height), int(k % grid.height))] = v[s:e, 2:4].copy()
    return BinnedObservations(cells, dropped)


# ------------------------------------------------------------------------ EM


def _floor_cov(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, vecs = np.linalg.eigh(cov)
    if w.min() >= floor:
        return cov
    return (vecs * np.maximum(w, floor)) @ vecs.T


def _floor_covs(c_tt, c_tr, c_rr, floor: float) -> np.ndarray:
    """Stack 2x2 covariances, clamping eigenvalues below ``floor``."""
    half_tr = 0.5 * (c_tt + c_rr)
    min_eig = half_tr - np.sqrt((0.5 * (c_tt - c_rr)) ** 2 + c_tr**2)
    covs = np.empty((len(c_tt), 2, 2))
    covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 0], covs[:, 1, 1] = c_tt, c_tr, c_tr, c_rr
    for j in np.nonzero(min_eig < floor)[0]:
        covs[j] = _floor_cov(covs[j], floor)
    return covs


def _kmeans_labels(points: np.ndarray, k: int, rng: np.random.Generator, iterations: int = 50) -> np.ndarray:
    n = len(points)
    first = int(rng.integers(n))
    centers = [points[first]]
    d2 = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = int(rng.integers(n)) if total <= 0 else int(rng.choice(n, p=d2 / total))
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    c = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(iterations):
        dist = np.sum((points[:, None, :] - c[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        new = c.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if np.array_equal(new, c):
            break
        c = new
    return labels


def _initial_params(theta, rho, k, rng, floor):
    # a constant speed leaves only rounding residue in std(rho); dividing by it
    # would let that residue drive the clustering
    scale = max(float(np.std(rho)), math.sqrt(floor))
    emb = np.column_stack([np.cos(theta), np.sin(theta), rho / scale])
    labels = _kmeans_labels(emb, k, rng) if k > 1 else np.zeros(len(theta), dtype=int)
    mt_all = circular_mean(theta)
    var_t = float(np.var(wrap_angle(theta - mt_all))) if not math.isnan(mt_all) else 1.0
    global_cov = np.diag([max(var_t, floor), max(float(np.var(rho)), floor)])
    weights, means, covs = [], [], []
    for j in range(k):
        sel = labels == j
        nj = int(np.count_nonzero(sel))
        if nj == 0:
            continue
        th, r = theta[sel], rho[sel]
        mt = circular_mean(th)
        if math.isnan(mt):
            mt = float(th[0])
        mr = float(r.mean())
        if nj >= 2:
            d = np.column_stack([wrap_angle(th - mt), r - mr])
            cov = d.T @ d / nj
        else:
            cov = global_cov.copy()
        weights.append(nj / len(theta))
        means.append([mt, mr])
        covs.append(_floor_cov(cov, floor))
    return np.array(weights), np.array(means), np.array(covs)


@njit(cache=True)
def _em_pass(theta, rho, off, log_w, means, precs, logdets):
    """One fused E-step: log-likelihood and responsibility-weighted moments.

    Returns (ll, rk, mom) where ``mom[k]`` holds the responsibility-weighted
    sums of theta_u, theta_u**2, theta_u*rho, rho, rho**2 for component k.
    """
    n, k, nw = theta.shape[0], means.shape[0], off.shape[0]
    buf = np.empty((k, nw))
    rk = np.zeros(k)
    mom = np.zeros((k, 5))
    ll = 0.0
    for i in range(n):
        peak = -np.inf
        for j in range(k):
            dr = rho[i] - means[j, 1]
            for w in range(nw):
                dth = theta[i] + off[w] - means[j, 0]
                m = precs[j, 0, 0] * dth * dth + 2.0 * precs[j, 0, 1] * dth * dr + precs[j, 1, 1] * dr * dr
                v = log_w[j] - 0.5 * m - 0.5 * logdets[j] - LOG_TWO_PI
                buf[j, w] = v
                if v > peak:
                    peak = v
        tot = 0.0
        for j in range(k):
            for w in range(nw):
                e = np.exp(buf[j, w] - peak)
                buf[j, w] = e
                tot += e
        ll += peak + np.log(tot)
        r = rho[i]
        for j in range(k):
            for w in range(nw):
                q = buf[j, w] / tot
                tu = theta[i] + off[w]
                rk[j] += q
                mom[j, 0] += q * tu
                mom[j, 1] += q * tu * tu
                mom[j, 2] += q * tu * r
                mom[j, 3] += q * r
                mom[j, 4] += q * r * r
    return ll, rk, mom


def _run_em(theta, rho, params, cfg: EmConfig):
    """EM over (component, winding) latent pairs; returns the best parameters seen.

    Treating the winding number as a latent variable makes each iteration an
    exact EM step for the truncated semi-wrapped likelihood, so the training
    log-likelihood is non-decreasing apart from covariance flooring.
    """
    weights, means, covs = params
    n = len(theta)
    off = winding_offsets(cfg.windings)
    trace: list[float] = []
    best = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        precs = np.linalg.inv(covs)
        logdets = np.log(covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] ** 2)
        ll, rk, mom = _em_pass(theta, rho, off, np.log(weights), means, precs, logdets)
        trace.append(ll)
        if best is None or ll > best[0]:
            best = (ll, weights, means, covs)
        if len(trace) > 1 and abs(ll - trace[-2]) <= cfg.log_likelihood_tolerance * abs(trace[-2]):
            converged = True
            break
        if it == cfg.max_iterations:
            break
        keep = rk > 1e-10 * n
        if not np.all(keep):
            mom, rk = mom[keep], rk[keep]
        mom = mom / rk[:, None]
        mt, mr = mom[:, 0], mom[:, 3]
        covs = _floor_covs(mom[:, 1] - mt * mt, mom[:, 2] - mt * mr, mom[:, 4] - mr * mr, cfg.covariance_floor)
        weights = rk / rk.sum()
        means = np.column_stack([wrap_angle(mt), mr])
    ll, weights, means, covs = best
    return ll, weights, means, covs, converged, it, trace


def _to_mixture(weights, means, covs) -> SWGMM:
    keep = weights > 1e-12
    weights, means, covs = weights[keep], means[keep], covs[keep]
    weights = weights / weights.sum()
    comps = []
    for w, m, c in zip(weights, means, covs):
        comps.append(SemiWrappedComponent(float(w), float(wrap_angle(float(m[0]))), max(float(m[1]), 0.0), c))
    # put the residual rounding on the heaviest component so fsum(weights) == 1
    total = math.fsum(c.weight for c in comps)
    if total != 1.0:
        j = int(np.argmax([c.weight for c in comps]))
        c = comps[j]
        comps[j] = SemiWrappedComponent(c.weight + (1.0 - total), c.mean_theta, c.mean_rho, c.cov)
    return SWGMM(tuple(comps))


def _as_arrays(observations) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(observations, np.ndarray):
        arr = np.asarray(observations, dtype=float).reshape(-1, 2)
        return arr[:, 0].copy(), arr[:, 1].copy()
    obs = list(observations)
    if obs and isinstance(obs[0], Velocity):
        return np.array([v.theta for v in obs], dtype=float), np.array([v.rho for v in obs], dtype=float)
    arr = np.asarray(obs, dtype=float).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def fit_cell(observations, cfg: EmConfig = EmConfig(), rng: np.random.Generator | None = None) -> FitResult:
    """Fit a semi-wrapped mixture to (theta, rho) observations, choosing the size by BIC.

    ``observations`` is a sequence of :class:`Velocity` or an (N, 2) array of
    (theta, rho). Every candidate size 1..max_components is fitted by EM from a
    seeded k-means initialisation; the lowest BIC wins.
    """
    theta, rho = _as_arrays(observations)
    n = len(theta)
    if n < cfg.min_observations_per_cell:
        raise InsufficientDataError(f"{n} observations, need at least {cfg.min_observations_per_cell}")
    theta = wrap_angle(theta)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    best: FitResult | None = None
    bics: dict[int, float] = {}
    for k in range(1, min(cfg.max_components, n) + 1):
        params = _initial_params(theta, rho, k, rng, cfg.covariance_floor)
        ll, w, m, c, converged, iters, trace = _run_em(theta, rho, params, cfg)
        k_eff = len(w)
        bic = -2.0 * ll + (6 * k_eff - 1) * math.log(n)
        bics[k] = bic
        if best is None or bic < best.bic:
            best = FitResult(_to_mixture(w, m, c), ll, bic, converged, iters, trace, bics)
    best.bic_by_components = bics
    return best


# ----------------------------------------------------------------- map build


@dataclass
class BuildSummary:
    cells_populated: int
    cells_below_threshold: int
    observations_used: int
    observations_dropped: int
    cells_not_converged: int
    mean_em_iterations: float
    components_histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "cells_populated": self.cells_populated,
            "cells_below_threshold": self.cells_below_threshold,
            "observations_used": self.observations_used,
            "observations_dropped": self.observations_dropped,
            "cells_not_converged": self.cells_not_converged,
            "mean_em_iterations": self.mean_em_iterations,
            "components_histogram": {str(k): v for k, v in sorted(self.components_histogram.items())},
        }


def _fit_one(job):
    key, obs, cfg = job
    return key, fit_cell(obs, cfg, substream(cfg.seed, key[0], key[1]))


def build_map_with_summary(
    trajectories: Iterable[Trajectory], grid: GridSpec, cfg: EmConfig = EmConfig(), workers: int = 1
) -> tuple[CliffMap, BuildSummary]:
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyMapError("empty-map: no trajectories given")
    vel = np.concatenate([derive_velocities(t) for t in trajectories], axis=0)
    binned = bin_observations(vel, grid)
    jobs = [(key, obs, cfg) for key, obs in sorted(binned.cells.items()) if len(obs) >= cfg.min_observations_per_cell]
    below = len(binned.cells) - len(jobs)
    if not jobs:
        raise EmptyMapError(
            f"empty-map: no cell reached {cfg.min_observations_per_cell} observations "
            f"({len(binned.cells)} cells touched, {binned.dropped} observations off-grid)"
        )
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_fit_one(j) for j in jobs]
    cells = {key: CellModel(fit.mixture, len(obs)) for (key, fit), (_, obs, _) in zip(results, jobs)}
    hist: dict[int, int] = {}
    for _, fit in results:
        hist[fit.n_components] = hist.get(fit.n_components, 0) + 1
    summary = BuildSummary(
        cells_populated=len(cells),
        cells_below_threshold=below,
        observations_used=int(sum(len(obs) for _, obs, _ in jobs)),
        observations_dropped=binned.dropped,
        cells_not_converged=sum(1 for _, fit in results if not fit.converged),
        mean_em_iterations=float(np.mean([fit.iterations for _, fit in results])),
        components_histogram=hist,
    )
    log.info("built map: %d cells, %d observations off-grid", len(cells), binned.dropped)
    return CliffMap(grid, cells), summary


def build_map(
    trajectories: Iterable[Trajectory], grid: GridSpec, cfg: EmConfig = EmConfig(), workers: int = 1
) -> CliffMap:
    """Derive velocities, bin them, and fit one mixture per sufficiently populated cell."""
    return build_map_with_summary(trajectories, grid, cfg, workers)[0]


# ------------------------------------------------------------ map comparison


@dataclass(frozen=True, eq=False)
class KlHeatmap:
    """Per-cell KL divergence in nats; ``values[iy, ix]``, NaN marks absent cells."""

    grid: GridSpec
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, KlHeatmap):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values, equal_nan=True)

    __hash__ = None

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def mean(self) -> float:
        vals = self.values[self.defined]
        return float(vals.mean()) if vals.size else math.nan

    def items(self) -> list[tuple[int, int, float]]:
        iy, ix = np.nonzero(self.defined)
        return sorted((int(a), int(b), float(self.values[b, a])) for a, b in zip(ix, iy))


def mixture_kl(p: SWGMM, q: SWGMM, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of KL(p || q) with draws from ``p``; may be slightly negative."""
    theta, rho = swgmm_sample_n(p, rng, n_samples)
    return float(np.mean(swgmm_logpdf(p, theta, rho) - swgmm_logpdf(q, theta, rho)))


def compare_maps_kl(a: CliffMap, b: CliffMap, n_samples: int = 10_000, seed: int = 0) -> KlHeatmap:
    """KL(a_cell || b_cell) for every cell populated in both maps, clamped at zero."""
    if a.grid != b.grid:
        raise InvalidArgumentError(f"grid mismatch: {a.grid} vs {b.grid}")
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    values = np.full((a.grid.height, a.grid.width), np.nan)
    for key, cell in a.cells.items():
        other = b.cells.get(key)
        if other is None:
            continue
        kl = mixture_kl(cell.mixture, other.mixture, n_samples, substream(seed, key[0], key[1]))
        values[key[1], key[0]] = max(kl, 0.0)
    return KlHeatmap(a.grid, values)


def map_from_mixtures(grid: GridSpec, mixtures: Mapping[Cell, SWGMM], observation_count: int = 0) -> CliffMap:
    """Assemble a map directly from per-cell mixtures (synthetic maps, tests)."""
    return CliffMap(grid, {k: CellModel(m, observation_count) for k, m in mixtures.items()})

