"""Map-biased constant-velocity rollouts and the plain constant-velocity baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._rng import substream
from .errors import InvalidArgumentError
from .mapping import CliffMap
from .motion import State, Velocity, angular_diff, kernel, swgmm_sample, wrap_angle

# Defaults taken from the published evaluation protocol: 1 s steps, 1 m
# sampling radius, kernel width 1, 3.2 s of history at 2.5 Hz.
DEFAULT_DELTA_T = 1.0
DEFAULT_SAMPLING_RADIUS = 1.0
DEFAULT_BETA = 1.0
DEFAULT_OBSERVATION_STEPS = 8
DEFAULT_OBSERVATION_DT = 0.4


def steps_for(horizon_s: float, delta_t: float) -> int:
    """Number of prediction steps covering ``horizon_s``, rounded half up."""
    return int(math.floor(horizon_s / delta_t + 0.5 + 1e-9))


@dataclass(frozen=True)
class PredictionConfig:
    delta_t: float = DEFAULT_DELTA_T
    horizon_s: float = 50.0
    beta: float = DEFAULT_BETA
    sampling_radius: float = DEFAULT_SAMPLING_RADIUS
    sigma_obs: float = 1.0
    k: int = 10
    seed: int = 0
    # seconds of history fed to the velocity estimator; None uses all of it
    observation_s: float | None = None

    def __post_init__(self):
        for name in ("delta_t", "beta", "sampling_radius", "sigma_obs"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be > 0, got {v!r}")
        if not self.horizon_s >= self.delta_t:
            raise InvalidArgumentError("horizon_s must be >= delta_t")
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be >= 0")
        if self.observation_s is not None and not self.observation_s > 0:
            raise InvalidArgumentError("observation_s must be > 0")

    @property
    def n_steps(self) -> int:
        return steps_for(self.horizon_s, self.delta_t)


@dataclass(frozen=True)
class ObservationHistory:
    """Observed states at uniform spacing ``delta_t`` seconds, oldest first."""

    states: tuple[State, ...]
    delta_t: float = DEFAULT_OBSERVATION_DT

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise InvalidArgumentError("an observation history needs at least 2 states")
        if not self.delta_t > 0:
            raise InvalidArgumentError("delta_t must be > 0")

    def __len__(self):
        return len(self.states)

    @property
    def last(self) -> State:
        return self.states[-1]

    def tail(self, n: int) -> "ObservationHistory":
        return ObservationHistory(self.states[-max(n, 2):], self.delta_t)


@dataclass(frozen=True)
class PredictedTrajectory:
    states: tuple[State, ...]
    truncated: bool = False
    truncation_step: int | None = None
    # velocities drawn from the map at each step, kept for diagnostics
    sampled: tuple[Velocity, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if self.truncated != (self.truncation_step is not None):
            raise InvalidArgumentError("truncation_step must be set exactly when truncated")

    def __len__(self):
        return len(self.states)

    @property
    def xy(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states], dtype=float).reshape(-1, 2)


def gaussian_weight(t, sigma: float):
    """Gaussian observation weight 1 / (sigma * sqrt(2 pi) * exp((t / sigma)**2 / 2))."""
    return np.exp(-0.5 * (np.asarray(t, dtype=float) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def observed_velocity(history: ObservationHistory, sigma_obs: float = 1.0) -> tuple[float, float]:
    """Estimate (rho_obs, theta_obs) from a history, newest states weighted most.

    Weights follow the Gaussian ``gaussian_weight(t)`` with t = 1 for the newest
    state and are renormalised to sum to one. The heading is a weighted vector
    mean. Both are accumulated as offsets from the newest state, which makes a
    constant history an exact fixpoint.
    """
    if not sigma_obs > 0:
        raise InvalidArgumentError("sigma_obs must be > 0")
    newest_first = history.states[::-1]
    w = gaussian_weight(np.arange(1, len(newest_first) + 1), sigma_obs)
    total = float(w.sum())
    if not total > 0:
        # only reachable through underflow for absurdly small sigma
        w = np.zeros_like(w)
        w[0] = 1.0
        total = 1.0
    w = w / total
    ref = newest_first[0]
    rho = np.array([s.rho for s in newest_first])
    theta = np.array([s.theta for s in newest_first])
    rho_obs = ref.rho + float(np.dot(w, rho - ref.rho))
    rho_obs = max(rho_obs, 0.0)
    if not np.any(rho > 0):
        return 0.0, ref.theta
    d = angular_diff(theta, ref.theta)
    s = float(np.dot(w, np.sin(d)))
    c = float(np.dot(w, np.cos(d)))
    if s == 0.0 and c == 0.0:
        return rho_obs, ref.theta
    return rho_obs, wrap_angle(ref.theta + math.atan2(s, c))


def current_state(history: ObservationHistory, sigma_obs: float = 1.0, observation_s: float | None = None) -> State:
    """Current state: newest observed position with the estimated velocity."""
    h = history
    if observation_s is not None:
        h = history.tail(int(math.floor(observation_s / history.delta_t + 0.5 + 1e-9)))
    rho, theta = observed_velocity(h, sigma_obs)
    return State(h.last.x, h.last.y, rho, theta)


def sample_velocity_from_map(
    cliff_map: CliffMap, x: float, y: float, sampling_radius: float, rng: np.random.Generator
) -> Velocity | None:
    """Draw a velocity from a uniformly chosen cell within ``sampling_radius``; None if no cell is near."""
    if not sampling_radius > 0:
        raise InvalidArgumentError("sampling_radius must be > 0")
    near = cliff_map.cells_near(x, y, sampling_radius)
    if not near:
        return None
    key = near[int(rng.integers(len(near)))] if len(near) > 1 else near[0]
    return swgmm_sample(cliff_map.cells[key].mixture, rng)


def predict_one(cliff_map: CliffMap, start: State, cfg: PredictionConfig, rng: np.random.Generator) -> PredictedTrajectory:
    """Roll one stochastic trajectory forward from ``start``.

    Each step moves with the previous velocity, samples a heading from the map
    at the new position and blends it in through the orientation kernel. Speed
    stays at ``start.rho`` throughout. The rollout stops early when no map
    cell lies within the sampling radius.
    """
    dt, beta, radius = cfg.delta_t, cfg.beta, cfg.sampling_radius
    x, y, rho, theta = start.x, start.y, start.rho, start.theta
    states: list[State] = []
    sampled: list[Velocity] = []
    for step in range(1, cfg.n_steps + 1):
        x = x + rho * math.cos(theta) * dt
        y = y + rho * math.sin(theta) * dt
        v = sample_velocity_from_map(cliff_map, x, y, radius, rng)
        if v is None:
            return PredictedTrajectory(tuple(states), True, step, tuple(sampled))
        sampled.append(v)
        d = angular_diff(v.theta, theta)
        theta = wrap_angle(theta + d * kernel(d, beta))
        states.append(State(x, y, rho, theta))
    return PredictedTrajectory(tuple(states), False, None, tuple(sampled))


def predict_ensemble(
    cliff_map: CliffMap, start: State, cfg: PredictionConfig, key: Sequence[int] = ()
) -> list[PredictedTrajectory]:
    """``cfg.k`` independent rollouts; sample ``i`` uses the stream keyed by (seed, *key, i)."""
    return [predict_one(cliff_map, start, cfg, substream(cfg.seed, *key, i)) for i in range(cfg.k)]


def cvm_predict(start: State, cfg: PredictionConfig) -> PredictedTrajectory:
    """Constant-velocity rollout over the full horizon."""
    c, s = math.cos(start.theta), math.sin(start.theta)
    x, y = start.x, start.y
    states = []
    for _ in range(cfg.n_steps):
        x = x + start.rho * c * cfg.delta_t
        y = y + start.rho * s * cfg.delta_t
        states.append(State(x, y, start.rho, start.theta))
    return PredictedTrajectory(tuple(states))
