"""Synthetic flow scenarios for desk-scale experiments.

Agents walk at a fixed speed through a heading field with independent
Gaussian heading noise at every step, sampled at ``sample_dt`` seconds.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .mapping import GridSpec
from .motion import wrap_angle
from .trajectory import Trajectory


@dataclass(frozen=True)
class SyntheticScenario:
    name: str
    speed: float = 1.2
    heading_noise: float = 0.1
    extent: GridSpec = GridSpec(0.0, 0.0, 1.0, 1, 1)
    sample_dt: float = 0.4
    max_steps: int = 2000

    def __post_init__(self):
        if not self.speed > 0 or self.heading_noise < 0 or not self.sample_dt > 0:
            raise InvalidArgumentError("speed and sample_dt must be > 0, heading_noise >= 0")

    def spawn(self, rng: np.random.Generator) -> tuple[float, float, int]:
        """Start position and a branch label."""
        raise NotImplementedError

    def heading(self, x: float, y: float, branch: int) -> float:
        raise NotImplementedError

    def finished(self, x: float, y: float, progress: float) -> bool:
        return False

    def inside(self, x: float, y: float) -> bool:
        g = self.extent
        return (
            g.origin_x <= x < g.origin_x + g.width * g.resolution
            and g.origin_y <= y < g.origin_y + g.height * g.resolution
        )


@dataclass(frozen=True)
class Corridor(SyntheticScenario):
    """Straight eastbound corridor."""

    name: str = "corridor"
    extent: GridSpec = GridSpec(0.0, 0.0, 1.0, 40, 6)
    lane: tuple[float, float] = (1.0, 5.0)

    def spawn(self, rng):
        return self.extent.origin_x + 0.2, float(rng.uniform(*self.lane)), 0

    def heading(self, x, y, branch):
        return 0.0


@dataclass(frozen=True)
class LCorner(SyntheticScenario):
    """Eastbound corridor turning north around an inner corner at ``corner``."""

    name: str = "l-corner"
    extent: GridSpec = GridSpec(0.0, 0.0, 1.0, 20, 34)
    corner: tuple[float, float] = (16.0, 4.0)
    lane: tuple[float, float] = (0.5, 3.5)

    def spawn(self, rng):
        return 0.2, float(rng.uniform(*self.lane)), 0

    def heading(self, x, y, branch):
        cx, cy = self.corner
        if x < cx:
            return 0.0
        if y >= cy:
            return math.pi / 2
        return wrap_angle(math.atan2(y - cy, x - cx) + math.pi / 2)

    def inside(self, x, y):
        cx, cy = self.corner
        if not super().inside(x, y):
            return False
        return y < cy or x >= cx - 1.0


@dataclass(frozen=True)
class Arc(SyntheticScenario):
    """Counter-clockwise circular flow around ``center``.

    Agents start at the bottom of the circle and walk ``span`` radians. The
    heading is the chord direction for one sample step, so noise-free agents
    stay exactly on their circle.
    """

    name: str = "arc"
    speed: float = 1.0
    extent: GridSpec = GridSpec(-13.0, -13.0, 1.0, 26, 26)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 10.0
    radius_spread: float = 0.5
    span: float = math.pi
    start_angle: float = -math.pi / 2

    def spawn(self, rng):
        r = self.radius + (float(rng.uniform(-self.radius_spread, self.radius_spread)) if self.radius_spread else 0.0)
        return (
            self.center[0] + r * math.cos(self.start_angle),
            self.center[1] + r * math.sin(self.start_angle),
            0,
        )

    def heading(self, x, y, branch):
        dx, dy = x - self.center[0], y - self.center[1]
        r = math.hypot(dx, dy)
        step = self.speed * self.sample_dt
        chord = math.asin(min(step / (2.0 * r), 1.0))
        return wrap_angle(math.atan2(dy, dx) + math.pi / 2 + chord)

    def finished(self, x, y, progress):
        return progress >= self.span - 1e-12

    def polar_angle(self, x, y):
        return math.atan2(y - self.center[1], x - self.center[0])


@dataclass(frozen=True)
class YJunction(SyntheticScenario):
    """Eastbound stem splitting at ``split_x`` into branches at +/- ``branch_angle``.

    Branch 0 (upper) is taken with probability ``p``.
    """

    name: str = "y-junction"
    extent: GridSpec = GridSpec(0.0, -12.0, 1.0, 24, 24)
    split_x: float = 10.0
    branch_angle: float = math.pi / 4
    p: float = 0.5
    lane: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.p <= 1.0:
            raise InvalidArgumentError("branch probability must lie in [0, 1]")

    def spawn(self, rng):
        y = float(rng.uniform(*self.lane))
        branch = 0 if rng.random() < self.p else 1
        return 0.2, y, branch

    def heading(self, x, y, branch):
        if x < self.split_x:
            return 0.0
        return self.branch_angle if branch == 0 else -self.branch_angle


SCENARIOS = {
    "corridor": Corridor(),
    "l-corner": LCorner(),
    "arc": Arc(),
    "quarter-circle": Arc(name="quarter-circle", span=math.pi / 2),
    "y-junction": YJunction(),
}


def make_scenario(name: str, **overrides) -> SyntheticScenario:
    try:
        base = SCENARIOS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(base, **overrides) if overrides else base


def simulate_agent(scenario: SyntheticScenario, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Integrate one agent; returns (positions (n, 2), branch)."""
    x, y, branch = scenario.spawn(rng)
    pts = [(x, y)]
    step = scenario.speed * scenario.sample_dt
    progress = 0.0
    is_arc = isinstance(scenario, Arc)
    for _ in range(scenario.max_steps):
        h = scenario.heading(x, y, branch)
        if scenario.heading_noise:
            h += scenario.heading_noise * float(rng.standard_normal())
        nx, ny = x + step * math.cos(h), y + step * math.sin(h)
        if not scenario.inside(nx, ny):
            break
        if is_arc:
            progress += wrap_angle(scenario.polar_angle(nx, ny) - scenario.polar_angle(x, y))
        x, y = nx, ny
        pts.append((x, y))
        if scenario.finished(x, y, progress):
            break
    return np.array(pts), branch


def generate_synthetic(
    scenario: SyntheticScenario, n_trajectories: int, rng: np.random.Generator, t_start: float = 0.0
) -> list[Trajectory]:
    """Simulate ``n_trajectories`` agents; ids are "0", "1", ...

    Agents are drawn sequentially from ``rng``, so the first m trajectories of
    a larger batch equal a batch of size m drawn from the same seed.
    """
    return [tr for tr, _ in generate_with_branches(scenario, n_trajectories, rng, t_start)]


def generate_with_branches(scenario, n_trajectories, rng, t_start=0.0) -> list[tuple[Trajectory, int]]:
    if n_trajectories < 0:
        raise InvalidArgumentError("n_trajectories must be >= 0")
    out = []
    i = 0
    while len(out) < n_trajectories:
        pts, branch = simulate_agent(scenario, rng)
        if len(pts) >= 2:
            t = t_start + scenario.sample_dt * np.arange(len(pts))
            out.append((Trajectory(str(i), t, pts[:, 0], pts[:, 1]), branch))
            i += 1
    return out
