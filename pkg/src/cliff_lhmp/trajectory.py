from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedTrajectoryError


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timed 2D track of one person: ``t`` in seconds, ``x``/``y`` in metres."""

    person_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t, x, y = (np.array(v, dtype=float).ravel() for v in (self.t, self.x, self.y))
        if not (len(t) == len(x) == len(y)):
            raise MalformedTrajectoryError(f"{self.person_id}: t/x/y lengths differ")
        if len(t) < 2:
            raise MalformedTrajectoryError(f"{self.person_id}: needs at least 2 samples, has {len(t)}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise MalformedTrajectoryError(f"{self.person_id}: non-finite sample")
        if np.any(np.diff(t) <= 0):
            raise MalformedTrajectoryError(f"{self.person_id}: timestamps must be strictly increasing")
        for name, arr in (("t", t), ("x", x), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "person_id", str(self.person_id))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.person_id == other.person_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def slice(self, start: int, stop: int | None = None, person_id: str | None = None) -> "Trajectory":
        return Trajectory(person_id or self.person_id, self.t[start:stop], self.x[start:stop], self.y[start:stop])
