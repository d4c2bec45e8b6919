"""Circular-linear densities over (heading, speed) and the orientation kernel.

Angles live on the half-open interval [-pi, pi). Every covariance is stored
over the axis order (theta, rho).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NumericalDegenerateError

TWO_PI = 2.0 * math.pi
LOG_TWO_PI = math.log(TWO_PI)

# Winding numbers -1, 0, +1. Terms with |w| >= 2 are below 1e-9 for angular
# standard deviations under ~1.5 rad.
DEFAULT_WINDINGS = 1


def wrap_angle(a):
    """Map an angle (or array of angles) onto [-pi, pi).

    Values already inside the interval are returned untouched, so the
    operation is exactly idempotent.
    """
    if np.ndim(a) == 0:
        a = float(a)
        if not math.isfinite(a):
            raise InvalidArgumentError(f"angle must be finite, got {a!r}")
        if -math.pi <= a < math.pi:
            return a
        r = (a + math.pi) % TWO_PI - math.pi
        if r >= math.pi:
            r -= TWO_PI
        return r
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("angles must be finite")
    inside = (arr >= -math.pi) & (arr < math.pi)
    r = np.where(inside, arr, np.mod(arr + math.pi, TWO_PI) - math.pi)
    return np.where(r >= math.pi, r - TWO_PI, r)


def angular_diff(a, b):
    """Signed shortest rotation from ``b`` to ``a``, in [-pi, pi)."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        a, b = float(a), float(b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InvalidArgumentError("angles must be finite")
        return wrap_angle(a - b)
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def kernel(x, beta: float):
    """Gaussian orientation kernel exp(-beta * x**2)."""
    if not beta > 0 or not math.isfinite(beta):
        raise InvalidArgumentError(f"kernel width beta must be > 0, got {beta!r}")
    if np.ndim(x) == 0:
        return math.exp(-beta * float(x) ** 2)
    return np.exp(-beta * np.square(np.asarray(x, dtype=float)))


def circular_mean(angles, weights=None) -> float:
    """Weighted vector mean of angles; NaN when the resultant vanishes."""
    angles = np.asarray(angles, dtype=float)
    w = np.ones_like(angles) if weights is None else np.asarray(weights, dtype=float)
    s = float(np.sum(w * np.sin(angles)))
    c = float(np.sum(w * np.cos(angles)))
    if s == 0.0 and c == 0.0:
        return math.nan
    return wrap_angle(math.atan2(s, c))


@dataclass(frozen=True, slots=True)
class Velocity:
    theta: float
    rho: float

    def __post_init__(self):
        if not (-math.pi <= self.theta < math.pi):
            raise InvalidArgumentError(f"theta {self.theta!r} outside [-pi, pi)")
        if not self.rho >= 0.0 or not math.isfinite(self.rho):
            raise InvalidArgumentError(f"rho must be a finite non-negative speed, got {self.rho!r}")


@dataclass(frozen=True, slots=True)
class State:
    """Position (m) plus polar velocity: speed ``rho`` (m/s), heading ``theta`` (rad)."""

    x: float
    y: float
    rho: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidArgumentError("state position must be finite")
        if not (-math.pi <= self.theta < math.pi):
            raise InvalidArgumentError(f"theta {self.theta!r} outside [-pi, pi)")
        if not self.rho >= 0.0 or not math.isfinite(self.rho):
            raise InvalidArgumentError(f"rho must be a finite non-negative speed, got {self.rho!r}")

    @property
    def velocity(self) -> Velocity:
        return Velocity(self.theta, self.rho)


@dataclass(frozen=True, eq=False)
class SemiWrappedComponent:
    """One bivariate normal over (theta, rho), wrapped along theta."""

    weight: float
    mean_theta: float
    mean_rho: float
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float).reshape(2, 2)
        if not np.all(np.isfinite(cov)):
            raise NumericalDegenerateError("covariance has non-finite entries")
        if cov[0, 1] != cov[1, 0]:
            if not math.isclose(cov[0, 1], cov[1, 0], rel_tol=1e-12, abs_tol=1e-15):
                raise InvalidArgumentError("covariance must be symmetric")
            cov[1, 0] = cov[0, 1]
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if not (det > 0.0 and cov[0, 0] > 0.0 and cov[1, 1] > 0.0):
            raise NumericalDegenerateError(f"covariance is not positive definite (det={det:.3g})")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        if not (0.0 < self.weight <= 1.0):
            raise InvalidArgumentError(f"component weight {self.weight!r} outside (0, 1]")
        if not (-math.pi <= self.mean_theta < math.pi):
            raise InvalidArgumentError(f"mean_theta {self.mean_theta!r} outside [-pi, pi)")
        if not self.mean_rho >= 0.0:
            raise InvalidArgumentError(f"mean_rho must be >= 0, got {self.mean_rho!r}")

    def __eq__(self, other):
        if not isinstance(other, SemiWrappedComponent):
            return NotImplemented
        return (
            self.weight == other.weight
            and self.mean_theta == other.mean_theta
            and self.mean_rho == other.mean_rho
            and np.array_equal(self.cov, other.cov)
        )

    __hash__ = None

    @property
    def cov_upper(self) -> tuple[float, float, float]:
        return float(self.cov[0, 0]), float(self.cov[0, 1]), float(self.cov[1, 1])


@dataclass(frozen=True, eq=False)
class SWGMM:
    """Semi-wrapped Gaussian mixture over (theta, rho)."""

    components: tuple[SemiWrappedComponent, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgumentError("a mixture needs at least one component")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgumentError(f"component weights sum to {total!r}, not 1")
        object.__setattr__(self, "components", comps)

    def __eq__(self, other):
        if not isinstance(other, SWGMM):
            return NotImplemented
        return self.components == other.components

    __hash__ = None

    def __len__(self):
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return self._arrays()["weights"]

    @property
    def means(self) -> np.ndarray:
        return self._arrays()["means"]

    @property
    def covs(self) -> np.ndarray:
        return self._arrays()["covs"]

    def _arrays(self) -> dict:
        if not self._cache:
            comps = self.components
            covs = np.stack([c.cov for c in comps])
            chol = np.linalg.cholesky(covs)
            self._cache.update(
                weights=np.array([c.weight for c in comps]),
                means=np.array([[c.mean_theta, c.mean_rho] for c in comps]),
                covs=covs,
                precs=np.linalg.inv(covs),
                logdets=2.0 * np.log(np.stack([np.diag(L) for L in chol])).sum(axis=1),
                cumw=np.cumsum([c.weight for c in comps]).tolist(),
                draw=[
                    (c.mean_theta, c.mean_rho, float(L[0, 0]), float(L[1, 0]), float(L[1, 1]))
                    for c, L in zip(comps, chol)
                ],
            )
        return self._cache


def mixture(components: Sequence[tuple[float, float, float, Sequence]]) -> SWGMM:
    """Build an SWGMM from ``(weight, mean_theta, mean_rho, cov)`` tuples."""
    return SWGMM(tuple(SemiWrappedComponent(w, t, r, np.asarray(c, dtype=float)) for w, t, r, c in components))


def winding_offsets(windings: int = DEFAULT_WINDINGS) -> np.ndarray:
    if windings < 0:
        raise InvalidArgumentError("windings must be >= 0")
    return TWO_PI * np.arange(-windings, windings + 1, dtype=float)


def wrapped_log_terms(theta, rho, means, precs, logdets, windings: int = DEFAULT_WINDINGS) -> np.ndarray:
    """Per-(observation, component, winding) log normal densities.

    ``theta`` and ``rho`` have shape (N,); ``means`` (K, 2); ``precs`` (K, 2, 2);
    ``logdets`` (K,). Returns an array of shape (N, K, 2*windings + 1).
    """
    theta = np.asarray(theta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    off = winding_offsets(windings)
    dth = theta[:, None, None] + off[None, None, :] - means[None, :, 0, None]
    dr = (rho[:, None] - means[None, :, 1])[:, :, None]
    p_tt = precs[:, 0, 0][None, :, None]
    p_tr = precs[:, 0, 1][None, :, None]
    p_rr = precs[:, 1, 1][None, :, None]
    maha = p_tt * dth * dth + 2.0 * p_tr * dth * dr + p_rr * dr * dr
    return -0.5 * maha - 0.5 * logdets[None, :, None] - LOG_TWO_PI


def swn_pdf(c: SemiWrappedComponent, v: Velocity, windings: int = DEFAULT_WINDINGS) -> float:
    """Semi-wrapped normal density of one component at ``v``."""
    cov = c.cov
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    if not det > 0.0:
        raise NumericalDegenerateError("singular covariance")
    prec = np.linalg.inv(cov)[None]
    logdet = np.array([math.log(det)])
    terms = wrapped_log_terms(
        np.array([v.theta]), np.array([v.rho]), np.array([[c.mean_theta, c.mean_rho]]), prec, logdet, windings
    )
    return float(np.exp(terms).sum())


def swgmm_logpdf(m: SWGMM, theta, rho, windings: int = DEFAULT_WINDINGS) -> np.ndarray:
    """Log mixture density at arrays of (theta, rho)."""
    a = m._arrays()
    terms = wrapped_log_terms(theta, rho, a["means"], a["precs"], a["logdets"], windings)
    per_comp = logsumexp(terms, axis=2) + np.log(a["weights"])[None, :]
    return logsumexp(per_comp, axis=1)


def swgmm_pdf(m: SWGMM, v: Velocity, windings: int = DEFAULT_WINDINGS) -> float:
    return math.fsum(c.weight * swn_pdf(c, v, windings) for c in m.components)


def swgmm_sample(m: SWGMM, rng: np.random.Generator) -> Velocity:
    """Draw one velocity: pick a component by weight, sample its normal, wrap theta, clamp rho."""
    a = m._arrays()
    cumw = a["cumw"]
    u = rng.random() * cumw[-1]
    j = 0
    while j < len(cumw) - 1 and u >= cumw[j]:
        j += 1
    mt, mr, l00, l10, l11 = a["draw"][j]
    z0, z1 = rng.standard_normal(2)
    theta = wrap_angle(mt + l00 * z0)
    rho = mr + l10 * z0 + l11 * z1
    return Velocity(theta, rho if rho > 0.0 else 0.0)


def swgmm_sample_n(m: SWGMM, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draw of ``n`` velocities; returns (theta, rho) arrays."""
    a = m._arrays()
    idx = rng.choice(len(m), size=n, p=a["weights"] / a["weights"].sum())
    z = rng.standard_normal((n, 2))
    chol = np.linalg.cholesky(a["covs"])[idx]
    pts = a["means"][idx] + np.einsum("nij,nj->ni", chol, z)
    return wrap_angle(pts[:, 0]), np.maximum(pts[:, 1], 0.0)
