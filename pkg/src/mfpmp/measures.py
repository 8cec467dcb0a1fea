"""Weighted particle clouds and elementary measure operations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

WEIGHT_TOL = 1e-12


class MeasureError(ValueError):
    """Raised for malformed particle clouds or plans."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finitely supported probability measure ``sum_i w_i delta_{x_i}``.

    Points are stored as an ``(n, d)`` array. Weights are renormalised on
    construction when they are off by more than ``WEIGHT_TOL``.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise MeasureError("need a nonempty (n, d) point array")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise MeasureError(
                f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise MeasureError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise MeasureError("weights sum to zero")
        if abs(total - 1.0) > WEIGHT_TOL:
            w = w / total
        if not np.all(np.isfinite(pts)):
            raise MeasureError("non-finite particle position")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_points(self, points) -> "EmpiricalMeasure":
        """Same weights, new positions (how flows act on clouds)."""
        return EmpiricalMeasure(points, self.weights)

    def __len__(self):
        return self.n


def _as_point_array(points) -> np.ndarray:
    if len(points) == 0:
        raise MeasureError("empty point list")
    try:
        pts = np.array(points, dtype=float)
    except ValueError as exc:  # ragged input
        raise MeasureError("ragged point dimensions") from exc
    if pts.dtype == object:
        raise MeasureError("ragged point dimensions")
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise MeasureError("points must be a list of vectors")
    return pts


def uniform_measure(points) -> EmpiricalMeasure:
    pts = _as_point_array(points)
    n = pts.shape[0]
    return EmpiricalMeasure(pts, np.full(n, 1.0 / n))


def dirac(point) -> EmpiricalMeasure:
    return uniform_measure([np.atleast_1d(np.asarray(point, dtype=float))])


def pushforward(mu: EmpiricalMeasure,
                f: Callable[[np.ndarray], np.ndarray]) -> EmpiricalMeasure:
    """Image measure ``f_# mu``; ``f`` maps one d-vector to one d-vector."""
    mapped = np.array([np.atleast_1d(f(x)) for x in mu.points], dtype=float)
    return EmpiricalMeasure(mapped, mu.weights)


def integrate(mu: EmpiricalMeasure, phi: Callable[[np.ndarray], object]):
    values = np.array([np.asarray(phi(x), dtype=float) for x in mu.points])
    return np.tensordot(mu.weights, values, axes=(0, 0))


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    return mu.weights @ mu.points


def variance(mu: EmpiricalMeasure) -> float:
    """Half the weighted mean squared deviation from the barycenter."""
    dev = mu.points - mean(mu)
    return 0.5 * float(mu.weights @ np.sum(dev ** 2, axis=1))


def support_radius(mu: EmpiricalMeasure) -> float:
    live = mu.weights > 0
    return float(np.max(np.linalg.norm(mu.points[live], axis=1)))


def second_moment(mu: EmpiricalMeasure) -> float:
    return float(mu.weights @ np.sum(mu.points ** 2, axis=1))


@dataclass(frozen=True)
class DiscretePlan:
    """Coupling matrix between two particle clouds."""

    source: EmpiricalMeasure
    target: EmpiricalMeasure
    coupling: np.ndarray

    def __post_init__(self):
        c = np.array(self.coupling, dtype=float)
        if c.shape != (self.source.n, self.target.n):
            raise MeasureError(
                f"coupling shape {c.shape} does not match "
                f"({self.source.n}, {self.target.n})")
        if np.any(c < -1e-12):
            raise MeasureError("negative coupling entry")
        c = np.clip(c, 0.0, None)
        if np.max(np.abs(c.sum(axis=1) - self.source.weights)) > 1e-10:
            raise MeasureError("row sums differ from source weights")
        if np.max(np.abs(c.sum(axis=0) - self.target.weights)) > 1e-10:
            raise MeasureError("column sums differ from target weights")
        c.setflags(write=False)
        object.__setattr__(self, "coupling", c)

    @classmethod
    def from_map(cls, mu: EmpiricalMeasure, f) -> "DiscretePlan":
        """Plan ``(I x f)_# mu`` concentrated on the graph of ``f``."""
        return cls(mu, pushforward(mu, f), np.diag(mu.weights))

    @classmethod
    def product(cls, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> "DiscretePlan":
        return cls(mu, nu, np.outer(mu.weights, nu.weights))


def plan_barycenter(plan: DiscretePlan) -> np.ndarray:
    """Conditional mean of the target given each source particle.

    Rows for zero-weight source particles are undefined and returned as NaN.
    """
    w = plan.source.weights
    out = np.full((plan.source.n, plan.target.dim), np.nan)
    live = w > 0
    out[live] = (plan.coupling[live] @ plan.target.points) / w[live, None]
    return out
