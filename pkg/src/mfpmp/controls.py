"""Admissible control fields and piecewise-constant control schedules.

Every control field is linear in its parameters,
``omega(x) = sum_p theta_p Phi_p(x)``, over a fixed family of C^1 feature
fields. The affine family uses the features ``e_a`` and ``x_b e_a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ControlError(ValueError):
    pass


class ControlBasis:
    """Finite family of C^1 feature fields R^d -> R^d."""

    name = "basis"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def features(self, x: np.ndarray) -> np.ndarray:
        """Feature values, shape ``(n, P, d)``."""
        raise NotImplementedError

    def feature_jacobians(self, x: np.ndarray) -> np.ndarray:
        """Spatial Jacobians of each feature, shape ``(n, P, d, d)``."""
        raise NotImplementedError

    def apply(self, theta, x):
        """``omega(x)`` for parameters ``theta``, shape ``(n, d)``."""
        return np.einsum("p,npd->nd", theta, self.features(x))

    def apply_jacobian(self, theta, x):
        return np.einsum("p,npij->nij", theta, self.feature_jacobians(x))

    def pair(self, x, vectors):
        """``sum_n <vectors_n, Phi_p(x_n)>`` for every parameter p."""
        return np.einsum("nd,npd->p", vectors, self.features(x))

    def c1_norm(self, theta: np.ndarray, radius: float) -> float:
        """Bound on ``sup_{|x|<=radius} |omega(x)| + ||D omega(x)||``.

        The default samples the ball on a fixed point set.
        """
        pts = _ball_samples(self.dim, radius)
        val = np.einsum("p,npd->nd", theta, self.features(pts))
        jac = np.einsum("p,npij->nij", theta, self.feature_jacobians(pts))
        return float(np.max(np.linalg.norm(val, axis=1)
                            + np.linalg.norm(jac, ord=2, axis=(1, 2))))

    def spec(self) -> dict:
        return {"basis": self.name}

    def __eq__(self, other):
        return type(self) is type(other) and self.spec() == other.spec() \
            and self.dim == other.dim

    def __hash__(self):
        return hash((type(self).__name__, self.dim))


def _ball_samples(dim: int, radius: float, n: int = 257) -> np.ndarray:
    rng = np.random.default_rng(12345)
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    pts = g * r[:, None]
    # include the boundary sphere along the axes
    axes = np.vstack([np.eye(dim), -np.eye(dim)]) * radius
    return np.vstack([pts, axes, np.zeros((1, dim))])


class ConstantBasis(ControlBasis):
    """Spatially constant controls ``omega(x) = b``."""

    name = "constant"

    @property
    def n_params(self):
        return self.dim

    def features(self, x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(self.dim), (x.shape[0], self.dim, self.dim)).copy()

    def feature_jacobians(self, x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], self.dim, self.dim, self.dim))

    def apply(self, theta, x):
        return np.broadcast_to(theta, np.shape(x)).copy()

    def apply_jacobian(self, theta, x):
        return np.zeros((x.shape[0], self.dim, self.dim))

    def pair(self, x, vectors):
        return vectors.sum(axis=0)

    def c1_norm(self, theta, radius):
        return float(np.linalg.norm(theta))


class AffineBasis(ControlBasis):
    """``omega(x) = A x + b``; parameters are ``A.ravel()`` then ``b``."""

    name = "affine"

    @property
    def n_params(self):
        return self.dim * self.dim + self.dim

    def split(self, theta):
        d = self.dim
        return theta[: d * d].reshape(d, d), theta[d * d:]

    def join(self, A, b):
        return np.concatenate([np.asarray(A, float).ravel(), np.asarray(b, float).ravel()])

    def features(self, x):
        x = np.atleast_2d(x)
        n, d = x.shape
        out = np.zeros((n, self.n_params, d))
        for a in range(d):
            for c in range(d):
                out[:, a * d + c, a] = x[:, c]
        out[:, d * d:, :] = np.eye(d)
        return out

    def feature_jacobians(self, x):
        x = np.atleast_2d(x)
        n, d = x.shape
        out = np.zeros((n, self.n_params, d, d))
        for a in range(d):
            for c in range(d):
                out[:, a * d + c, a, c] = 1.0
        return out

    def apply(self, theta, x):
        A, b = self.split(theta)
        return x @ A.T + b

    def apply_jacobian(self, theta, x):
        A, _ = self.split(theta)
        return np.broadcast_to(A, (x.shape[0],) + A.shape).copy()

    def pair(self, x, vectors):
        return np.concatenate([(vectors.T @ x).ravel(), vectors.sum(axis=0)])

    def c1_norm(self, theta, radius):
        A, b = self.split(np.asarray(theta, float))
        a = np.linalg.norm(A, ord=2)
        return float(a * radius + np.linalg.norm(b) + a)


class RBFBasis(ControlBasis):
    """Gaussian bumps at fixed centers, one parameter per (center, axis)."""

    name = "rbf"

    def __init__(self, centers, width: float):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        super().__init__(centers.shape[1])
        if width <= 0:
            raise ControlError("rbf width must be positive")
        self.centers = centers
        self.width = float(width)

    @property
    def n_params(self):
        return self.centers.shape[0] * self.dim

    def _bumps(self, x):
        diff = x[:, None, :] - self.centers[None, :, :]
        g = np.exp(-np.sum(diff ** 2, axis=2) / self.width ** 2)
        return diff, g

    def features(self, x):
        x = np.atleast_2d(x)
        n, d = x.shape
        _, g = self._bumps(x)
        out = np.zeros((n, self.centers.shape[0], d, d))
        idx = np.arange(d)
        out[:, :, idx, idx] = g[:, :, None]
        return out.reshape(n, -1, d)

    def feature_jacobians(self, x):
        x = np.atleast_2d(x)
        n, d = x.shape
        diff, g = self._bumps(x)
        grad = (-2.0 / self.width ** 2) * g[:, :, None] * diff  # (n, m, d)
        out = np.zeros((n, self.centers.shape[0], d, d, d))
        for a in range(d):
            out[:, :, a, a, :] = grad
        return out.reshape(n, -1, d, d)

    def spec(self):
        return {"basis": self.name, "centers": self.centers.tolist(),
                "width": self.width}


def make_basis(name: str, dim: int, **params) -> ControlBasis:
    if name == "affine":
        return AffineBasis(dim)
    if name == "constant":
        return ConstantBasis(dim)
    if name == "rbf":
        return RBFBasis(params["centers"], params["width"])
    raise ControlError(f"unknown control basis {name!r}; "
                       "available: affine, constant, rbf")


@dataclass(frozen=True)
class ControlField:
    """One admissible control ``omega`` in the closed C^1 ball of radius L_U."""

    basis: ControlBasis
    theta: np.ndarray
    c1_bound: float = np.inf

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        if th.shape[0] != self.basis.n_params:
            raise ControlError(
                f"expected {self.basis.n_params} parameters, got {th.shape[0]}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def dim(self):
        return self.basis.dim

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        return self.basis.apply(self.theta, np.atleast_2d(x))

    def jacobian(self, x):
        return self.basis.apply_jacobian(self.theta, np.atleast_2d(x))

    def c1_norm(self, radius: float) -> float:
        return self.basis.c1_norm(self.theta, radius)

    def with_theta(self, theta) -> "ControlField":
        return ControlField(self.basis, theta, self.c1_bound)

    def projected(self, radius: float) -> "ControlField":
        """Scale the parameters back into the C^1 ball when needed."""
        norm = self.c1_norm(radius)
        if norm <= self.c1_bound:
            return self
        return self.with_theta(self.theta * (self.c1_bound / norm))

    def on_boundary(self, radius: float, rtol: float = 1e-6) -> bool:
        return np.isfinite(self.c1_bound) and \
            self.c1_norm(radius) >= self.c1_bound * (1.0 - rtol)


def zero_control(basis: ControlBasis, c1_bound: float = np.inf) -> ControlField:
    return ControlField(basis, np.zeros(basis.n_params), c1_bound)


def affine_control(A, b, c1_bound: float = np.inf) -> ControlField:
    b = np.atleast_1d(np.asarray(b, dtype=float))
    basis = AffineBasis(b.shape[0])
    return ControlField(basis, basis.join(np.atleast_2d(A), b), c1_bound)


def constant_control(b, c1_bound: float = np.inf) -> ControlField:
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return ControlField(ConstantBasis(b.shape[0]), b, c1_bound)


@dataclass(frozen=True)
class ControlSignal:
    """Control fields held constant on ``[t_k, t_{k+1})``."""

    time_grid: np.ndarray
    fields: Sequence[ControlField] = field(default_factory=tuple)

    def __post_init__(self):
        grid = np.array(self.time_grid, dtype=float).reshape(-1)
        if grid.shape[0] < 2:
            raise ControlError("time grid needs at least two points")
        if grid[0] != 0.0:
            raise ControlError("time grid must start at 0")
        if np.any(np.diff(grid) <= 0):
            raise ControlError("time grid must be strictly increasing")
        fields = tuple(self.fields)
        if len(fields) != grid.shape[0] - 1:
            raise ControlError(
                f"{grid.shape[0] - 1} intervals but {len(fields)} fields")
        bases = {(repr(f.basis.spec()), f.dim) for f in fields}
        if len(bases) != 1:
            raise ControlError("all fields must share one parameterisation")
        grid.setflags(write=False)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "fields", fields)

    @classmethod
    def constant(cls, omega: ControlField, T: float, n_intervals: int = 1):
        grid = np.linspace(0.0, T, n_intervals + 1)
        return cls(grid, [omega] * n_intervals)

    @classmethod
    def from_params(cls, basis, params, time_grid, c1_bound=np.inf):
        params = np.asarray(params, dtype=float)
        return cls(time_grid, [ControlField(basis, th, c1_bound) for th in params])

    @property
    def T(self) -> float:
        return float(self.time_grid[-1])

    @property
    def basis(self) -> ControlBasis:
        return self.fields[0].basis

    @property
    def c1_bound(self) -> float:
        return self.fields[0].c1_bound

    @property
    def n_intervals(self) -> int:
        return len(self.fields)

    @property
    def params(self) -> np.ndarray:
        """Parameter matrix of shape ``(K, P)``."""
        return np.array([f.theta for f in self.fields])

    def with_params(self, params) -> "ControlSignal":
        return ControlSignal.from_params(self.basis, params, self.time_grid,
                                         self.c1_bound)

    def interval_index(self, t: float, left: bool = False) -> int:
        """Interval holding ``t``; ``left=True`` picks ``(t_k, t_{k+1}]``."""
        side = "left" if left else "right"
        k = int(np.searchsorted(self.time_grid, t, side=side)) - 1
        return min(max(k, 0), self.n_intervals - 1)

    def at(self, t: float, left: bool = False) -> ControlField:
        return self.fields[self.interval_index(t, left)]

    def projected(self, radius: float) -> "ControlSignal":
        return ControlSignal(self.time_grid, [f.projected(radius) for f in self.fields])
