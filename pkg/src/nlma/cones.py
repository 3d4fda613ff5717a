"""Asymptotic cone models.

A cone model is a positively homogeneous function ``Phi`` of degree one that
describes a grid function beyond the computational box.  Sublevel sets of
``Phi(y) - b.y`` are star shaped around the origin, so their volumes and their
overlap with the box reduce to integrals over the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma


def unit_ball_volume(d: int) -> float:
    return float(np.pi ** (d / 2) / gamma(d / 2 + 1))


@lru_cache(maxsize=None)
def sphere_quadrature(d: int, n: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Directions and weights integrating functions over the unit sphere.

    For ``d == 1`` the "sphere" is the pair ``{-1, +1}`` with unit weights, so
    that ``(1/d) * sum(w * rho**d)`` is the length of a star shaped interval.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if d == 2:
        n = n or 1440
        ang = (np.arange(n) + 0.5) * (2 * np.pi / n)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return dirs, np.full(n, 2 * np.pi / n)
    if d == 3:
        n = n or 4000
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5 ** 0.5) * k
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return dirs, np.full(n, 4 * np.pi / n)
    raise ValueError(f"dimension {d} not supported (1 <= d <= 3)")


class ConeModel:
    """Base class; subclasses define ``__call__`` and the file tokens."""

    dim: int
    kind: str = "cone"
    convex: bool = True

    def __call__(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tokens(self) -> list[str]:
        raise NotImplementedError

    def smooth(self, y: np.ndarray) -> np.ndarray:
        """A smooth function differing from ``Phi`` by a bounded amount."""
        raise NotImplementedError

    def slack(self, b, dirs: np.ndarray | None = None) -> np.ndarray:
        """``Phi(theta) - b.theta`` on the sphere quadrature directions."""
        if dirs is None:
            dirs, _ = sphere_quadrature(self.dim)
        return self(dirs) - dirs @ np.asarray(b, dtype=float).reshape(self.dim)

    def admissible(self, b, tol: float = 1e-9) -> bool:
        """True when the plane with slope ``b`` stays below the cone at infinity."""
        return bool(np.min(self.slack(b)) >= -tol)

    def interior(self, b, tol: float = 1e-9) -> bool:
        return bool(np.min(self.slack(b)) > tol)

    def unit_volume(self, b) -> float:
        """Volume of ``{y : Phi(y) - b.y < 1}``; ``inf`` off the interior."""
        dirs, w = sphere_quadrature(self.dim)
        sl = self.slack(b, dirs)
        if np.min(sl) <= 1e-12:
            return np.inf
        return float(np.sum(w * sl ** (-self.dim)) / self.dim)


@dataclass(frozen=True, eq=False)
class QuadraticCone(ConeModel):
    """``Phi(y) = sign * sqrt(y^T M y) + p.y`` with ``M`` positive definite."""

    M: np.ndarray
    p: np.ndarray
    sign: float = 1.0
    kind: str = "quadratic"

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        d = M.shape[0]
        if M.shape != (d, d) or not np.allclose(M, M.T, rtol=0, atol=1e-12 * np.abs(M).max()):
            raise ValueError("cone matrix must be square and symmetric")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise ValueError("cone matrix must be positive definite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(d))

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    @property
    def convex(self) -> bool:
        return self.sign > 0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        q = np.einsum("...i,ij,...j->...", y, self.M, y)
        return self.sign * np.sqrt(np.maximum(q, 0.0)) + y @ self.p

    def smooth(self, y):
        y = np.asarray(y, dtype=float)
        q = np.einsum("...i,ij,...j->...", y, self.M, y)
        return self.sign * np.sqrt(1.0 + q) + y @ self.p

    def unit_volume(self, b) -> float:
        if self.sign < 0:
            return np.inf
        d = self.dim
        c = np.asarray(b, dtype=float).reshape(d) - self.p
        Minv = np.linalg.inv(self.M)
        beta2 = float(c @ Minv @ c)
        if beta2 >= 1 - 1e-14:
            return np.inf
        return unit_ball_volume(d) * (1 - beta2) ** (-(d + 1) / 2) / np.sqrt(np.linalg.det(self.M))

    def tokens(self):
        vals = [self.sign, *self.M.ravel(), *self.p]
        return ["quadratic", *(f"{v:.17g}" for v in vals)]


@dataclass(frozen=True, eq=False)
class PolyhedralCone(ConeModel):
    """``Phi(y) = max_i P_i . y``."""

    P: np.ndarray
    kind: str = "polyhedral"

    def __post_init__(self):
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, dtype=float)))

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.max(y @ self.P.T, axis=-1)

    def smooth(self, y):
        lin = np.asarray(y, dtype=float) @ self.P.T
        top = lin.max(axis=-1, keepdims=True)
        return (top + np.log(np.exp(lin - top).sum(axis=-1, keepdims=True)))[..., 0]

    def unit_volume(self, b) -> float:
        if self.dim == 1:
            b = float(np.ravel(b)[0])
            hi, lo = self.P.max(), self.P.min()
            tol = 1e-12 * max(1.0, abs(hi), abs(lo))
            if not lo + tol < b < hi - tol:
                return np.inf
            return 1 / (hi - b) + 1 / (b - lo)
        return super().unit_volume(b)

    def tokens(self):
        return ["polyhedral", str(self.P.shape[0]), *(f"{v:.17g}" for v in self.P.ravel())]


@dataclass(frozen=True, eq=False)
class LinearCone(ConeModel):
    """Degenerate cone of an affine function: every sublevel set is unbounded."""

    p: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    def __call__(self, y):
        return np.asarray(y, dtype=float) @ self.p

    def smooth(self, y):
        return self(y)

    def unit_volume(self, b) -> float:
        return np.inf

    def tokens(self):
        return ["linear", *(f"{v:.17g}" for v in self.p)]


def cone_from_tokens(tokens: list[str], d: int) -> ConeModel:
    """Inverse of ``ConeModel.tokens``; raises ``ValueError`` on malformed input."""
    name, vals = tokens[0], tokens[1:]
    nums = [float(v) for v in vals]
    if name == "quadratic":
        if len(nums) != 1 + d * d + d:
            raise ValueError(f"quadratic cone needs {1 + d * d + d} numbers, got {len(nums)}")
        return QuadraticCone(np.reshape(nums[1:1 + d * d], (d, d)), nums[1 + d * d:], sign=nums[0])
    if name == "polyhedral":
        k = int(nums[0])
        if len(nums) != 1 + k * d:
            raise ValueError(f"polyhedral cone needs {1 + k * d} numbers, got {len(nums)}")
        return PolyhedralCone(np.reshape(nums[1:], (k, d)))
    if name == "linear":
        if len(nums) != d:
            raise ValueError(f"linear cone needs {d} numbers, got {len(nums)}")
        return LinearCone(nums)
    raise ValueError(f"unknown cone model {name!r}")
