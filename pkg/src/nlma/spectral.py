"""Fourier-multiplier fractional Laplacian, its resolvent and the upper barrier.

Two normalizations are in use.  The ``symbol`` convention is the multiplier
``|xi|^s`` (it tends to ``-Laplacian`` as ``s -> 2``).  The ``kernel``
convention is ``|xi|^s / C_{d,s}``, which is the singular integral

    (1/2) int (2 f(x) - f(x+y) - f(x-y)) |y|^{-d-s} dy

with the same unnormalized kernel as the Monge-Ampere operator, so that
``MA f <= -(kernel convention) f``.  The barrier is built in the kernel
convention.

Fields are split into a smooth cone model, handled by direct singular
quadrature, and a bounded remainder, handled by FFT on a padded box.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft
from scipy.interpolate import CubicSpline
from scipy.special import gamma

from .cones import sphere_quadrature
from .grid import GridFunction

ALIAS_TOL = 0.05  # bounded part at the box edge, relative to the data scale


class AliasingError(ValueError):
    """The bounded part does not decay toward the box edge."""


def kernel_constant(d: int, s: float) -> float:
    """``C_{d,s}`` with ``(-Laplacian)^{s/2} = C_{d,s} x`` the kernel integral."""
    return s * 2 ** (s - 1) * gamma((d + s) / 2) / (np.pi ** (d / 2) * gamma(1 - s / 2))


def _scale(d, s, convention):
    if convention == "symbol":
        return 1.0
    if convention == "kernel":
        return 1.0 / kernel_constant(d, s)
    raise ValueError(f"unknown convention {convention!r}; use 'symbol' or 'kernel'")


@lru_cache(maxsize=8)
def _half_sphere(d: int):
    if d == 1:
        return np.array([[1.0]]), np.array([1.0])
    if d == 2:
        n = 48
        ang = (np.arange(n) + 0.5) * np.pi / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(n, np.pi / n)
    dirs, w = sphere_quadrature(3, 1200)
    keep = dirs[:, 2] > 0
    return dirs[keep], w[keep] * (w.sum() / 2) / w[keep].sum()


def direct_frac_laplacian(fun, X: np.ndarray, s: float, rho0: float = 1.0,
                          n_rad: int = 48, chunk: int = 2048) -> np.ndarray:
    """Kernel-convention fractional Laplacian of ``fun`` at the points ``X``.

    Polar coordinates with the symmetric second difference.  On ``[0, rho0]``
    the substitution ``rho = rho0 sigma^{1/(2-s)}`` and on ``[rho0, inf)`` the
    substitution ``rho = rho0 sigma^{-1/(s-1)}`` remove the endpoint
    singularities for functions with at most linear growth.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    dirs, wd = _half_sphere(d)
    xg, wg = np.polynomial.legendre.leggauss(n_rad)
    sig = 0.5 * (xg + 1)
    wsig = 0.5 * wg
    # below 1e-3 rho0 the quotient delta/rho^2 is frozen to avoid cancellation
    r_near = np.maximum(rho0 * sig ** (1 / (2 - s)), 1e-3 * rho0)
    r_far = rho0 * sig ** (-1 / (s - 1))
    # integrand factors after substitution
    c_near = rho0 ** (2 - s) / (2 - s) * wsig / r_near ** 2
    c_far = rho0 ** (1 - s) / (s - 1) * wsig / r_far
    rr = np.concatenate([r_near, r_far])
    cc = np.concatenate([c_near, c_far])
    off = dirs[:, None, :] * rr[None, :, None]  # (k, m, d)
    out = np.empty(len(X))
    for a in range(0, len(X), chunk):
        x = X[a:a + chunk]
        f0 = fun(x)
        fp = fun(x[:, None, None, :] + off[None])
        fm = fun(x[:, None, None, :] - off[None])
        delta = 2 * f0[:, None, None] - fp - fm
        out[a:a + chunk] = np.einsum("nkm,k,m->n", delta, wd, cc)
    return out


def model_frac_laplacian(cone, X: np.ndarray, s: float) -> np.ndarray:
    """Kernel-convention fractional Laplacian of ``cone.smooth`` at ``X``.

    Isotropic quadratic cones give a radial field (the linear part is
    annihilated), tabulated on a radial grid and interpolated.
    """
    X = np.atleast_2d(X)
    M = getattr(cone, "M", None)
    if M is not None and X.shape[1] > 1 and np.allclose(M, M[0, 0] * np.eye(len(M))):
        r = np.linalg.norm(X, axis=1)
        rad = np.concatenate([[0.0], np.geomspace(1e-3, max(r.max(), 1e-3) * 1.001, 800)])
        pts = np.zeros((len(rad), X.shape[1]))
        pts[:, 0] = rad
        prof = direct_frac_laplacian(cone.smooth, pts, s, n_rad=64)
        return CubicSpline(rad, prof)(r)
    return direct_frac_laplacian(cone.smooth, X, s)


@dataclass(frozen=True)
class PaddedBox:
    """Periodic grid of ``N`` points per axis containing the box nodes at ``m..m+n-1``."""

    n: int
    N: int
    m: int
    h: float
    L: float
    d: int

    @classmethod
    def for_grid(cls, f: GridFunction, pad: float = 2.0) -> "PaddedBox":
        if pad < 1:
            raise ValueError("padding factor must be at least 1")
        # a whole number of box periods keeps box-periodic modes exact
        N = int(np.ceil(pad)) * (f.n - 1)
        return cls(f.n, N, (N - f.n + 1) // 2, f.h, f.L, f.dim)

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * (np.arange(self.N) - self.m)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def crop(self, arr: np.ndarray) -> np.ndarray:
        return arr[tuple(slice(self.m, self.m + self.n) for _ in range(self.d))]

    def embed(self, vals: np.ndarray) -> np.ndarray:
        out = np.zeros((self.N,) * self.d)
        out[tuple(slice(self.m, self.m + self.n) for _ in range(self.d))] = vals
        return out

    def symbol(self) -> np.ndarray:
        """``|xi|`` on the FFT grid."""
        k = 2 * np.pi * fft.fftfreq(self.N, self.h)
        mesh = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.sqrt(sum(g * g for g in mesh))


def apply_multiplier(arr: np.ndarray, mult: np.ndarray) -> np.ndarray:
    return fft.ifftn(fft.fftn(arr) * mult).real


def _band_residual(vals: np.ndarray) -> float:
    band = np.zeros(vals.shape, dtype=bool)
    for k in range(vals.ndim):
        sl = [slice(None)] * vals.ndim
        sl[k] = slice(0, 1)
        band[tuple(sl)] = True
        sl[k] = slice(-1, None)
        band[tuple(sl)] = True
    return float(np.abs(vals[band]).max())


def _split(f: GridFunction):
    """Cone model (or None), the constant offset, and the bounded part."""
    if f.cone is None:
        return None, 0.0, f.values
    pts = f.points
    rest = f.values.ravel() - f.cone.smooth(pts)
    band = f.boundary_mask().ravel()
    off = float(np.mean(rest[band]))
    return f.cone, off, (rest - off).reshape(f.shape)


def _padded_bounded(f: GridFunction, box: PaddedBox, model, off, rest, alias_tol):
    """Bounded part on the padded grid: exact where possible, else zero-extended."""
    if f.exact is not None:
        P = box.points()
        vals = f.exact(P)
        if model is not None:
            vals = vals - model.smooth(P) - off
        return vals.reshape((box.N,) * box.d), 0.0
    resid = _band_residual(rest)
    if resid > alias_tol * f.scale:
        raise AliasingError(f"bounded part is {resid:.3g} on the boundary band "
                            f"(limit {alias_tol * f.scale:.3g}); enlarge the box")
    return box.embed(rest), resid


def frac_laplacian(f: GridFunction, s: float, convention: str = "symbol", pad: float = 2.0,
                   alias_tol: float = ALIAS_TOL) -> GridFunction:
    """``(-Laplacian)^{s/2} f`` on the box nodes.

    Nonnegative at strict minima.  Raises ``AliasingError`` when the bounded
    part is not small on the boundary band and no exact evaluator exists.
    """
    if not 0 < s < 2:
        raise ValueError(f"order s must lie in (0, 2), got {s}")
    d = f.dim
    sc = _scale(d, s, convention)
    box = PaddedBox.for_grid(f, pad)
    model, off, rest = _split(f)
    g, resid = _padded_bounded(f, box, model, off, rest, alias_tol)
    out = box.crop(apply_multiplier(g, box.symbol() ** s)) * sc
    if model is not None:
        direct = model_frac_laplacian(model, f.points, s).reshape(f.shape)
        out = out + direct * sc * kernel_constant(d, s)
    return GridFunction(out, f.L, f.h, growth=0, label=f"fraclap({f.label})",
                        meta={"convention": convention, "boundary_residual": resid})


def resolvent_apply(g: GridFunction, s: float, convention: str = "symbol", pad: float = 2.0,
                    alias_tol: float = ALIAS_TOL) -> GridFunction:
    """``(I + (-Laplacian)^{s/2})^{-1} g`` on the padded periodic box."""
    if not 0 < s < 2:
        raise ValueError(f"order s must lie in (0, 2), got {s}")
    box = PaddedBox.for_grid(g, pad)
    if g.exact is not None:
        arr, resid = g.exact(box.points()).reshape((box.N,) * box.d), 0.0
    else:
        resid = _band_residual(g.values)
        if resid > alias_tol * g.scale:
            raise AliasingError(f"input is {resid:.3g} on the boundary band "
                                f"(limit {alias_tol * g.scale:.3g}); enlarge the box")
        arr = box.embed(g.values)
    mult = 1.0 / (1.0 + _scale(g.dim, s, convention) * box.symbol() ** s)
    out = box.crop(apply_multiplier(arr, mult))
    return GridFunction(out, g.L, g.h, growth=0, label=f"resolvent({g.label})",
                        meta={"convention": convention, "boundary_residual": resid})


def _kernel_fraclap_padded(phi: GridFunction, s: float, box: PaddedBox) -> np.ndarray:
    """Kernel-convention fractional Laplacian of ``phi`` on every padded node."""
    model, off, rest = _split(phi)
    g, _ = _padded_bounded(phi, box, model, off, rest, np.inf)
    out = apply_multiplier(g, box.symbol() ** s) / kernel_constant(phi.dim, s)
    if model is not None:
        out += model_frac_laplacian(model, box.points(), s).reshape(out.shape)
    return out


def fit_decay(w: GridFunction, outer: float = 0.5) -> tuple[float, float]:
    """Least-squares fit ``|w| ~ C (1+|x|)^e`` over nodes with ``|x|_inf >= outer L``."""
    P = w.points
    r = np.linalg.norm(P, axis=1)
    sel = (np.abs(P).max(axis=1) >= outer * w.L) & (np.abs(w.values.ravel()) > 0)
    if sel.sum() < 3:
        raise ValueError("not enough nonzero nodes in the outer half to fit a decay")
    e, logC = np.polyfit(np.log1p(r[sel]), np.log(np.abs(w.values.ravel()[sel])), 1)
    return float(np.exp(logC)), float(e)


def build_upper_barrier(phi: GridFunction, s: float, pad: float = 2.0,
                        exponent_tol: float = 0.15) -> GridFunction:
    """``w = -(I + A)^{-1} A phi`` with ``A`` in the kernel convention.

    ``phi + w`` then satisfies ``-A(phi + w) = w``, so it is a supersolution.
    Metadata carry the fitted ``(C, exponent)`` of ``|w| ~ C (1+|x|)^exponent``.
    """
    if phi.cone is None:
        raise ValueError("barrier needs a cone-asymptotic phi")
    if not 1 < s < 2:
        raise ValueError(f"order s must satisfy 1 < s < 2, got {s}")
    box = PaddedBox.for_grid(phi, pad)
    Aphi = _kernel_fraclap_padded(phi, s, box)
    mult = 1.0 / (1.0 + box.symbol() ** s / kernel_constant(phi.dim, s))
    wv = -box.crop(apply_multiplier(Aphi, mult))
    w = GridFunction(wv, phi.L, phi.h, growth=0, label=f"barrier({phi.label})")
    C, e = fit_decay(w)
    if abs(e - (1 - s)) > exponent_tol:
        raise ValueError(f"barrier decay exponent {e:.3f} deviates from 1-s={1 - s:.3f} "
                         f"by more than {exponent_tol}; enlarge the box")
    w.meta.update({"tail": (C, e), "s": s, "convention": "kernel"})
    return w
