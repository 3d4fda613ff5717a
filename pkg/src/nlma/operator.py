"""Evaluation of the nonlocal Monge-Ampere operator and its kernel variants.

Every variant is an infimum of ``int (u(x+y) - u(x) - b.y) K(y) dy`` over
kernels ``K`` with a prescribed distribution.  The infimum pairs the largest
kernel values with the smallest increments, so with ``k(m)`` the decreasing
rearrangement of the kernel (as a function of the volume ``m``) the value is

    int_0^inf G(mu_b(t)) dt,    G(M) = int_M^inf k(m) dm.

For the unnormalized kernel ``|y|^{-d-s}`` this gives ``G(M) = C M^{-s/d}``
with ``C = (d/s) |B_1|^{1+s/d}``.  Each variant below supplies its ``G`` and
an antiderivative ``Gint`` so that linear stretches of ``mu`` integrate
exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, ndimage

from .cones import sphere_quadrature, unit_ball_volume
from .grid import GridFunction
from .hull import cone_like, increment, subdifferential_at, supporting_plane_check
from .profile import RadialProfile, SectionProfile, radial_rearrangement, section_profile


@dataclass(frozen=True)
class OperatorParams:
    """Order ``s`` in (1, 2) and dimension ``d``; kernel ``|y|^{-d-s}`` unnormalized."""

    s: float
    d: int

    def __post_init__(self):
        if not 1 < self.s < 2:
            raise ValueError(f"order s must satisfy 1 < s < 2, got {self.s}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")

    @property
    def ball(self) -> float:
        return unit_ball_volume(self.d)

    @property
    def c_ma(self) -> float:
        return self.d / self.s * self.ball ** (1 + self.s / self.d)

    @property
    def p(self) -> float:
        return self.s / self.d


# kernel variants --------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """``kind`` is one of ``full``, ``nearpinned``, ``capped``, ``localized``."""

    kind: str = "full"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("full", "nearpinned", "capped", "localized"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "full":
            if self.param is not None:
                raise ValueError("full kernel takes no parameter")
        elif self.param is None or not self.param > 0 or not math.isfinite(self.param):
            raise ValueError(f"{self.kind} kernel needs a positive finite parameter")

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """``full``, ``nearpinned:eps=0.1``, ``capped:n=1e4``, ``localized:R=1``."""
        name, _, rest = text.partition(":")
        key = {"nearpinned": "eps", "capped": "n", "localized": "R"}.get(name)
        if name == "full" and not rest:
            return cls("full")
        if key is None:
            raise ValueError(f"unknown kernel {name!r}")
        k, _, v = rest.partition("=")
        if k != key:
            raise ValueError(f"kernel {name} expects '{key}=<value>', got {rest!r}")
        try:
            val = float(v)
        except ValueError:
            raise ValueError(f"bad kernel parameter {v!r}") from None
        return cls(name, val)

    def __str__(self):
        if self.kind == "full":
            return "full"
        key = {"nearpinned": "eps", "capped": "n", "localized": "R"}[self.kind]
        return f"{self.kind}:{key}={self.param:g}"


class _TailFn:
    """``G`` and an antiderivative for one kernel variant."""

    def __init__(self, params: OperatorParams, kernel: KernelSpec):
        self.C = params.c_ma
        self.p = params.p
        self.kind = kernel.kind
        bd = params.ball
        self.m = 0.0
        if kernel.kind == "capped":
            self.m = bd * kernel.param ** (-params.d / (params.d + params.s))
            self.n = kernel.param
        elif kernel.kind == "localized":
            self.m = bd * kernel.param ** params.d
        elif kernel.kind == "nearpinned":
            self.m = bd * kernel.param ** params.d

    def _pow(self, M):
        return self.C * M ** (1 - self.p) / (1 - self.p)

    def G(self, M):
        M = np.asarray(M, dtype=float)
        C, p, m = self.C, self.p, self.m
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if self.kind in ("full", "nearpinned"):
                out = C * M ** (-p)
            elif self.kind == "capped":
                out = np.where(M < m, self.n * (m - M) + C * m ** (-p), C * M ** (-p))
            else:
                out = np.where(M < m, C * (M ** (-p) - m ** (-p)), 0.0)
        return np.where(np.isinf(M), 0.0, out)

    def Gint(self, M):
        M = np.asarray(M, dtype=float)
        C, p, m = self.C, self.p, self.m
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if self.kind in ("full", "nearpinned"):
                return self._pow(M)
            if self.kind == "capped":
                below = self.n * (m * M - M ** 2 / 2) + C * m ** (-p) * M
                at = self.n * m ** 2 / 2 + C * m ** (1 - p)
                return np.where(M < m, below, at + self._pow(M) - self._pow(m))
            below = self._pow(M) - C * m ** (-p) * M
            return np.where(M < m, below, self._pow(m) - C * m ** (1 - p))

    def segments(self, t, M) -> float:
        """``int G(M(t)) dt`` with ``M`` linear between the tabulated points."""
        if len(t) < 2:
            return 0.0
        dt = np.diff(t)
        dM = np.diff(M)
        mid = self.G(0.5 * (M[1:] + M[:-1])) * dt
        small = np.abs(dM) <= 1e-7 * np.abs(M[1:])
        with np.errstate(divide="ignore", invalid="ignore"):
            exact = (self.Gint(M[1:]) - self.Gint(M[:-1])) / dM * dt
        return float(np.sum(np.where(small, mid, exact)))

    def head(self, c_q, t0, d, shift) -> float:
        """``int_0^t0 G(c_q t^{d/2} + shift) dt``."""
        if self.kind in ("full", "localized") and shift == 0:
            val = self.C * c_q ** (-self.p) * t0 ** (1 - self.p * d / 2) / (1 - self.p * d / 2)
            if self.kind == "localized":
                val -= self.C * self.m ** (-self.p) * t0
            return val
        if self.kind == "capped" and shift == 0:
            # exact: linear part of G below the cap level, power law above
            C, p, m, n = self.C, self.p, self.m, self.n
            t1 = min((m / c_q) ** (2 / d), t0)
            val = (n * m + C * m ** (-p)) * t1 - n * c_q * t1 ** (1 + d / 2) / (1 + d / 2)
            e = 1 - p * d / 2
            return val + C * c_q ** (-p) * (t0 ** e - t1 ** e) / e
        tt = np.linspace(0, t0, 65)
        return float(integrate.simpson(self.G(c_q * tt ** (d / 2) + shift), x=tt))

    def tail(self, V, kappa, T, d, s) -> float:
        """``int_T^inf G(V (t-kappa)^d) dt`` once ``V (T-kappa)^d >= m``."""
        if self.kind == "localized":
            return 0.0
        return self.C * V ** (-self.p) * (T - kappa) ** (1 - s) / (s - 1)


# evaluation -----------------------------------------------------------------

@dataclass(frozen=True)
class MAValue:
    """An extended-real operator value with the slope that attained it."""

    value: float
    b: np.ndarray | None = None
    flags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def near_field(f: GridFunction, idx, b, H, eps: float, s: float, t: np.ndarray,
               n_rad: int = 48) -> tuple[float, np.ndarray]:
    """Exact-kernel part of the near-pinned variant on ``B_eps(x)``.

    Returns ``int_{B_eps} (u(x+y) - u(x) - b.y) |y|^{-d-s} dy`` and the
    measures ``|{y in B_eps : increment < t}|``.  Both use the same cubic
    spline of the data along rays, where a convex increment is nondecreasing.
    The quadratic part of the first integral is done in closed form.
    """
    d, h = f.dim, f.h
    idx = np.asarray(idx)
    pad = int(np.ceil(eps / h)) + 4
    if np.any(idx - pad < 0) or np.any(idx + pad > f.n - 1):
        raise ValueError("near-field ball leaves the grid")
    sl = tuple(slice(i - pad, i + pad + 1) for i in idx)
    coef = ndimage.spline_filter(f.values[sl], order=3, mode="nearest")
    dirs, wts = sphere_quadrature(d, 256 if d == 2 else 600 if d == 3 else 0)
    u0 = f.values[tuple(idx)]

    def incr(rr):
        Y = dirs[:, None, :] * rr[None, :, None]
        pos = Y / h + pad
        vals = ndimage.map_coordinates(coef, pos.reshape(-1, d).T, order=3,
                                       mode="nearest", prefilter=False)
        return vals.reshape(len(dirs), len(rr)) - u0 - Y @ b

    bd = unit_ball_volume(d)
    val = bd * np.trace(H) * eps ** (2 - s) / (2 * (2 - s))
    xg, wg = np.polynomial.legendre.leggauss(n_rad)
    rr = 0.5 * eps * (xg + 1)
    Y = dirs[:, None, :] * rr[None, :, None]
    rem = incr(rr) - 0.5 * np.einsum("kri,ij,krj->kr", Y, H, Y)
    val += float(wts @ (rem * rr ** (-1 - s)) @ (0.5 * eps * wg))
    # ray profiles for the inner measure
    rf = np.linspace(0, eps, 4 * int(np.ceil(eps / h)) + 33)
    prof = np.maximum.accumulate(np.maximum(incr(rf), 0.0), axis=1)
    rho = np.empty((len(t), len(dirs)))
    for k in range(len(dirs)):
        rho[:, k] = np.interp(t, prof[k], rf, right=eps)
    mu_in = (wts * rho ** d).sum(axis=1) / d
    return val, mu_in


def value_from_profile(prof: SectionProfile, params: OperatorParams,
                       kernel: KernelSpec = KernelSpec(), near: float = 0.0,
                       mu_in: np.ndarray | None = None) -> float:
    """Kernel-variant value for one slope, given its profile.

    ``near`` is the exact near-field integral for ``nearpinned`` and
    ``mu_in`` the measure of the sections inside ``B_eps`` at the profile
    levels; the remaining kernel mass is paired with the measure outside.
    """
    d, s = params.d, params.s
    G = _TailFn(params, kernel)
    if prof.all_infinite:
        return near if kernel.kind == "nearpinned" else 0.0
    t, mu = prof.t, prof.mu
    shift = 0.0
    M = mu
    if kernel.kind == "nearpinned":
        if prof.H is None or mu_in is None:
            raise ValueError("nearpinned kernel needs a local quadratic model")
        M = np.maximum(mu - mu_in, 0.0) + G.m
        shift = G.m
    # head
    t0 = float(t[0])
    if prof.c_q is not None:
        total = G.head(prof.c_q, t0, d, shift if kernel.kind == "nearpinned" else 0.0)
    else:
        if M[0] <= 0 and kernel.kind in ("full", "localized"):
            return np.inf
        total = float(G.G(M[0])) * t0
    total += G.segments(t, M)
    # beyond the table
    if np.isfinite(prof.t_inf):
        return total + near
    if "box-truncated" in prof.flags:
        if kernel.kind == "localized" and mu[-1] >= G.m:
            return total
        raise ValueError("section leaves the box before the kernel mass is exhausted; "
                         "enlarge the box or use a localized kernel")
    T = prof.t_far
    need = G.m
    if prof.V * (T - prof.kappa) ** d < need and G.m > 0:
        # extend along the cone law until the kernel threshold is passed
        T_end = prof.kappa + (4 * G.m / prof.V) ** (1 / d)
        tt = np.geomspace(T - prof.kappa, T_end - prof.kappa, 200) + prof.kappa
        MM = prof.V * (tt - prof.kappa) ** d
        total += G.segments(tt, MM)
        T = T_end
    return total + G.tail(prof.V, prof.kappa, T, d, s) + near


def _check_growth(f: GridFunction, params: OperatorParams, kernel: KernelSpec):
    if kernel.kind != "localized" and f.growth >= params.s:
        raise ValueError(f"growth exponent {f.growth} is not below s={params.s}; "
                         "the tail integral diverges (use a localized kernel)")


def eval_ma(f: GridFunction, x, params: OperatorParams, kernel: KernelSpec = KernelSpec(),
            b=None, refine: int = 1) -> MAValue:
    """Operator value at node ``x``; the sup over the subdifferential is sampled.

    Returns ``-inf`` when no supporting plane exists, ``+inf`` when the
    increment grows linearly (a kink) under the unbounded kernels.
    """
    if params.d != f.dim:
        raise ValueError("operator dimension does not match the grid")
    _check_growth(f, params, kernel)
    idx = f.index_of(x)
    check = supporting_plane_check(f, idx)
    if not check:
        return MAValue(-np.inf, None, check.flags, {"witness": check.witness})
    if b is not None:
        slopes = [np.asarray(b, dtype=float).reshape(f.dim)]
        flags: tuple[str, ...] = ()
    elif f.convex:
        sd = subdifferential_at(f, idx)
        if sd.empty:
            return MAValue(-np.inf, None, sd.flags)
        slopes = list(sd.samples(refine))
        flags = sd.flags
    else:
        slopes = [f.gradient[idx].copy()]
        flags = ("nonconvex",)
    best = MAValue(-np.inf)
    for bb in slopes:
        v = _value_at_slope(f, idx, bb, params, kernel)
        if v.value > best.value or best.b is None:
            best = MAValue(v.value, bb, tuple(dict.fromkeys(flags + v.flags)), v.meta)
        if best.value == np.inf:
            break
    return best


def _value_at_slope(f, idx, b, params, kernel) -> MAValue:
    unbounded = kernel.kind in ("full", "nearpinned", "localized")
    if cone_like(f, idx, b):
        if unbounded:
            return MAValue(np.inf, b, ("cone-vertex",))
    if getattr(f.cone, "kind", "") == "linear" and np.allclose(b, f.cone.p, rtol=0, atol=1e-9):
        # affine data: every section is the whole space up to roundoff
        if np.abs(increment(f, idx, b)).max() <= 1e-12 * f.scale:
            return MAValue(0.0, b, ("affine",))
    prof = section_profile(f, idx, b)
    near, mu_in = 0.0, None
    if kernel.kind == "nearpinned" and prof.H is not None:
        near, mu_in = near_field(f, idx, b, prof.H, kernel.param, params.s, prof.t)
    val = value_from_profile(prof, params, kernel, near, mu_in)
    return MAValue(val, b, prof.flags, {"profile": prof})


# independent oracle -----------------------------------------------------------

def rearranged_integral(rad: RadialProfile, s: float, pieces: int = 24) -> float:
    """``d |B_1| int_0^inf v(r) r^{-1-s} dr`` by adaptive quadrature.

    ``v ~ a r^2`` at the origin and ``v ~ kappa + beta r`` at infinity are
    integrated in closed form; the tabulated middle goes to ``quad`` in
    logarithmic pieces.
    """
    d = rad.dim
    pref = d * unit_ball_volume(d)
    if rad.zero:
        return 0.0
    r0, r1 = float(rad.r[0]), float(rad.r[-1])
    total = 0.0
    if rad.a is not None:
        total += rad.a * r0 ** (2 - s) / (2 - s)
    elif r0 > 0:
        # v <= v(r0) there; below the first tabulated level it vanishes
        pass
    if np.isfinite(rad.beta):
        total += rad.kappa * r1 ** (-s) / s + rad.beta * r1 ** (1 - s) / (s - 1)
    else:
        total += rad.v_max * r1 ** (-s) / s
    lo = max(r0, 1e-300)
    edges = np.geomspace(lo, r1, pieces + 1) if r1 > lo else np.array([lo, r1])

    def integrand(r):
        return float(rad(np.array([r]))[0]) * r ** (-1 - s)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, c in zip(edges[:-1], edges[1:]):
            inner = rad.r[(rad.r > a) & (rad.r < c)]
            pts = inner[:: max(1, len(inner) // 40)] if len(inner) else None
            total += integrate.quad(integrand, a, c, points=pts, limit=400,
                                    epsrel=1e-10, epsabs=0)[0]
    return pref * total


def eval_ma_oracle(f: GridFunction, x, params: OperatorParams, b=None) -> float:
    """Full-kernel value through the radial rearrangement (cross-check only)."""
    _check_growth(f, params, KernelSpec())
    idx = f.index_of(x)
    if not supporting_plane_check(f, idx):
        return -np.inf
    if b is None:
        sd = subdifferential_at(f, idx)
        if not sd.singleton:
            raise ValueError("oracle needs a singleton subdifferential or an explicit slope")
        b = sd.vertices[0]
    b = np.asarray(b, dtype=float).reshape(f.dim)
    if cone_like(f, idx, b):
        return np.inf
    prof = section_profile(f, idx, b)
    return rearranged_integral(radial_rearrangement(prof), params.s)


# s -> 2 study -----------------------------------------------------------------

def scaled_limit_study(f: GridFunction, x, s_list, b=None) -> list[tuple[float, float]]:
    """``(s, (2-s) MA_s u(x))`` for each ``s``; one profile serves every order."""
    idx = f.index_of(x)
    if not supporting_plane_check(f, idx):
        return [(float(s), -np.inf) for s in s_list]
    if b is None:
        sd = subdifferential_at(f, idx)
        b = sd.vertices[0] if sd.singleton else None
    if b is None or cone_like(f, idx, b):
        return [(float(s), np.inf) for s in s_list]
    prof = section_profile(f, idx, b)
    out = []
    for s in s_list:
        params = OperatorParams(float(s), f.dim)
        _check_growth(f, params, KernelSpec())
        out.append((float(s), (2 - s) * value_from_profile(prof, params)))
    return out
