"""Seeded randomized property suites shared by ``nlma check`` and the tests.

Every suite draws its instances from ``numpy.random.default_rng(seed)`` and
returns a :class:`SuiteResult` with one entry per failed instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cones import QuadraticCone
from .grid import GridFunction, grid_size, smooth_cone
from .hull import convex_envelope, is_subgradient, subdifferential_at, supporting_plane_check
from .operator import KernelSpec, OperatorParams, eval_ma
from .spectral import frac_laplacian, resolvent_apply

REL_TOL = 1e-6
DEFAULT_SEED = 7


@dataclass
class SuiteResult:
    name: str
    total: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return self.total - len(self.failures)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self):
        return f"{self.name}: {self.passed}/{self.total} passed"


# random instances -------------------------------------------------------------

def _grid(d):
    return (8.0, 0.1) if d == 1 else (6.0, 0.125)


def random_cone_function(rng, d, M=None, scale=1.0, L=None, h=None) -> GridFunction:
    """Smooth cone ``scale * sqrt(a^2 + (y-c)M(y-c)) + p.y`` with random data."""
    L0, h0 = _grid(d)
    L, h = L or L0, h or h0
    if M is None:
        A = rng.normal(size=(d, d))
        M = A @ A.T + 0.5 * np.eye(d)
    a = rng.uniform(0.5, 2.0)
    c = rng.uniform(-1, 1, d)
    p = rng.uniform(-0.3, 0.3, d)
    return cone_grid(M * scale ** 2, a * scale, c, p, L, h)


def cone_grid(M, a, c, p, L, h) -> GridFunction:
    d = len(c)
    fun, cone, o_max = smooth_cone(M, a, c, p, dim=d)
    n = grid_size(L, h)
    ax = -L + h * np.arange(n)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * d), indexing="ij")], axis=1)
    return GridFunction(fun(pts).reshape((n,) * d), L, h, cone=cone, o_max=o_max, exact=fun,
                        label="smoothcone")


def _combine(u: GridFunction, v: GridFunction, alpha: float, beta: float, cone) -> GridFunction:
    vals = alpha * u.values + beta * v.values
    ex = None
    if u.exact is not None and v.exact is not None:
        fu, fv = u.exact, v.exact

        def ex(y):
            return alpha * fu(y) + beta * fv(y)
    return GridFunction(vals, u.L, u.h, cone=cone, o_max=alpha * u.o_max + beta * v.o_max,
                        exact=ex, label="combination")


def _node(rng, f: GridFunction, frac=0.4):
    k = int(frac * (f.n - 1) / 2)
    mid = (f.n - 1) // 2
    return f.coords(tuple(rng.integers(mid - k, mid + k + 1, f.dim)))


def _dim(rng, k):
    return 1 if k % 5 else 2  # one instance in five is two-dimensional


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


# structural suites of the operator ------------------------------------------

def monotonicity_suite(seed=DEFAULT_SEED, n=100) -> SuiteResult:
    """``u >= v`` with contact at ``x`` implies ``MA u(x) >= MA v(x)``."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("monotonicity", n)
    for k in range(n):
        d = _dim(rng, k)
        v = random_cone_function(rng, d)
        x = _node(rng, v)
        # nonnegative convex bump vanishing to second order at x, same cone shape
        c = rng.uniform(0.2, 1.0)
        M = v.cone.M
        fb, _, ob = smooth_cone(M * c * c, rng.uniform(0.5, 2.0) * c, x, dim=d)
        bump = GridFunction(fb(v.points).reshape(v.shape), v.L, v.h, exact=fb, o_max=ob)
        u = _combine(v, bump, 1.0, 1.0, QuadraticCone(M * (1 + c) ** 2, v.cone.p))
        s = rng.uniform(1.2, 1.9)
        P = OperatorParams(s, d)
        mu, mv = eval_ma(u, x, P).value, eval_ma(v, x, P).value
        if mu < mv - REL_TOL * max(abs(mv), 1e-8):
            res.failures.append(f"#{k} d={d} s={s:.3f} x={x.tolist()}: {mu:.8g} < {mv:.8g}")
    return res


def concavity_suite(seed=DEFAULT_SEED, n=100) -> SuiteResult:
    """``MA((u+v)/2) >= (MA u + MA v)/2``."""
    rng = np.random.default_rng(seed + 1)
    res = SuiteResult("concavity", n)
    for k in range(n):
        d = _dim(rng, k)
        u = random_cone_function(rng, d)
        if d == 1:
            v = random_cone_function(rng, d)
            # 1D cones add: slopes sqrt(M) +- p
            ku = np.sqrt(u.cone.M[0, 0])
            kv = np.sqrt(v.cone.M[0, 0])
            cone = QuadraticCone([[((ku + kv) / 2) ** 2]], (u.cone.p + v.cone.p) / 2)
        else:
            r = rng.uniform(0.5, 2.0)
            v = random_cone_function(rng, d, M=u.cone.M, scale=r)
            cone = QuadraticCone(u.cone.M * ((1 + r) / 2) ** 2, (u.cone.p + v.cone.p) / 2)
        m = _combine(u, v, 0.5, 0.5, cone)
        x = _node(rng, u)
        s = rng.uniform(1.2, 1.9)
        P = OperatorParams(s, d)
        a, b, c = eval_ma(u, x, P).value, eval_ma(v, x, P).value, eval_ma(m, x, P).value
        avg = 0.5 * (a + b)
        if c < avg - REL_TOL * max(abs(avg), 1e-8):
            res.failures.append(f"#{k} d={d} s={s:.3f} x={x.tolist()}: {c:.8g} < {avg:.8g}")
    return res


CAP_LEVELS = (1e2, 1e3, 1e4, 1e6, 1e9, 1e12)


def capped_suite(seed=DEFAULT_SEED, n=100, rate_tol=0.01) -> SuiteResult:
    """``Capped(n)`` is nondecreasing in ``n``, stays below ``Full``, and the gap
    closes at the rate ``n^{-(2-s)/(d+s)}`` of the quadratic near field."""
    rng = np.random.default_rng(seed + 2)
    res = SuiteResult("capped", n)
    caps = np.array(CAP_LEVELS)
    for k in range(n):
        d = _dim(rng, k)
        f = random_cone_function(rng, d)
        x = _node(rng, f)
        s = rng.uniform(1.2, 1.9)
        P = OperatorParams(s, d)
        full = eval_ma(f, x, P).value
        vals = np.array([eval_ma(f, x, P, KernelSpec("capped", c)).value for c in caps])
        tol = REL_TOL * max(abs(full), 1e-8)
        gaps = full - vals
        if np.any(np.diff(vals) < -tol):
            res.failures.append(f"#{k}: capped values not monotone {vals.tolist()}")
        elif np.any(gaps < -tol):
            res.failures.append(f"#{k}: capped {vals.max():.8g} above full {full:.8g}")
        else:
            rate = np.polyfit(np.log(caps[-3:]), np.log(np.maximum(gaps[-3:], 1e-300)), 1)[0]
            if abs(rate + (2 - s) / (d + s)) > rate_tol:
                res.failures.append(f"#{k}: gap rate {rate:.4f}, expected {-(2 - s) / (d + s):.4f}")
    return res


def nonnegativity_suite(seed=DEFAULT_SEED, n=50) -> SuiteResult:
    """A supporting plane implies a nonnegative value; concave data give ``-inf``."""
    rng = np.random.default_rng(seed + 3)
    res = SuiteResult("sign", n)
    for k in range(n):
        d = _dim(rng, k)
        f = random_cone_function(rng, d)
        x = _node(rng, f)
        P = OperatorParams(rng.uniform(1.2, 1.9), d)
        v = eval_ma(f, x, P).value
        neg = f.with_values(-f.values, cone=None)
        w = eval_ma(neg, x, P).value
        if not v >= 0:
            res.failures.append(f"#{k}: value {v} < 0")
        if w != -np.inf:
            res.failures.append(f"#{k}: concave data gave {w}")
    return res


# geometry and spectral suites -----------------------------------------------

def envelope_suite(seed=DEFAULT_SEED, n=30) -> SuiteResult:
    """Envelope is convex, below the data, and equal to convex data."""
    rng = np.random.default_rng(seed + 4)
    res = SuiteResult("envelope", n)
    for k in range(n):
        d = 1 + k % 2
        f = random_cone_function(rng, d)
        noisy = f.with_values(f.values + rng.normal(scale=0.05, size=f.shape), exact=None)
        env = convex_envelope(noisy)
        tol = 1e-9 * f.scale
        if np.any(env.values > noisy.values + tol):
            res.failures.append(f"#{k}: envelope above data")
        if not env.convex:
            res.failures.append(f"#{k}: envelope not convex")
        again = convex_envelope(f)
        if np.abs(again.values - f.values).max() > tol:
            res.failures.append(f"#{k}: envelope of convex data moved")
    return res


def subgradient_suite(seed=DEFAULT_SEED, n=40) -> SuiteResult:
    """Every listed slope passes the discrete plane test."""
    rng = np.random.default_rng(seed + 5)
    res = SuiteResult("subdifferential", n)
    for k in range(n):
        d = 1 + k % 2
        f = random_cone_function(rng, d)
        if k % 3 == 0:
            # kinked data: maximum of the cone and a plane
            q = rng.uniform(-0.5, 0.5, d)
            f = f.with_values(np.maximum(f.values, (f.points @ q).reshape(f.shape) + rng.uniform(0, 2)))
        x = _node(rng, f)
        if not supporting_plane_check(f, x):
            res.failures.append(f"#{k}: convex data without supporting plane")
            continue
        sd = subdifferential_at(f, x)
        idx = f.index_of(x)
        for b in sd.samples():
            if not is_subgradient(f, idx, b, 1e-10 * f.scale):
                res.failures.append(f"#{k}: slope {b} fails the plane test")
                break
    return res


def _trig(modes, amps, phases):
    def f(y):
        return np.cos(np.asarray(y) @ modes.T + phases) @ amps
    return f


def multiplier_suite(seed=DEFAULT_SEED, n=20) -> SuiteResult:
    """Both multipliers reproduce their symbols on trigonometric data, and the
    resolvent composed with ``I + (-Laplacian)^{s/2}`` is the identity."""
    rng = np.random.default_rng(seed + 6)
    res = SuiteResult("multiplier", n)
    for k in range(n):
        d = 1 + k % 2
        L, h = (8.0, 0.125) if d == 1 else (4.0, 0.25)
        nn = grid_size(L, h)
        period = 2 * (nn - 1) * h  # padded box with the default factor 2
        modes = rng.integers(-6, 7, size=(5, d)) * 2 * np.pi / period
        amps = rng.normal(size=5)
        phases = rng.uniform(0, 2 * np.pi, 5)
        s = rng.uniform(1.1, 1.9)
        sym = np.linalg.norm(modes, axis=1) ** s
        g_fun = _trig(modes, amps, phases)
        r_fun = _trig(modes, amps / (1 + sym), phases)
        l_fun = _trig(modes, amps * sym / (1 + sym), phases)
        ax = -L + h * np.arange(nn)
        pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * d), indexing="ij")], axis=1)
        shape = (nn,) * d
        g = GridFunction(g_fun(pts).reshape(shape), L, h, growth=0, exact=g_fun)
        back = resolvent_apply(g, s)
        rv = GridFunction(back.values, L, h, growth=0, exact=r_fun)
        lap = frac_laplacian(rv, s)
        scale = max(1.0, np.abs(g.values).max())
        e1 = np.abs(back.values - r_fun(pts).reshape(shape)).max()
        e2 = np.abs(lap.values - l_fun(pts).reshape(shape)).max()
        e3 = np.abs(back.values + lap.values - g.values).max()
        if max(e1, e2, e3) > 1e-8 * scale:
            res.failures.append(f"#{k}: multiplier errors {e1:.3g} {e2:.3g} {e3:.3g}")
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "monotonicity": monotonicity_suite,
    "concavity": concavity_suite,
    "capped": capped_suite,
    "sign": nonnegativity_suite,
    "envelope": envelope_suite,
    "subdifferential": subgradient_suite,
    "multiplier": multiplier_suite,
}


def run_suites(seed=DEFAULT_SEED, names=None) -> list[SuiteResult]:
    return [SUITES[k](seed) for k in (names or SUITES)]
