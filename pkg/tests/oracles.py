"""Independent reference computations used to freeze expected values.

Each oracle avoids the package's own geometry and quadrature code: plain
scipy quadrature, root finding, linear programming and O(n^2) loops.
"""

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, linprog


def unit_ball(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def beta_by_quadrature(a, b):
    """Euler Beta function from its defining integral, split at 1/2."""
    f = lambda t: t ** (a - 1) * (1 - t) ** (b - 1)
    return quad(f, 0, 0.5, limit=200)[0] + quad(f, 0.5, 1, limit=200)[0]


def cone_closed_form(d, s):
    """Operator value at the vertex of ``sqrt(1 + |y|^2)``."""
    return d / s * unit_ball(d) * 2 ** (1 - s) * beta_by_quadrature(1 - s / 2, s - 1)


def exact_1d_value(fun, x, s, fprime=None):
    """Operator value of a smooth convex 1D function by root finding.

    The sublevel measure is the length between the two roots of the
    increment; the value is the integral of ``C mu^{-s}`` over levels.
    """
    c_ma = 1 / s * 2.0 ** (1 + s)
    if fprime is None:
        e = 1e-6
        b = (fun(x + e) - fun(x - e)) / (2 * e)
    else:
        b = fprime(x)
    f0 = fun(x)
    inc = lambda y: fun(y) - f0 - b * (y - x)

    def mu(t):
        hi = 1.0
        while inc(x + hi) < t:
            hi *= 2
        lo = 1.0
        while inc(x - lo) < t:
            lo *= 2
        r1 = brentq(lambda y: inc(x + y) - t, 0, hi, xtol=1e-14)
        r2 = brentq(lambda y: inc(x - y) - t, 0, lo, xtol=1e-14)
        return r1 + r2

    G = lambda t: c_ma * mu(t) ** (-s)
    # below delta, mu(t) = 2 sqrt(2t/a) (1 + O(t)) with a = u''(x)
    delta = 1e-6
    a2 = _second(fun, x, 1e-4)
    head = c_ma * (2 * math.sqrt(2 / a2)) ** (-s) * delta ** (1 - s / 2) / (1 - s / 2)
    cuts = [delta, 1e-3, 1, 100, np.inf]
    return head + sum(quad(G, lo, hi, limit=200)[0] for lo, hi in zip(cuts[:-1], cuts[1:]))


def fraclap_1d_direct(fun, x, s):
    """Kernel-convention fractional Laplacian ``int (2u(x)-u(x+y)-u(x-y))|y|^{-1-s}``."""
    g = lambda y: (2 * fun(x) - fun(x + y) - fun(x - y)) / y ** (1 + s)
    # second difference ~ y^2 near 0: weight y^{1-s} times a smooth quotient
    q = lambda y: (2 * fun(x) - fun(x + y) - fun(x - y)) / y ** 2 if y > 1e-4 else -_second(fun, x)
    return quad(q, 0, 1, weight="alg", wvar=(1 - s, 0), limit=200)[0] + quad(g, 1, np.inf, limit=200)[0]


def _second(fun, x, e=1e-3):
    return (fun(x + e) - 2 * fun(x) + fun(x - e)) / e ** 2


def lp_supporting_plane(points, values, k, tol=1e-9):
    """Whether node ``k`` admits a plane below all data (linear program).

    Maximize ``c`` subject to ``values_j >= values_k + g.(p_j - p_k) + c``;
    a supporting plane exists iff the optimum is ``>= -tol``.
    """
    P = np.asarray(points, dtype=float)
    v = np.asarray(values, dtype=float)
    d = P.shape[1]
    D = P - P[k]
    # variables (g, c); constraints g.D_j + c <= v_j - v_k
    A = np.hstack([D, np.ones((len(P), 1))])
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=A, b_ub=v - v[k],
                  bounds=[(None, None)] * d + [(None, 0)], method="highs")
    return res.status == 0 and -res.fun >= -tol


def brute_envelope_1d(x, z):
    """Lower convex envelope by minimizing over all chords, O(n^3)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(x)
    out = z.copy()
    for i in range(n):
        for j in range(i + 1, n):
            lam = (x[i + 1:j] - x[i]) / (x[j] - x[i])
            chord = (1 - lam) * z[i] + lam * z[j]
            out[i + 1:j] = np.minimum(out[i + 1:j], chord)
    return out
