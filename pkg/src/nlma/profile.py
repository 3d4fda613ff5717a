"""Sublevel-measure profiles ``t -> mu_b(t)`` and their radial rearrangements.

The measure of ``{y : u(y) - u(x) - b.(y-x) < t}`` is assembled from three
pieces.  Close to ``t = 0`` a local quadratic model gives ``mu`` in closed
form.  Inside the box every grid cell contributes its volume spread uniformly
over the range the (locally linear) increment takes on the cell.  Outside the
box the cone model ``Phi + const`` makes every section a star shaped set whose
measure is a sphere integral, and once the whole box is swallowed the profile
is exactly ``V(b) (t - kappa)^d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .cones import sphere_quadrature, unit_ball_volume
from .grid import GridFunction
from .hull import cone_like, is_subgradient

T_A_CELLS = 6  # near regime ends where the thinnest section direction spans 6 cells
REGIME_TOL = 0.10
TAIL_STRETCH = 30.0  # profile tabulated up to this multiple of the box-exit level


@numba.njit(cache=True)
def _level_counts(inc, w, levels, vol):
    """Measure below each level when cell ``i`` (volume ``vol[i]``) is spread over ``inc +- w``."""
    m = levels.shape[0]
    ramp = np.zeros(m)
    full = np.zeros(m + 1)
    for i in range(inc.shape[0]):
        lo = inc[i] - w[i]
        hi = inc[i] + w[i]
        j1 = np.searchsorted(levels, hi, side="right")
        if w[i] > 0:
            j0 = np.searchsorted(levels, lo, side="right")
            for j in range(j0, j1):
                ramp[j] += vol[i] * (levels[j] - lo) / (2 * w[i])
        full[j1] += vol[i]
    return ramp + np.cumsum(full)[:m]


@numba.njit(cache=True)
def _exterior(levels, kappa, slack, rho_box, weights, d):
    """Measure of ``{Phi - b.y < t - kappa}`` outside the box, per level.

    ``kappa`` holds one offset per direction.
    """
    out = np.zeros(levels.shape[0])
    for j in range(levels.shape[0]):
        acc = 0.0
        for k in range(slack.shape[0]):
            tk = levels[j] - kappa[k]
            if slack[k] <= 0 or tk <= 0:
                continue
            r = tk / slack[k]
            if r > rho_box[k]:
                acc += weights[k] * (r ** d - rho_box[k] ** d)
        out[j] = acc / d
    return out


def fd_hessian(f: GridFunction, idx) -> np.ndarray | None:
    """Second-order finite-difference Hessian; ``None`` next to the boundary."""
    idx = np.asarray(idx)
    if np.any(idx < 1) or np.any(idx > f.n - 2):
        return None
    u, h, d = f.values, f.h, f.dim
    H = np.empty((d, d))
    eye = np.eye(d, dtype=int)
    u0 = u[tuple(idx)]
    for k in range(d):
        H[k, k] = (u[tuple(idx + eye[k])] + u[tuple(idx - eye[k])] - 2 * u0) / h ** 2
        for m in range(k):
            pp = u[tuple(idx + eye[k] + eye[m])]
            mm = u[tuple(idx - eye[k] - eye[m])]
            pm = u[tuple(idx + eye[k] - eye[m])]
            mp = u[tuple(idx - eye[k] + eye[m])]
            H[k, m] = H[m, k] = (pp + mm - pm - mp) / (4 * h ** 2)
    return H


@dataclass(frozen=True)
class SectionProfile:
    """Piecewise description of ``mu_b(t)``.

    ``mu`` is tabulated at ``t`` and linear in between.  Below ``t[0]`` it is
    ``c_q t^{d/2}`` when a quadratic model exists, otherwise it is held at
    ``mu[0]``.  Above ``t[-1]`` it equals ``V (t - kappa)^d`` (finite ``V``),
    and it is infinite for ``t > t_inf``.
    """

    x: np.ndarray
    b: np.ndarray
    dim: int
    t: np.ndarray
    mu: np.ndarray
    c_q: float | None = None
    H: np.ndarray | None = None
    V: float = np.inf
    kappa: float = 0.0
    t_inf: float = np.inf
    flags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def all_infinite(self) -> bool:
        return self.t_inf <= 0

    @property
    def t_far(self) -> float:
        return float(self.t[-1]) if len(self.t) else 0.0

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t, self.mu) if len(self.t) else np.zeros_like(t)
        if len(self.t):
            lo = t < self.t[0]
            if self.c_q is not None:
                out[lo] = self.c_q * t[lo] ** (self.dim / 2)
            hi = t > self.t[-1]
            if np.isfinite(self.V):
                out[hi] = self.V * (t[hi] - self.kappa) ** self.dim
            elif "box-truncated" in self.flags:
                out[hi] = np.nan
        out = np.where(t > self.t_inf, np.inf, out)
        return np.where(t <= 0, 0.0, out)


def _fat_level(inc, w, tol) -> bool:
    flat = inc[w <= tol]
    if len(flat) < 2:
        return False
    keys = np.round(flat / max(tol, 1e-300))
    _, counts = np.unique(keys, return_counts=True)
    return bool(counts.max() >= 2)


def section_profile(f: GridFunction, x, b=None, *, levels_per_decade: int = 64,
                    n_dirs: int = 0, check: bool = True) -> SectionProfile:
    """Build ``mu_b`` at node ``x``; ``b`` defaults to the central-difference gradient."""
    idx = f.index_of(x) if not isinstance(x, tuple) else x
    xc = f.coords(idx)
    d, h = f.dim, f.h
    b = f.gradient[tuple(idx)].copy() if b is None else np.asarray(b, dtype=float).reshape(d)
    if check and not is_subgradient(f, idx, b):
        raise ValueError("b is not a subgradient of f at x")
    scale = f.scale
    tol = 1e-12 * scale
    inc = (f.values - f.values[tuple(idx)]).ravel() - (f.points - xc) @ b
    inc = np.maximum(inc, 0.0)
    w = 0.5 * h * np.linalg.norm(f.gradient.reshape(-1, d) - b, axis=1)
    vol = np.full(inc.shape, h ** d)
    flags: list[str] = []
    bd = unit_ball_volume(d)

    # tail model
    V, kappa, t_inf = np.inf, 0.0, np.inf
    if f.cone is not None:
        V = f.cone.unit_volume(b)
        kappa = f.tail_offset - f.values[tuple(idx)] + b @ xc
        if not np.isfinite(V):
            # offsets at roundoff level mean unbounded sections at every level
            t_inf = kappa if kappa > 1e-12 * f.scale else 0.0
            flags.append("cone-unbounded")
    if t_inf <= 0:
        return SectionProfile(xc, b, d, np.zeros(0), np.zeros(0), V=V, kappa=kappa,
                              t_inf=0.0, flags=tuple(flags))

    # near regime
    H = fd_hessian(f, idx)
    c_q = None
    lam = 0.0
    if H is not None and not cone_like(f, idx, b):
        ev = np.linalg.eigvalsh(H)
        lam = ev.min()
        if lam > 1e-8 * max(1.0, ev.max()):
            c_q = bd * 2 ** (d / 2) / np.sqrt(np.linalg.det(H))
    if c_q is None:
        H = None
        flags.append("hessian-fallback")

    T_full = float(np.max(inc + w))
    if f.cone is not None:
        dirs, wts = sphere_quadrature(d, n_dirs)
        slack = f.cone.slack(b, dirs)
        rho_box = (f.L + h / 2) / np.abs(dirs).max(axis=1)
        # per-direction offsets; the tail uses their slack-weighted mean
        kap = f.ray_offsets(dirs) - f.values[tuple(idx)] + b @ xc
        T_far = T_full
        if np.isfinite(V):
            T_far = max(T_full, float(np.max(kap + rho_box * slack)))
            wk = wts * slack ** (-float(d))
            kappa = float(wk @ kap / wk.sum())
            # tabulate well past the box so the mean-offset tail is accurate
            T_far = TAIL_STRETCH * T_far
    else:
        # sections are known only while they stay inside the box
        band = f.boundary_mask().ravel()
        T_far = float(inc[band].min())
        flags.append("box-truncated")
    t_top = min(T_far, t_inf)

    if c_q is not None:
        t_a = lam * (T_A_CELLS * h) ** 2 / 2
    else:
        pos = inc[inc > tol]
        t_a = 1e-4 * float(pos.min()) if len(pos) else 1e-12 * scale
    t_a = min(t_a, 0.5 * t_top)

    def mid_levels(t0):
        n = max(16, int(np.ceil(np.log10(t_top / t0) * levels_per_decade)) + 1)
        return np.geomspace(t0, t_top, n)

    def cell_mu(levels):
        mu = _level_counts(inc, w, levels, vol)
        if f.cone is not None:
            mu = mu + _exterior(levels, kap, slack, rho_box, wts, d)
        return mu

    levels = mid_levels(t_a)
    mu = cell_mu(levels)
    if c_q is not None:
        # move the near/mid breakpoint outward until the raw counts agree
        for _ in range(4):
            mq = c_q * t_a ** (d / 2)
            if abs(mu[0] - mq) <= REGIME_TOL * mq or 2 * t_a >= t_top:
                break
            t_a *= 2
            levels = mid_levels(t_a)
            mu = cell_mu(levels)
        else:
            flags.append("regime-mismatch")
        near = np.geomspace(t_a * 1e-6, t_a, 97)[:-1]
        levels = np.concatenate([near, levels])
        mu = np.concatenate([_level_counts(inc, w, near, vol), mu])
        corr = _control_variate(f, idx, H, levels, mu, t_a, c_q)
        if corr is None:
            flags.append("near-boundary")
            lo = levels < t_a
            mu[lo] = c_q * levels[lo] ** (d / 2)
        else:
            mu = mu + corr
    mu = np.maximum.accumulate(np.maximum(mu, 0.0))
    if _fat_level(inc, w, 1e-10 * scale):
        flags.append("fat-level")
    return SectionProfile(xc, b, d, levels, mu, c_q=c_q, H=H, V=V, kappa=kappa,
                          t_inf=t_inf, flags=tuple(flags), meta={"t_a": t_a, "idx": tuple(idx)})


def _control_variate(f, idx, H, levels, mu, t_a, c_q) -> np.ndarray | None:
    """``W(t) (mu_q - mu_cells(q))``: removes the cell-counting error near ``x``.

    ``W`` is 1 up to ``t_b = 4 t_a`` and decays to 0 (linearly in ``log t``)
    at ``2 t_b``.  Below ``t_b`` the profile is therefore the quadratic model
    plus the counted deviation of the data from it; that deviation is faded
    out below the cell scale ``lam h^2 / 2``.  When the window leaves
    the grid the pure model is used below ``t_a`` instead, with a flag.
    """
    d, h = f.dim, f.h
    t_b = 4 * t_a
    lam = np.linalg.eigvalsh(H).min()
    rad = int(np.ceil(np.sqrt(4 * t_b / lam) / h)) + 2
    idx = np.asarray(idx)
    if np.any(idx - rad < 0) or np.any(idx + rad > f.n - 1):
        return None
    offs = np.arange(-rad, rad + 1) * h
    mesh = np.meshgrid(*([offs] * d), indexing="ij")
    Y = np.stack([m.ravel() for m in mesh], axis=1)
    HY = Y @ H
    q = 0.5 * np.einsum("ij,ij->i", Y, HY)
    qw = 0.5 * h * np.linalg.norm(HY, axis=1)
    sel = levels <= 2 * t_b
    out = np.zeros_like(levels)
    lv = levels[sel]
    mq = c_q * lv ** (d / 2)
    cq = _level_counts(q, qw, lv, np.full(q.shape, h ** d))
    W = np.clip(np.log(2 * t_b / lv) / np.log(2), 0.0, 1.0)
    # below the cell scale the counts carry no information: pure model there
    t_c = lam * h ** 2 / 2
    W1 = np.clip(np.log(lv / t_c) / np.log(2), 0.0, 1.0)
    out[sel] = W * (mq - cq) - (1 - W1) * (mu[sel] - cq)
    return out


# rearrangement --------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Radial rearrangement ``v(r) = inf{t : mu(t) >= |B_1| r^d}``.

    Tabulated on ``(r, v)``; below ``r[0]`` ``v = a r^2`` (quadratic model) or
    ``0``, above ``r[-1]`` ``v = kappa + beta r`` when the tail is a cone.
    ``zero`` marks the identically zero profile of an all-infinite section.
    """

    r: np.ndarray
    v: np.ndarray
    dim: int
    a: float | None = None
    kappa: float = 0.0
    beta: float = np.nan
    v_max: float = np.inf
    zero: bool = False

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.zero:
            return np.zeros_like(r)
        out = np.interp(r, self.r, self.v)
        lo = r < self.r[0]
        out[lo] = self.a * r[lo] ** 2 if self.a is not None else 0.0
        hi = r > self.r[-1]
        if np.isfinite(self.beta):
            out[hi] = self.kappa + self.beta * r[hi]
        else:
            out[hi] = self.v_max
        return out


def radial_rearrangement(p: SectionProfile) -> RadialProfile:
    d = p.dim
    bd = unit_ball_volume(d)
    if p.all_infinite:
        return RadialProfile(np.zeros(1), np.zeros(1), d, zero=True)
    r = (p.mu / bd) ** (1 / d)
    # generalized inverse: flat stretches of mu become jumps of v and vice versa
    a = None if p.c_q is None else (bd / p.c_q) ** (2 / d)
    beta = (bd / p.V) ** (1 / d) if np.isfinite(p.V) and np.isinf(p.t_inf) else np.nan
    v_max = p.t_inf if np.isfinite(p.t_inf) else p.t_far
    return RadialProfile(r, p.t.copy(), d, a=a, kappa=p.kappa, beta=beta, v_max=v_max)
