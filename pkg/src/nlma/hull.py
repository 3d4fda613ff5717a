"""Convex envelopes, subdifferentials and sections of grid functions.

Everything is derived from the lower convex hull of the lifted node set
``{(y, u(y))}``: the hull facets are exactly the supporting planes of the
data, so envelopes and subdifferentials are read off from them.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .grid import GridFunction, stencil_directions

SLOPE_DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class LowerHull:
    """Lower facets as planes ``z = slopes . y + offsets`` and their vertices."""

    slopes: np.ndarray  # (F, d)
    offsets: np.ndarray  # (F,)
    simplices: np.ndarray  # (F, d+1) node indices
    vertices: np.ndarray  # sorted node indices on the hull


@dataclass(frozen=True)
class SubdifferentialSet:
    """Polytope of supporting-plane slopes at one node."""

    x: np.ndarray
    vertices: np.ndarray  # (k, d); empty when no supporting plane exists
    singleton: bool
    gradient: np.ndarray  # central-difference gradient at x
    flags: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0

    def samples(self, refine: int = 1) -> np.ndarray:
        """Vertices plus ``refine`` levels of barycentric midpoints."""
        if self.singleton or self.empty:
            return self.vertices
        pts = [self.vertices, self.vertices.mean(axis=0, keepdims=True)]
        cur = self.vertices
        for _ in range(refine):
            mids = [(a + b) / 2 for i, a in enumerate(cur) for b in cur[i + 1:]]
            cur = np.array(mids) if mids else cur
            pts.append(cur)
        return _dedup(np.concatenate(pts))


@dataclass(frozen=True)
class PlaneCheck:
    ok: bool
    witness: np.ndarray | None = None  # offset y with f(x+y) < f(x) + y.g
    gap: float = 0.0
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self):
        return self.ok


def _dedup(slopes: np.ndarray, tol: float = SLOPE_DEDUP_TOL) -> np.ndarray:
    out = []
    for s in slopes:
        if not any(np.max(np.abs(s - t)) <= tol * max(1.0, np.abs(t).max()) for t in out):
            out.append(s)
    return np.array(out).reshape(-1, slopes.shape[1])


def _affine_fit(points, values):
    A = np.hstack([points, np.ones((len(points), 1))])
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    resid = np.abs(A @ coef - values).max()
    return coef, resid


def _lower_hull_1d(x, z) -> LowerHull:
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (z[i] - z[i0]) - (z[i1] - z[i0]) * (x[i] - x[i0])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    v = np.array(hull)
    slopes = np.diff(z[v]) / np.diff(x[v])
    offsets = z[v[:-1]] - slopes * x[v[:-1]]
    return LowerHull(slopes[:, None], offsets, np.stack([v[:-1], v[1:]], axis=1), v)


def lower_hull(points: np.ndarray, values: np.ndarray) -> LowerHull:
    """Lower convex hull of ``(points, values)``; handles flat (affine) data."""
    d = points.shape[1]
    scale = max(1.0, float(np.abs(values).max()))
    if d == 1:
        order = np.argsort(points[:, 0], kind="stable")
        lh = _lower_hull_1d(points[order, 0], values[order])
        return LowerHull(lh.slopes, lh.offsets, order[lh.simplices], np.sort(order[lh.vertices]))
    coef, resid = _affine_fit(points, values)
    if resid <= 1e-12 * scale:
        corners = np.unique(np.concatenate([np.argmin(points @ s) [None] for s in np.eye(d)]
                                            + [np.argmax(points @ s)[None] for s in np.eye(d)]))
        return LowerHull(coef[None, :d], coef[d:], corners[None, : d + 1], corners)
    lifted = np.hstack([points, values[:, None]])
    try:
        ch = ConvexHull(lifted)
    except QhullError:
        ch = ConvexHull(lifted, qhull_options="QJ")
    eq = ch.equations
    low = eq[:, d] < -1e-12
    nrm, off = eq[low, :d], eq[low, d + 1]
    nz = eq[low, d]
    slopes = -nrm / nz[:, None]
    offsets = -off / nz
    simp = ch.simplices[low]
    return LowerHull(slopes, offsets, simp, np.unique(simp))


@numba.njit(cache=True)
def _raster_2d(tri_xy, slopes, offsets, L, h, n, env):
    for f in range(tri_xy.shape[0]):
        x0, y0 = tri_xy[f, 0, 0], tri_xy[f, 0, 1]
        x1, y1 = tri_xy[f, 1, 0], tri_xy[f, 1, 1]
        x2, y2 = tri_xy[f, 2, 0], tri_xy[f, 2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(det) < 1e-300:
            continue
        i_lo = max(0, int(np.floor((min(x0, x1, x2) + L) / h - 1e-9)))
        i_hi = min(n - 1, int(np.ceil((max(x0, x1, x2) + L) / h + 1e-9)))
        j_lo = max(0, int(np.floor((min(y0, y1, y2) + L) / h - 1e-9)))
        j_hi = min(n - 1, int(np.ceil((max(y0, y1, y2) + L) / h + 1e-9)))
        eps = 1e-9
        for i in range(i_lo, i_hi + 1):
            px = -L + i * h
            for j in range(j_lo, j_hi + 1):
                py = -L + j * h
                l1 = ((px - x0) * (y2 - y0) - (x2 - x0) * (py - y0)) / det
                l2 = ((x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)) / det
                if l1 >= -eps and l2 >= -eps and l1 + l2 <= 1 + eps:
                    z = slopes[f, 0] * px + slopes[f, 1] * py + offsets[f]
                    if z > env[i, j]:
                        env[i, j] = z


def envelope_from_hull(f: GridFunction, lh: LowerHull) -> np.ndarray:
    """Envelope values on every node of a 2- or 3-dimensional grid."""
    pts = f.points
    if f.dim == 2:
        env = np.full(f.shape, -np.inf)
        _raster_2d(pts[lh.simplices], lh.slopes, lh.offsets, f.L, f.h, f.n, env)
        return env.ravel()
    env = np.full(len(pts), -np.inf)
    for k in range(0, len(lh.slopes), 512):
        planes = pts @ lh.slopes[k:k + 512].T + lh.offsets[k:k + 512]
        env = np.maximum(env, planes.max(axis=1))
    return env


def convex_envelope(f: GridFunction, mask: np.ndarray | None = None) -> GridFunction:
    """Largest convex grid function below ``f``.

    With ``mask`` (boolean, grid shaped) only the selected nodes constrain the
    envelope; it is still evaluated on every node.
    """
    vals = f.values.ravel()
    sel = np.arange(vals.size) if mask is None else np.flatnonzero(np.asarray(mask).ravel())
    if len(sel) < f.dim + 1:
        raise ValueError("envelope needs at least d+1 constraining nodes")
    lh = lower_hull(f.points[sel], vals[sel])
    lh = LowerHull(lh.slopes, lh.offsets, sel[lh.simplices], sel[lh.vertices])
    if f.dim == 1:
        v = lh.vertices
        env = np.interp(f.points[:, 0], f.points[v, 0], vals[v])
    else:
        env = envelope_from_hull(f, lh)
        miss = ~np.isfinite(env)
        if np.any(miss):
            planes = f.points[miss] @ lh.slopes.T + lh.offsets
            env[miss] = planes.max(axis=1)
    if mask is None:
        # exactness on hull vertices, and never above the data
        env[lh.vertices] = vals[lh.vertices]
        env = np.minimum(env, vals)
    return f.with_values(env.reshape(f.shape), label=f"envelope({f.label})")


_HULLS: "weakref.WeakKeyDictionary[GridFunction, LowerHull]" = weakref.WeakKeyDictionary()


def hull_of(f: GridFunction) -> LowerHull:
    lh = _HULLS.get(f)
    if lh is None:
        lh = _HULLS[f] = lower_hull(f.points, f.values.ravel())
    return lh


def _cd_gradient(f: GridFunction, idx) -> np.ndarray:
    return f.gradient[tuple(idx)].copy()


def increment(f: GridFunction, idx, b) -> np.ndarray:
    """``u(y) - u(x) - b.(y - x)`` on every node, grid shaped."""
    x = f.coords(idx)
    return f.values - f.values[tuple(idx)] - ((f.points - x) @ np.asarray(b, dtype=float)).reshape(f.shape)


def cone_like(f: GridFunction, idx, b, rel_tol: float = 1e-12) -> bool:
    """True when the increment grows linearly in every stencil direction.

    A kink in the data shows as ``inc(x+2e) < 3 inc(x+e)``, whereas a smooth
    minimum gives a ratio close to 4.
    """
    tol = rel_tol * f.scale
    u = f.values
    idx = np.asarray(idx)
    x = f.coords(idx)
    b = np.asarray(b, dtype=float)
    checked = 0
    for e in stencil_directions(f.dim):
        for sgn in (1, -1):
            i1, i2 = idx + sgn * e, idx + 2 * sgn * e
            if np.any(i2 < 0) or np.any(i2 >= f.n):
                continue
            a = u[tuple(i1)] - u[tuple(idx)] - b @ (f.coords(i1) - x)
            c = u[tuple(i2)] - u[tuple(idx)] - b @ (f.coords(i2) - x)
            if a <= tol or c >= 3 * a:
                return False
            checked += 1
    return checked > 0


def supporting_plane_check(f: GridFunction, x, tol: float | None = None) -> PlaneCheck:
    """Whether ``f`` has a supporting plane at node ``x`` (grid plus cone tail).

    On failure the witness ``y`` satisfies ``f(x+y) < f(x) + y.g`` for the
    central-difference gradient ``g``.
    """
    idx = f.index_of(x) if not isinstance(x, tuple) else x
    tol = 1e-10 * f.scale if tol is None else tol
    vals = f.values.ravel()
    flat = np.ravel_multi_index(idx, f.shape)
    g = _cd_gradient(f, idx)
    xc = f.coords(idx)
    inc = vals - vals[flat] - (f.points - xc) @ g
    k = int(np.argmin(inc))
    if inc[k] < -tol:
        # the plane through x with slope g is pierced; x sits above the envelope
        # unless some other slope works, which the hull decides
        lh = hull_of(f)
        env_x = np.max(xc @ lh.slopes.T + lh.offsets)
        if vals[flat] - env_x > tol:
            return PlaneCheck(False, f.points[k] - xc, float(inc[k]), ("nonconvex",))
    if f.cone is not None and not f.cone.convex:
        dirs = np.eye(f.dim)
        dirs = np.concatenate([dirs, -dirs])
        sl = f.cone(dirs) - dirs @ g
        j = int(np.argmin(sl))
        # far along the worst ray the tail dips below any plane with slope g
        R = 2 * f.L + 4 * (abs(vals[flat]) + f.tail_offset ** 2 + abs(f.tail_offset) + 1) / max(-sl[j], 1e-12)
        y = dirs[j] * R
        return PlaneCheck(False, y, float(sl[j] * R), ("nonconvex",))
    return PlaneCheck(True)


def subdifferential_at(f: GridFunction, x, tol: float | None = None) -> SubdifferentialSet:
    """Slopes of the supporting planes of ``f`` at node ``x``."""
    if not f.convex:
        raise ValueError("subdifferential undefined for non-convex data; use supporting_plane_check")
    idx = f.index_of(x) if not isinstance(x, tuple) else x
    xc = f.coords(idx)
    g = _cd_gradient(f, idx)
    tol = 1e-10 * f.scale if tol is None else tol
    lh = hull_of(f)
    ux = f.values[tuple(idx)]
    touching = np.abs(xc @ lh.slopes.T + lh.offsets - ux) <= tol
    slopes = lh.slopes[touching]
    flags = []
    if f.cone is not None and len(slopes):
        keep = np.array([f.cone.admissible(s) for s in slopes])
        if not keep.all():
            flags.append("cone-unbounded")
        slopes = slopes[keep]
    if len(slopes) == 0:
        return SubdifferentialSet(xc, np.zeros((0, f.dim)), False, g, tuple(flags))
    if not cone_like(f, idx, g):
        # C^1 point: the central-difference gradient, or the mean incident
        # facet slope when the former misses the discrete plane test
        b = g if is_subgradient(f, idx, g, tol) else _dedup(slopes).mean(axis=0)
        return SubdifferentialSet(xc, b[None, :], True, g, tuple(flags))
    slopes = _dedup(slopes)
    if f.dim == 1:
        verts = np.array([[slopes.min()], [slopes.max()]])
        verts = _dedup(verts)
    elif len(slopes) > f.dim:
        try:
            verts = slopes[ConvexHull(slopes).vertices]
        except QhullError:
            verts = slopes
    else:
        verts = slopes
    return SubdifferentialSet(xc, verts, len(verts) == 1, g, tuple(flags))


def is_subgradient(f: GridFunction, idx, b, tol: float | None = None) -> bool:
    tol = 1e-8 * f.scale if tol is None else tol
    if np.min(increment(f, idx, b)) < -tol:
        return False
    return f.cone is None or f.cone.admissible(b)


def _diameter(pts: np.ndarray) -> float:
    if len(pts) <= 1:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    if len(pts) > pts.shape[1] + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def section_diameter(f: GridFunction, x, b, t: float) -> float:
    """Diameter of ``{y : f(y) - f(x) - b.(y-x) <= t}``.

    Sections that leave the box are bounded through the homothety of the
    largest section still inside it.  Returns ``inf`` when the slope is not
    interior to the cone tail (the section is then unbounded).
    """
    idx = f.index_of(x) if not isinstance(x, tuple) else x
    if not is_subgradient(f, idx, b):
        raise ValueError("b is not a subgradient of f at x")
    if f.cone is not None and not np.isfinite(f.cone.unit_volume(b)):
        return np.inf
    inc = increment(f, idx, b)
    tol = 1e-12 * f.scale
    band = f.boundary_mask()
    inside = inc <= t + tol
    if not np.any(inside & band):
        return _diameter(f.points[inside.ravel()])
    if f.cone is None:
        return np.inf
    eps = float(inc[band].min()) * (1 - 1e-9)
    if eps <= 0:
        return np.inf
    lam = _diameter(f.points[(inc <= eps).ravel()])
    return t / eps * lam
