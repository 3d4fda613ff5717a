"""Sampled functions on uniform tensor grids with an analytic cone tail."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cones import ConeModel, LinearCone, PolyhedralCone, QuadraticCone, cone_from_tokens


FAMILIES = ("smoothcone", "maxplanes", "affine", "negcone", "quadratic", "gaussian", "file")


class GridFormatError(ValueError):
    """Malformed grid file; the message carries the position of the bad token."""


def grid_size(L: float, h: float) -> int:
    if h <= 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    if L <= 0:
        raise ValueError(f"box half-width must be positive, got {L}")
    n = int(round(2 * L / h)) + 1
    if abs((n - 1) * h - 2 * L) > 1e-9 * L:
        raise ValueError(f"2L/h must be an integer (L={L}, h={h})")
    return n


def stencil_directions(d: int) -> np.ndarray:
    """Axis and diagonal integer offsets, one per +/- pair."""
    dirs = []
    for e in product((-1, 0, 1), repeat=d):
        if any(e) and tuple(-x for x in e) not in dirs:
            dirs.append(e)
    return np.array(dirs, dtype=int)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a function on the nodes ``-L + i*h`` of ``[-L, L]^d``.

    ``cone`` models the function outside the box as ``Phi(y) + o`` with a
    bounded offset ``|o| <= o_max``.  ``growth`` is 1 for cone-asymptotic data
    and 2 for quadratically growing data (usable only with localized kernels).
    ``exact`` optionally evaluates the underlying function at arbitrary points.
    """

    values: np.ndarray
    L: float
    h: float
    cone: ConeModel | None = None
    o_max: float = np.inf
    growth: int = 1
    exact: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        d = vals.ndim
        if not 1 <= d <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
        n = grid_size(self.L, self.h)
        if vals.shape != (n,) * d:
            raise ValueError(f"values of shape {vals.shape} do not match a {n}^{d} grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        if self.cone is not None and self.cone.dim != d:
            raise ValueError("cone model dimension does not match the grid")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # geometry -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(N, d)`` in C order."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def scale(self) -> float:
        return max(1.0, float(np.abs(self.values).max()))

    def index_of(self, x) -> tuple[int, ...]:
        """Grid index of the node at coordinates ``x`` (must be a node)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} coordinates")
        k = (x + self.L) / self.h
        idx = np.rint(k).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise ValueError(f"point {x.tolist()} lies outside the grid")
        if np.any(np.abs(k - idx) > 1e-6):
            raise ValueError(f"point {x.tolist()} is not a grid node")
        return tuple(int(i) for i in idx)

    def coords(self, idx) -> np.ndarray:
        return -self.L + self.h * np.asarray(idx, dtype=float)

    def boundary_mask(self, width: int = 1) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = slice(0, width)
            m[tuple(sl)] = True
            sl[k] = slice(self.n - width, None)
            m[tuple(sl)] = True
        return m

    def interior_mask(self, margin: float) -> np.ndarray:
        """Nodes with every coordinate at most ``L - margin`` in modulus."""
        inside = np.abs(self.axis) <= self.L - margin + 1e-12 * self.L
        m = inside
        for _ in range(self.dim - 1):
            m = np.multiply.outer(m, inside)
        return m

    # derived fields ---------------------------------------------------------
    @cached_property
    def gradient(self) -> np.ndarray:
        """Central-difference gradient, one-sided on the boundary; ``(*shape, d)``."""
        g = np.gradient(self.values, self.h, edge_order=2)
        if self.dim == 1:
            g = [g]
        return np.stack(g, axis=-1)

    def second_differences(self, step: int = 1) -> np.ndarray:
        """``u(x+e)+u(x-e)-2u(x)`` over stencil directions at interior nodes.

        Returns an array of shape ``(n_dirs, *interior_shape)`` where the
        interior excludes ``step`` layers per side.
        """
        u = self.values
        n, s = self.n, step
        core = tuple(slice(s, n - s) for _ in range(self.dim))
        out = []
        for e in stencil_directions(self.dim):
            fwd = tuple(slice(s + s * k, n - s + s * k) for k in e)
            bwd = tuple(slice(s - s * k, n - s - s * k) for k in e)
            out.append(u[fwd] + u[bwd] - 2 * u[core])
        return np.array(out)

    @cached_property
    def convex(self) -> bool:
        """Discrete midpoint convexity along axis and diagonal directions."""
        if self.n < 3:
            return True
        return bool(self.second_differences().min() >= -1e-12 * self.scale)

    @cached_property
    def tail_offset(self) -> float:
        """Mean of ``u - Phi`` over the outermost layer of nodes."""
        if self.cone is None:
            return 0.0
        band = self.boundary_mask()
        return float(np.mean(self.values[band] - self.cone(self.points[band.ravel()])))

    def ray_offsets(self, dirs: np.ndarray) -> np.ndarray:
        """``u - Phi`` where the rays ``r theta`` from the origin leave the box."""
        if self.cone is None:
            return np.zeros(len(dirs))
        rest = self.values - self.cone(self.points).reshape(self.shape)
        exits = np.clip(dirs * (self.L / np.abs(dirs).max(axis=1))[:, None], -self.L, self.L)
        if self.dim == 1:
            return np.interp(exits[:, 0], self.axis, rest)
        return RegularGridInterpolator((self.axis,) * self.dim, rest)(exits)

    @cached_property
    def cone_asymptotic(self) -> bool:
        if self.cone is None:
            return False
        band = self.boundary_mask()
        dev = np.abs(self.values[band] - self.cone(self.points[band.ravel()]))
        return bool(dev.max() <= self.o_max)

    def with_values(self, values, **changes) -> "GridFunction":
        """Copy with new node values; analytic evaluator dropped unless given."""
        changes.setdefault("exact", None)
        changes.setdefault("meta", dict(self.meta))
        return dataclasses.replace(self, values=np.asarray(values, dtype=float), **changes)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            other = other.values
        return self.with_values(self.values + other)


# builders -------------------------------------------------------------------

def parse_builder_spec(spec: str) -> tuple[str, dict[str, list[float] | str]]:
    """Parse ``name:key=val,key=val``; bare numbers extend the previous key.

    ``smoothcone:a=1,M=4,0,0,1`` gives ``('smoothcone', {'a': [1.0], 'M': [4, 0, 0, 1]})``.
    """
    name, _, rest = spec.partition(":")
    name = name.strip()
    if not name:
        raise ValueError("builder spec has an empty family name")
    params: dict[str, list] = {}
    key = None
    for pos, tok in enumerate(t.strip() for t in rest.split(",") if rest):
        if "=" in tok:
            key, _, val = tok.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"malformed builder token {tok!r} at position {pos}")
            params[key] = []
        elif key is None:
            raise ValueError(f"malformed builder token {tok!r} at position {pos}")
        else:
            val = tok
        if key == "path":
            params[key] = val
            continue
        try:
            params[key].append(float(val))
        except ValueError:
            raise ValueError(f"malformed builder token {tok!r} at position {pos}") from None
    return name, params


def _vec(params, key, d, default=0.0):
    v = params.get(key)
    if v is None:
        return np.full(d, default, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.size == 1:
        return np.full(d, float(v[0]))
    if v.size != d:
        raise ValueError(f"parameter {key} needs {d} entries, got {v.size}")
    return v


def _mat(params, key, d):
    v = params.get(key)
    if v is None:
        return np.eye(d)
    v = np.asarray(v, dtype=float)
    if v.size == 1:
        return v[0] * np.eye(d)
    if v.size == d:
        return np.diag(v)
    if v.size != d * d:
        raise ValueError(f"matrix {key} needs 1, {d} or {d * d} entries, got {v.size}")
    M = v.reshape(d, d)
    if not np.allclose(M, M.T):
        raise ValueError(f"matrix {key} must be symmetric")
    return M


def _scalar(params, key, default):
    v = params.get(key)
    return default if v is None else float(v[0])


def smooth_cone(M=None, a: float = 1.0, c=None, p=None, *, dim: int = 1):
    """Evaluator and cone for ``sqrt(a^2 + (y-c)^T M (y-c)) - a + p.y``."""
    M = np.eye(dim) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
    c = np.zeros(dim) if c is None else np.asarray(c, dtype=float)
    p = np.zeros(dim) if p is None else np.asarray(p, dtype=float)
    if a <= 0:
        raise ValueError("smooth cone needs a > 0")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError("smooth cone matrix M must be positive definite")

    def f(y):
        z = np.asarray(y, dtype=float) - c
        return np.sqrt(a * a + np.einsum("...i,ij,...j->...", z, M, z)) - a + np.asarray(y) @ p

    # |f - Phi| <= a + |M^{1/2} c| + slack for the cross term
    o_max = a + float(np.sqrt(c @ M @ c)) + 1e-9
    return f, QuadraticCone(M, p), o_max


def build_grid_function(spec: str | tuple, L: float = 20.0, h: float = 0.05, dim: int = 1) -> GridFunction:
    """Sample a named family on the grid of half-width ``L`` and spacing ``h``.

    Families: ``smoothcone`` (a, M, c, p), ``maxplanes`` (P, c, rho), ``affine``
    (p, c), ``negcone`` (a), ``quadratic`` (A, c), ``gaussian`` (amp, width, c)
    and ``file`` (path).
    """
    if isinstance(spec, str):
        name, params = parse_builder_spec(spec)
    else:
        name, params = spec
    if name == "file":
        return read_grid(params["path"])
    d = dim
    n = grid_size(L, h)
    ax = -L + h * np.arange(n)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * d), indexing="ij")], axis=1)

    if name == "smoothcone":
        f, cone, o_max = smooth_cone(_mat(params, "M", d), _scalar(params, "a", 1.0),
                                     _vec(params, "c", d), _vec(params, "p", d), dim=d)
        growth = 1
    elif name == "maxplanes":
        P = np.asarray(params.get("P", [1.0, -1.0] if d == 1 else None), dtype=float)
        if P.size % d:
            raise ValueError("maxplanes slopes P must have a multiple of d entries")
        P = P.reshape(-1, d)
        off = np.asarray(params.get("c", [0.0] * len(P)), dtype=float)
        if off.size != len(P):
            raise ValueError("maxplanes offsets c must have one entry per plane")
        rho = _scalar(params, "rho", 0.0)
        if rho < 0:
            raise ValueError("smoothing radius rho must be nonnegative")

        def f(y, P=P, off=off, rho=rho):
            lin = np.asarray(y) @ P.T + off
            if rho == 0:
                return lin.max(axis=-1)
            top = lin.max(axis=-1, keepdims=True)
            return (top + rho * np.log(np.exp((lin - top) / rho).sum(axis=-1, keepdims=True)))[..., 0]

        cone = PolyhedralCone(P)
        o_max = float(np.abs(off).max() + rho * np.log(len(P))) + 1e-9
        growth = 1
    elif name == "affine":
        p = _vec(params, "p", d)
        c0 = _scalar(params, "c", 0.0)

        def f(y, p=p, c0=c0):
            return np.asarray(y) @ p + c0

        cone, o_max, growth = LinearCone(p), abs(c0) + 1e-9, 1
    elif name == "negcone":
        a = _scalar(params, "a", 1.0)

        def f(y, a=a):
            return -np.sqrt(a * a + np.sum(np.asarray(y) ** 2, axis=-1))

        cone, o_max, growth = QuadraticCone(np.eye(d), np.zeros(d), sign=-1.0), a + 1e-9, 1
    elif name == "quadratic":
        A = _mat(params, "A", d)
        c = _vec(params, "c", d)

        def f(y, A=A, c=c):
            z = np.asarray(y) - c
            return 0.5 * np.einsum("...i,ij,...j->...", z, A, z)

        cone, o_max, growth = None, np.inf, 2
    elif name == "gaussian":
        amp, width = _scalar(params, "amp", 1.0), _scalar(params, "width", 1.0)
        c = _vec(params, "c", d)

        def f(y, amp=amp, width=width, c=c):
            z = np.asarray(y) - c
            return amp * np.exp(-np.sum(z * z, axis=-1) / (2 * width ** 2))

        cone, o_max, growth = None, np.inf, 0
    else:
        raise ValueError(f"unknown function family {name!r}")

    vals = f(pts).reshape((n,) * d)
    return GridFunction(vals, L, h, cone=cone, o_max=o_max, growth=growth, exact=f, label=name)


# file format ----------------------------------------------------------------

def write_grid(f: GridFunction, path, tail: tuple[float, float] | None = None) -> None:
    """Write the text grid format (values with 17 significant digits)."""
    lines = [" ".join(str(x) for x in (f.dim, *f.shape)), f"{f.L:.17g} {f.h:.17g}"]
    if f.cone is not None:
        lines.append(" ".join(["cone", *f.cone.tokens()]))
    if tail is not None:
        lines.append(f"tail {tail[0]:.17g} {tail[1]:.17g}")
    lines.extend(f"{v:.17g}" for v in f.values.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path) -> GridFunction:
    """Parse the text grid format; raises ``GridFormatError`` at the first bad token."""
    text = Path(path).read_text().splitlines()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text) if ln.strip()]
    if len(lines) < 2:
        raise GridFormatError(f"{path}: expected header lines 'd n1 ...' and 'L h'")

    def num(tok, lineno, col, conv=float):
        try:
            return conv(tok)
        except ValueError:
            raise GridFormatError(f"{path}:{lineno}: bad token {tok!r} at position {col}") from None

    ln, toks = lines[0]
    d = num(toks[0], ln, 1, int)
    if not 1 <= d <= 3 or len(toks) != d + 1:
        raise GridFormatError(f"{path}:{ln}: header must read 'd n1 [n2 [n3]]' with 1 <= d <= 3")
    dims = [num(t, ln, k + 2, int) for k, t in enumerate(toks[1:])]
    if len(set(dims)) != 1:
        raise GridFormatError(f"{path}:{ln}: only cubic grids are supported")
    ln, toks = lines[1]
    if len(toks) != 2:
        raise GridFormatError(f"{path}:{ln}: second line must read 'L h'")
    L, h = num(toks[0], ln, 1), num(toks[1], ln, 2)
    cone, tail = None, None
    k = 2
    while k < len(lines) and lines[k][1][0].isalpha() and lines[k][1][0] not in ("inf", "nan"):
        ln, toks = lines[k]
        if toks[0] == "cone":
            try:
                cone = cone_from_tokens(toks[1:], d)
            except (ValueError, IndexError) as exc:
                raise GridFormatError(f"{path}:{ln}: bad cone line ({exc})") from None
        elif toks[0] == "tail":
            tail = (num(toks[1], ln, 2), num(toks[2], ln, 3))
        else:
            raise GridFormatError(f"{path}:{ln}: bad token {toks[0]!r} at position 1")
        k += 1
    vals = []
    for ln, toks in lines[k:]:
        if len(toks) != 1:
            raise GridFormatError(f"{path}:{ln}: bad token {toks[1]!r} at position 2")
        v = num(toks[0], ln, 1)
        if not np.isfinite(v):
            raise GridFormatError(f"{path}:{ln}: bad token {toks[0]!r} at position 1")
        vals.append(v)
    expected = int(np.prod(dims))
    if len(vals) != expected:
        raise GridFormatError(f"{path}: expected {expected} values, found {len(vals)}")
    try:
        grid_size(L, h)
    except ValueError as exc:
        raise GridFormatError(f"{path}: {exc}") from None
    meta = {} if tail is None else {"tail": tail}
    o_max = np.inf
    f = GridFunction(np.reshape(vals, dims), L, h, cone=cone, label="file", meta=meta)
    if cone is not None:
        band = f.boundary_mask()
        o_max = float(np.abs(f.values[band] - cone(f.points[band.ravel()])).max())
        f = dataclasses.replace(f, o_max=o_max)
    return f
