"""Global solve of ``MA u = u - phi`` and its certification.

The iteration is a damped, preconditioned residual ascent,

    u <- clip(envelope(u + tau P r), phi, phi + w),

where ``r = MA u - (u - phi)`` and ``P = (I + A)^{-1}`` with ``A`` the
fractional Laplacian in the kernel convention (the linearization of ``MA``
at an isotropic quadratic).  Convexity comes from the envelope projection and
the sandwich ``phi <= u <= phi + w`` from the clip.  Nodes in the outer band
carry no equation; there ``u - phi`` is the barrier times the ratio
``(u - phi) / w`` of the nearest free node.  Steps are accepted when the l2
residual over the free region decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np

from .cones import QuadraticCone
from .field import eval_ma_field, fd_hessians
from .grid import GridFunction, stencil_directions
from .hull import convex_envelope
from .operator import KernelSpec, OperatorParams, eval_ma
from .spectral import PaddedBox, apply_multiplier, build_upper_barrier, kernel_constant

CERT_MARGIN = 0.2  # certification subbox margin, fraction of L
FIXED_MARGIN = 0.05  # outer band continued along the barrier, fraction of L
LOG_FIELDS = ("iter", "eps", "tau", "sup_residual", "c11", "min_gap_lower", "min_gap_upper")


@dataclass
class SolverConfig:
    tol: float = 1e-3  # relative to the data scale
    max_iters: int = 60
    tau0: float = 1.0
    tau_min: float = 1.0 / 64
    eps0: float | None = None  # default 4h
    eps_min: float | None = None  # default h
    gamma: float = 0.7
    pad: float = 2.0
    cert_margin: float = CERT_MARGIN
    fixed_margin: float = FIXED_MARGIN


@dataclass
class SolveState:
    """Iterate, barriers and history of one global solve."""

    u: GridFunction
    phi: GridFunction
    w: GridFunction
    params: OperatorParams
    iteration: int = 0
    eps: float = 0.0
    tau: float = 0.5
    residual: np.ndarray | None = None
    history: list[float] = dfield(default_factory=list)
    log: list[tuple] = dfield(default_factory=list)
    converged: bool = False
    flags: tuple[str, ...] = ()
    certificate: dict = dfield(default_factory=dict)


def strict_convexity_probe(phi: GridFunction) -> float:
    """Smallest finite-difference Hessian eigenvalue over nodes off the boundary."""
    inner = ~phi.boundary_mask()
    H = fd_hessians(phi, np.flatnonzero(inner.ravel()))
    return float(np.linalg.eigvalsh(H)[:, 0].min())


def _capped_n(h: float, params: OperatorParams) -> float:
    return (h / 2) ** (-params.d - params.s)


def ma_field(u: GridFunction, params: OperatorParams, kernel: KernelSpec = KernelSpec(),
             mask: np.ndarray | None = None) -> np.ndarray:
    """Operator values on ``mask`` with ``+inf`` replaced by a resolution-scale cap."""
    vals = eval_ma_field(u, params, kernel, mask)
    bad = np.isposinf(vals)
    if np.any(bad):
        cap = KernelSpec("capped", _capped_n(u.h, params))
        for idx in zip(*np.nonzero(bad)):
            vals[idx] = eval_ma(u, u.coords(idx), params, cap).value
    return vals


def residual(u: GridFunction, phi: GridFunction, params: OperatorParams,
             kernel: KernelSpec = KernelSpec(), mask: np.ndarray | None = None,
             margin: float = CERT_MARGIN) -> tuple[np.ndarray, float]:
    """``MA u - (u - phi)`` on interior nodes and its sup over the subbox.

    The subbox keeps nodes at distance ``margin * L`` from the boundary.
    """
    vals = ma_field(u, params, kernel, mask)
    r = vals - (u.values - phi.values)
    sub = u.interior_mask(margin * u.L) & np.isfinite(r)
    return r, float(np.abs(r[sub]).max())


def _c11_at_step(u: GridFunction, k: int, center: np.ndarray) -> float:
    v, n, h = u.values, u.n, u.h
    best = -np.inf
    for e in stencil_directions(u.dim):
        core = tuple(slice(k, n - k) for _ in range(u.dim))
        fwd = tuple(slice(k + k * c, n - k + k * c) for c in e)
        bwd = tuple(slice(k - k * c, n - k - k * c) for c in e)
        q = (v[fwd] + v[bwd] - 2 * v[core]) / (k * k * h * h * float(e @ e))
        sel = center[core]
        if np.any(sel):
            best = max(best, float(q[sel].max()))
    return best


def c11_seminorm(u: GridFunction, margin: float = 0.0, max_step: int = 4) -> float:
    """Largest second difference quotient over axis and diagonal offsets.

    Offsets are ``k e`` with ``k <= max_step``; centers are restricted to the
    subbox of the given margin (absolute length) when it is positive.
    """
    center = u.interior_mask(margin) if margin > 0 else np.ones(u.shape, dtype=bool)
    return max(_c11_at_step(u, k, center) for k in range(1, max_step + 1))


def is_nonsmooth(u: GridFunction, margin: float = 0.0) -> bool:
    """Second differences blowing up as the step shrinks indicate a kink."""
    center = u.interior_mask(margin) if margin > 0 else np.ones(u.shape, dtype=bool)
    return _c11_at_step(u, 1, center) > 2 * _c11_at_step(u, 4, center)


def _band_ratio(gap: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
    """``gap / w`` of the nearest free node, for every node; ``k`` band cells."""
    n = gap.shape[0]
    src = np.clip(np.arange(n), k, n - 1 - k)
    ratio = np.clip(gap / np.where(w > 0, w, np.inf), 0.0, 1.0)
    return ratio[np.ix_(*([src] * gap.ndim))]


class _Preconditioner:
    """``(I + A)^{-1}`` on the zero-padded periodic box, kernel convention."""

    def __init__(self, f: GridFunction, s: float, pad: float):
        self.box = PaddedBox.for_grid(f, pad)
        self.mult = 1.0 / (1.0 + self.box.symbol() ** s / kernel_constant(f.dim, s))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.box.crop(apply_multiplier(self.box.embed(r), self.mult))


def solve_global(phi: GridFunction, params: OperatorParams, config: SolverConfig | None = None,
                 barrier: GridFunction | None = None,
                 operator: Callable[[GridFunction, KernelSpec, np.ndarray], np.ndarray] | None = None,
                 progress: Callable[[tuple], None] | None = None) -> SolveState:
    """Iterate from ``phi`` until the residual on the subbox is below ``tol * scale``.

    ``barrier`` overrides the upper barrier ``w`` and ``operator`` overrides the
    operator field ``(u, kernel, mask) -> values``; both exist for testing.
    The regularized kernel ``nearpinned(eps_k)`` drives the iteration while
    ``eps_k = max(eps_min, eps0 gamma^k)`` decreases; a final phase iterates
    with the full kernel, which also certifies the result.
    """
    cfg = config or SolverConfig()
    if params.d != phi.dim:
        raise ValueError("operator dimension does not match the grid")
    if phi.cone is None:
        raise ValueError("solve needs a cone-asymptotic phi")
    lam = strict_convexity_probe(phi)
    if not lam > 0:
        raise ValueError(f"phi is not strictly convex (minimum Hessian eigenvalue {lam:.3g})")
    h, L = phi.h, phi.L
    w = build_upper_barrier(phi, params.s, cfg.pad) if barrier is None else barrier
    eps0 = 4 * h if cfg.eps0 is None else cfg.eps0
    eps_min = h if cfg.eps_min is None else cfg.eps_min
    if not 0 < eps_min <= eps0:
        raise ValueError("need 0 < eps_min <= eps0")
    # the band also covers the largest near-field ball, so windows stay on the grid
    band = max(cfg.fixed_margin * L, (np.ceil(eps0 / h) + 2) * h)
    free = phi.interior_mask(band)
    sub = phi.interior_mask(cfg.cert_margin * L)
    lower = phi.values
    upper = phi.values + w.values
    kband = int(np.argmax(np.abs(phi.axis) <= L - band + 1e-12 * L))  # band width in cells
    tol = cfg.tol * phi.scale
    P = _Preconditioner(phi, params.s, cfg.pad)

    def field_of(u, kernel):
        if operator is not None:
            vals = operator(u, kernel, free)
        else:
            vals = ma_field(u, params, kernel, free)
        r = np.where(free, vals - (u.values - lower), 0.0)
        return r, float(np.abs(r[sub]).max())

    def energy(r):
        # acceptance norm: the preconditioned step descends in l2, not in sup
        return float(np.sqrt(np.mean(r[free] ** 2)))

    def kernel_at(k):
        if k is None:
            return KernelSpec()
        return KernelSpec("nearpinned", max(eps_min, eps0 * cfg.gamma ** k))

    def record(st, c11):
        gap = st.u.values - lower
        row = (st.iteration, st.eps, st.tau, st.history[-1], c11,
               float(gap.min()), float((upper - st.u.values).min()))
        st.log.append(row)
        if progress is not None:
            progress(row)

    u = phi.with_values(phi.values, label=f"solve({phi.label})")
    state = SolveState(u, phi, w, params, tau=cfg.tau0)
    phase = 0  # index into the eps schedule; None in the full-kernel phase
    kernel = kernel_at(phase)
    r, sup = field_of(u, kernel)
    state.eps, state.residual = kernel.param or 0.0, r
    state.history.append(sup)
    record(state, c11_seminorm(u, cfg.cert_margin * L))
    best = (sup, u, r) if kernel.kind == "full" else None
    fresh = True  # no monotonicity test right after a kernel change
    while state.iteration < cfg.max_iters:
        if sup < tol:
            if kernel.kind == "full":
                state.converged = True
                break
            if kernel.param <= eps_min:
                phase, kernel = None, KernelSpec()
                r, sup = field_of(u, kernel)
                state.residual, state.eps, fresh = r, 0.0, True
                state.history.append(sup)
                best = (sup, u, r)
                continue
        step = P(r)
        trial = u.values + state.tau * step
        # the outer band follows the barrier at the ratio of the nearest free node
        trial[~free] = lower[~free] + _band_ratio(trial - lower, w.values, kband)[~free] * w.values[~free]
        env = convex_envelope(u.with_values(trial)).values
        cand = np.minimum(np.maximum(env, lower), upper)
        if np.array_equal(cand, u.values):
            state.flags += ("stagnated",)
            break
        nxt = phase + 1 if phase is not None else None
        new_kernel = kernel_at(nxt)
        v = u.with_values(cand)
        r_new, sup_new = field_of(v, new_kernel)
        same = new_kernel == kernel
        if same and not fresh and energy(r_new) > energy(r):
            state.tau /= 2
            if state.tau < cfg.tau_min:
                state.flags += ("damping-floor",)
                break
            continue
        u, r, sup, kernel, phase = v, r_new, sup_new, new_kernel, nxt
        fresh = not same
        state.iteration += 1
        state.u, state.residual, state.eps = u, r, kernel.param or 0.0
        state.history.append(sup)
        record(state, c11_seminorm(u, cfg.cert_margin * L))
        if kernel.kind == "full" and (best is None or sup <= best[0]):
            best = (sup, u, r)
    else:
        if sup < tol and kernel.kind == "full":
            state.converged = True
    if not state.converged:
        state.flags += ("not-converged",)
        if best is not None and best[0] < sup:
            state.u, state.residual = best[1], best[2]
            state.history.append(best[0])
    state.certificate = certify(state, cfg)
    return state


def certify(state: SolveState, cfg: SolverConfig | None = None) -> dict:
    """Sandwich, residual and C^{1,1} checks of the final iterate."""
    cfg = cfg or SolverConfig()
    u, phi = state.u, state.phi
    margin = cfg.cert_margin * u.L
    gap_lo = u.values - phi.values
    gap_hi = phi.values + state.w.values - u.values
    scale = phi.scale
    return {
        "sup_residual": state.history[-1] if state.history else np.nan,
        "tol": cfg.tol * scale,
        "scale": scale,
        "min_gap_lower": float(gap_lo.min()),
        "min_gap_upper": float(gap_hi.min()),
        "sandwich": bool(gap_lo.min() >= -1e-12 * scale and gap_hi.min() >= -1e-12 * scale),
        "c11": c11_seminorm(u, margin),
        "c11_phi": c11_seminorm(phi, margin),
        "convex": bool(u.convex),
    }


def symmetry_defect(u: GridFunction) -> float:
    """Largest change of ``u`` under the reflections and axis swaps of the grid."""
    v = u.values
    out = 0.0
    for k in range(u.dim):
        out = max(out, float(np.abs(v - np.flip(v, axis=k)).max()))
    if u.dim >= 2:
        out = max(out, float(np.abs(v - np.swapaxes(v, 0, 1)).max()))
    return out


# comparison and the Dirichlet nonexistence demo --------------------------------

@dataclass
class Verdict:
    """``ordered``, ``not-ordered``, ``hypothesis-failed`` or ``no-solution-witness``."""

    verdict: str
    location: np.ndarray | None = None
    detail: dict = dfield(default_factory=dict)


def comparison_check(u: GridFunction, v: GridFunction, f: np.ndarray, omega: np.ndarray,
                     params: OperatorParams, kernel: KernelSpec = KernelSpec(),
                     tol: float | None = None) -> Verdict:
    """Test ``MA u - u >= f >= MA v - v`` on ``omega`` and then ``u <= v``.

    ``f`` and ``omega`` are grid shaped; ``u <= v`` outside ``omega`` is part of
    the hypothesis.
    """
    omega = np.asarray(omega, dtype=bool)
    f = np.broadcast_to(np.asarray(f, dtype=float), u.shape)
    tol = 1e-6 * max(u.scale, v.scale) if tol is None else tol
    out = ~omega
    diff = u.values - v.values
    if np.any(diff[out] > tol):
        i = np.unravel_index(np.argmax(np.where(out, diff, -np.inf)), u.shape)
        return Verdict("hypothesis-failed", u.coords(i), {"reason": "u > v outside omega"})
    mu = ma_field(u, params, kernel, omega) - u.values
    mv = ma_field(v, params, kernel, omega) - v.values
    sub = np.where(omega, f - mu, -np.inf)
    sup = np.where(omega, mv - f, -np.inf)
    if sub.max() > tol:
        i = np.unravel_index(np.argmax(sub), u.shape)
        return Verdict("hypothesis-failed", u.coords(i),
                       {"reason": "u is not a subsolution", "defect": float(sub.max())})
    if sup.max() > tol:
        i = np.unravel_index(np.argmax(sup), u.shape)
        return Verdict("hypothesis-failed", u.coords(i),
                       {"reason": "v is not a supersolution", "defect": float(sup.max())})
    if diff.max() > tol:
        i = np.unravel_index(np.argmax(diff), u.shape)
        return Verdict("not-ordered", u.coords(i), {"excess": float(diff.max())})
    return Verdict("ordered")


def dirichlet_demo(s: float = 1.5, f0: float = 0.01, L: float = 4.0, h: float = 0.05,
                   dim: int = 1) -> Verdict:
    """Exterior data ``|y|`` outside the unit ball and right-hand side ``f0``.

    A convex solution would lie below the envelope ``U`` of the exterior data,
    and comparison then rules it out wherever ``MA U > f0`` in the ball.
    """
    params = OperatorParams(s, dim)
    ax = -L + h * np.arange(int(round(2 * L / h)) + 1)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * dim), indexing="ij")], axis=1)
    r = np.linalg.norm(pts, axis=1)
    shape = (len(ax),) * dim
    cone = QuadraticCone(np.eye(dim), np.zeros(dim))
    data = GridFunction(r.reshape(shape), L, h, cone=cone, o_max=1e-9, label="|y|")
    exterior = (r >= 1 - 1e-12).reshape(shape)
    U = convex_envelope(data, mask=exterior)
    ball = ~exterior
    vals = np.full(shape, np.nan)
    for idx in zip(*np.nonzero(ball)):
        vals[idx] = eval_ma(U, U.coords(idx), params).value
    excess = np.where(ball, vals - f0, -np.inf)
    i = np.unravel_index(np.argmax(excess), shape)
    detail = {"f": f0, "s": s, "ma_min": float(np.nanmin(vals)), "ma_max": float(np.nanmax(vals)),
              "nodes_in_ball": int(ball.sum()), "nodes_violating": int((excess > 0).sum())}
    if excess[i] > 0:
        return Verdict("no-solution-witness", U.coords(i), detail)
    return Verdict("no-witness", None, detail)
