"""Operator values at many nodes at once.

The single-point path in :mod:`nlma.operator` is the reference.  This module
repeats its regular case (finite-difference Hessian as the local model,
singleton slope) inside one compiled loop so that whole residual fields are
affordable.  Nodes outside the regular case are handed back to the reference
path.
"""

from __future__ import annotations

import numba
import numpy as np

from .cones import QuadraticCone, sphere_quadrature, unit_ball_volume
from .grid import GridFunction
from .operator import KernelSpec, OperatorParams, eval_ma
from .profile import T_A_CELLS, TAIL_STRETCH

N_NEAR = 24
LEVELS_PER_DECADE = 48
LAM_FLOOR = 1e-4  # model eigenvalue floor relative to the largest one
CV_RAD = 19  # window half-width in cells; fixed because t_b / lam is fixed


def unit_volumes(cone, B: np.ndarray) -> np.ndarray:
    """``V(b)`` for every row of ``B``."""
    if isinstance(cone, QuadraticCone) and cone.sign > 0:
        d = cone.dim
        C = B - cone.p
        beta2 = np.einsum("ki,ij,kj->k", C, np.linalg.inv(cone.M), C)
        with np.errstate(divide="ignore", invalid="ignore"):
            V = unit_ball_volume(d) * (1 - beta2) ** (-(d + 1) / 2) / np.sqrt(np.linalg.det(cone.M))
        return np.where(beta2 < 1 - 1e-14, V, np.inf)
    return np.array([cone.unit_volume(b) for b in B])


def fd_hessians(f: GridFunction, flat: np.ndarray) -> np.ndarray:
    """Finite-difference Hessians at interior nodes, shape ``(K, d, d)``."""
    d, h, u = f.dim, f.h, f.values
    idx = np.array(np.unravel_index(flat, f.shape)).T
    eye = np.eye(d, dtype=int)

    def at(shift):
        j = idx + shift
        return u[tuple(j.T)]

    u0 = at(np.zeros(d, dtype=int))
    H = np.empty((len(flat), d, d))
    for k in range(d):
        H[:, k, k] = (at(eye[k]) + at(-eye[k]) - 2 * u0) / h ** 2
        for m in range(k):
            H[:, k, m] = H[:, m, k] = (at(eye[k] + eye[m]) + at(-eye[k] - eye[m])
                                       - at(eye[k] - eye[m]) - at(-eye[k] + eye[m])) / (4 * h ** 2)
    return H


@numba.njit(cache=True)
def _counts(inc, w, vol, levels, out):
    m = levels.shape[0]
    full = np.zeros(m + 1)
    for i in range(inc.shape[0]):
        if vol[i] == 0:
            continue
        lo = inc[i] - w[i]
        hi = inc[i] + w[i]
        j1 = np.searchsorted(levels, hi, side="right")
        if w[i] > 0:
            j0 = np.searchsorted(levels, lo, side="right")
            for j in range(j0, j1):
                out[j] += vol[i] * (levels[j] - lo) / (2 * w[i])
        full[j1] += vol[i]
    acc = 0.0
    for j in range(m):
        acc += full[j]
        out[j] += acc


@numba.njit(cache=True)
def _gint(M, C, p):
    return C * M ** (1 - p) / (1 - p)


@numba.njit(cache=True)
def _integrate(t, M, C, p):
    total = 0.0
    for j in range(t.shape[0] - 1):
        dt = t[j + 1] - t[j]
        dM = M[j + 1] - M[j]
        if abs(dM) <= 1e-7 * abs(M[j + 1]):
            total += C * (0.5 * (M[j] + M[j + 1])) ** (-p) * dt
        else:
            total += (_gint(M[j + 1], C, p) - _gint(M[j], C, p)) / dM * dt
    return total


@numba.njit(cache=True)
def _ipow(r, d):
    out = r
    for _ in range(d - 1):
        out *= r
    return out


@numba.njit(cache=True)
def _batch(u, pts, grad, nodes, B, H, V, kap, kbar, kinf, slack, rho_box, wdirs, qdirs, qw_dirs,
           offs, grid_n, h, s, C, eps):
    """Full (``eps <= 0``) or near-pinned values at ``nodes``; NaN marks a fallback."""
    K = nodes.shape[0]
    N, d = pts.shape
    p = s / d
    bd = np.pi if d == 2 else (2.0 if d == 1 else 4.0 * np.pi / 3.0)
    out = np.empty(K)
    inc = np.empty(N)
    w = np.empty(N)
    vol = np.full(N, h ** d)
    W = offs.shape[0]
    qi = np.empty(W)
    qwv = np.empty(W)
    ui = np.empty(W)
    uw = np.empty(W)
    fr = np.empty(W)
    rbd = np.empty(rho_box.shape[0])
    for m in range(rho_box.shape[0]):
        rbd[m] = _ipow(rho_box[m], d)
    ok = np.empty(W, dtype=np.bool_)
    jof = np.empty(W, dtype=np.int64)
    for k in range(K):
        i = nodes[k]
        b = B[k]
        Hk = H[k]
        # quadratic model, eigenvalues floored at a fraction of the largest
        Hk = Hk.copy()
        if d == 1:
            lam = Hk[0, 0]
            lmax = lam
        elif d == 2:
            tr = Hk[0, 0] + Hk[1, 1]
            det = Hk[0, 0] * Hk[1, 1] - Hk[0, 1] * Hk[1, 0]
            disc = np.sqrt(max(tr * tr / 4 - det, 0.0))
            lam = tr / 2 - disc
            lmax = tr / 2 + disc
        else:
            ev = np.linalg.eigvalsh(Hk)
            lam = ev[0]
            lmax = ev[d - 1]
        if not lmax > 1e-8:
            out[k] = np.nan
            continue
        if lam < LAM_FLOOR * lmax:
            for m in range(d):
                Hk[m, m] += LAM_FLOOR * lmax - lam
            lam = LAM_FLOOR * lmax
        if d == 1:
            det = Hk[0, 0]
        elif d == 2:
            det = Hk[0, 0] * Hk[1, 1] - Hk[0, 1] * Hk[1, 0]
        else:
            det = np.linalg.det(Hk)
        c_q = bd * 2.0 ** (d / 2) / np.sqrt(det)
        T_full = 0.0
        for j in range(N):
            acc = u[j] - u[i]
            gg = 0.0
            for m in range(d):
                acc -= b[m] * (pts[j, m] - pts[i, m])
                gg += (grad[j, m] - b[m]) ** 2
            inc[j] = max(acc, 0.0)
            w[j] = 0.5 * h * np.sqrt(gg)
            T_full = max(T_full, inc[j] + w[j])
        Vk = V[k]
        t_inf = np.inf
        if not np.isfinite(Vk):
            t_inf = max(kinf[k], 0.0)
            if t_inf <= 0:
                out[k] = 0.0
                continue
            T_far = T_full
        else:
            T_far = T_full
            for m in range(slack.shape[1]):
                T_far = max(T_far, kap[k, m] + rho_box[m] * slack[k, m])
            T_far *= TAIL_STRETCH
        t_top = min(T_far, t_inf)
        t_a = min(lam * (T_A_CELLS * h) ** 2 / 2, 0.5 * t_top)
        n_mid = max(16, int(np.ceil(np.log10(t_top / t_a) * LEVELS_PER_DECADE)) + 1)
        n_lev = N_NEAR + n_mid
        lev = np.empty(n_lev)
        for j in range(N_NEAR):
            lev[j] = t_a * 10.0 ** (-6.0 + 6.0 * j / N_NEAR)
        for j in range(n_mid):
            lev[N_NEAR + j] = t_a * (t_top / t_a) ** (j / (n_mid - 1))
        mu = np.zeros(n_lev)
        _counts(inc, w, vol, lev, mu)
        # exterior of the box under the cone model
        for j in range(n_lev):
            acc = 0.0
            for m in range(slack.shape[1]):
                tk = lev[j] - kap[k, m]
                if slack[k, m] <= 0 or tk <= 0:
                    continue
                r = tk / slack[k, m]
                if r > rho_box[m]:
                    acc += wdirs[m] * (_ipow(r, d) - rbd[m])
            mu[j] += acc / d
        # control variate in a fixed window
        inside = True
        near_in = True
        rad_near = int(np.ceil(eps / h)) + 1 if eps > 0 else 0
        for m in range(d):
            ci = (i // grid_n ** (d - 1 - m)) % grid_n
            if ci - CV_RAD < 0 or ci + CV_RAD > grid_n - 1:
                inside = False
            if ci - rad_near < 0 or ci + rad_near > grid_n - 1:
                near_in = False
        for a in range(W):
            j = i
            good = True
            for m in range(d):
                st = int(round(offs[a, m] / h))
                ci = (i // grid_n ** (d - 1 - m)) % grid_n + st
                if ci < 0 or ci > grid_n - 1:
                    good = False
                j += st * grid_n ** (d - 1 - m)
            ok[a] = good
            jof[a] = j
            q = 0.0
            gq = 0.0
            for m in range(d):
                hy = 0.0
                for n2 in range(d):
                    hy += Hk[m, n2] * offs[a, n2]
                q += 0.5 * offs[a, m] * hy
                gq += hy * hy
            qi[a] = q
            qwv[a] = 0.5 * h * np.sqrt(gq)
        t_b = 4 * t_a
        t_c = lam * h * h / 2
        if inside:
            cq = np.zeros(n_lev)
            _counts(qi, qwv, vol[:W], lev, cq)
            for j in range(n_lev):
                mq = c_q * lev[j] ** (d / 2)
                Wt = min(max(np.log(2 * t_b / lev[j]) / np.log(2.0), 0.0), 1.0)
                W1 = min(max(np.log(lev[j] / t_c) / np.log(2.0), 0.0), 1.0)
                mu[j] += Wt * (mq - cq[j]) - (1 - W1) * (mu[j] - cq[j])
        else:
            for j in range(n_lev):
                if lev[j] < t_a:
                    mu[j] = c_q * lev[j] ** (d / 2)
        run = 0.0
        for j in range(n_lev):
            run = max(run, mu[j])
            mu[j] = run
        near = 0.0
        shift = 0.0
        if eps > 0:
            # near field: quadratic part exact, remainder over cells in the ball
            shift = bd * eps ** d
            tr = 0.0
            for m in range(d):
                tr += Hk[m, m]
            near = bd * tr * eps ** (2 - s) / (2 * (2 - s))
            for a in range(W):
                r2 = 0.0
                for m in range(d):
                    r2 += offs[a, m] ** 2
                r = np.sqrt(r2)
                fr[a] = min(max((eps - r) / h + 0.5, 0.0), 1.0) * h ** d
                ui[a] = 0.0
                uw[a] = 0.0
                if fr[a] == 0 or not ok[a]:
                    fr[a] = 0.0
                    continue
                j = jof[a]
                val = u[j] - u[i]
                for m in range(d):
                    val -= b[m] * offs[a, m]
                ui[a] = max(val, 0.0)
                uw[a] = w[j]
                if r > 0:
                    near += (val - qi[a]) * r ** (-d - s) * fr[a]
            if not near_in:
                out[k] = np.nan
                continue
            # inner measure: model plus counted deviation
            mu_in = np.zeros(n_lev)
            c_in = np.zeros(n_lev)
            _counts(ui, uw, fr, lev, mu_in)
            _counts(qi, qwv, fr, lev, c_in)
            for j in range(n_lev):
                acc = 0.0
                for m in range(qdirs.shape[0]):
                    qq = 0.0
                    for a2 in range(d):
                        for b2 in range(d):
                            qq += qdirs[m, a2] * Hk[a2, b2] * qdirs[m, b2]
                    rq = np.sqrt(2 * lev[j] / qq)
                    acc += qw_dirs[m] * min(rq, eps) ** d
                model_in = acc / d
                if lev[j] < t_a:
                    mu_in[j] = model_in
                else:
                    mu_in[j] = mu_in[j] - c_in[j] + model_in
            for j in range(n_lev):
                mu[j] = max(mu[j] - mu_in[j], 0.0) + shift
        # integrate
        t0 = lev[0]
        if shift == 0:
            total = C * c_q ** (-p) * t0 ** (1 - p * d / 2) / (1 - p * d / 2)
        else:
            total = C * shift ** (-p) * t0
        total += _integrate(lev, mu, C, p)
        if np.isfinite(t_inf):
            out[k] = total + near
        else:
            out[k] = total + C * Vk ** (-p) * (lev[n_lev - 1] - kbar[k]) ** (1 - s) / (s - 1) + near
    return out


def eval_ma_field(f: GridFunction, params: OperatorParams, kernel: KernelSpec = KernelSpec(),
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Operator values on the nodes selected by ``mask`` (NaN elsewhere).

    Slopes are central-difference gradients.  Supported kernels: ``full`` and
    ``nearpinned``; nodes outside the regular case use :func:`eval_ma`.
    """
    if kernel.kind not in ("full", "nearpinned"):
        raise ValueError("field evaluation supports full and nearpinned kernels")
    if f.cone is None:
        raise ValueError("field evaluation needs a cone-asymptotic function")
    d, h = f.dim, f.h
    mask = f.interior_mask(2 * h) if mask is None else np.asarray(mask, dtype=bool)
    inner = np.zeros(f.shape, dtype=bool)
    inner[tuple(slice(1, f.n - 1) for _ in range(d))] = True
    flat = np.flatnonzero((mask & inner).ravel())
    grad = f.gradient.reshape(-1, d)
    B = grad[flat]
    H = fd_hessians(f, flat)
    V = unit_volumes(f.cone, B)
    X = f.points[flat]
    base = np.einsum("ki,ki->k", B, X) - f.values.ravel()[flat]
    kinf = f.tail_offset + base
    dirs, wdirs = sphere_quadrature(d, 360 if d == 2 else 0)
    slack = f.cone(dirs)[None, :] - B @ dirs.T
    kap = f.ray_offsets(dirs)[None, :] + base[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        wk = np.where(slack > 0, wdirs * np.abs(slack) ** (-float(d)), 0.0)
        kbar = np.where(np.isfinite(V), (wk * kap).sum(axis=1) / wk.sum(axis=1), kinf)
    rho_box = (f.L + h / 2) / np.abs(dirs).max(axis=1)
    qdirs, qw = sphere_quadrature(d, 120 if d == 2 else 0)
    o = np.arange(-CV_RAD, CV_RAD + 1) * h
    offs = np.stack([m.ravel() for m in np.meshgrid(*([o] * d), indexing="ij")], axis=1)
    eps = kernel.param if kernel.kind == "nearpinned" else 0.0
    if eps > CV_RAD * h - h:
        raise ValueError(f"near-pinned radius {eps} exceeds the field window")
    vals = _batch(f.values.ravel(), f.points, grad, flat, B, H, V, kap, kbar, kinf, slack, rho_box, wdirs,
                  qdirs, qw, offs, f.n, h, params.s, params.c_ma, eps)
    for k in np.flatnonzero(~np.isfinite(vals)):
        if np.isinf(vals[k]):
            continue
        idx = tuple(int(i) for i in np.unravel_index(flat[k], f.shape))
        try:
            vals[k] = eval_ma(f, f.coords(idx), params, kernel).value
        except ValueError:
            vals[k] = eval_ma(f, f.coords(idx), params).value
    out = np.full(f.values.size, np.nan)
    out[flat] = vals
    return out.reshape(f.shape)


def modulus_exponent(vals: np.ndarray, h: float, steps=(1, 2, 4, 8, 16)) -> float:
    """Log-log slope of the oscillation modulus along grid lines.

    ``omega(k h) = max |F(x + k h e_i) - F(x)|`` over all axes and finite
    pairs; the exponent is the least-squares slope of ``log omega`` against
    ``log(k h)``.
    """
    vals = np.asarray(vals, dtype=float)
    om = []
    for k in steps:
        m = 0.0
        for ax in range(vals.ndim):
            a = np.take(vals, np.arange(k, vals.shape[ax]), axis=ax)
            b = np.take(vals, np.arange(vals.shape[ax] - k), axis=ax)
            diff = np.abs(a - b)
            m = max(m, float(np.nanmax(diff)) if np.isfinite(diff).any() else 0.0)
        om.append(m)
    return float(np.polyfit(np.log(np.asarray(steps) * h), np.log(om), 1)[0])
