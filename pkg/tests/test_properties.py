"""Property-based checks of invariants that hold for every input."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from nlma.cli import fmt
from nlma.grid import build_grid_function, parse_builder_spec
from nlma.hull import convex_envelope, supporting_plane_check
from nlma.operator import KernelSpec, OperatorParams, eval_ma
from nlma.solver import c11_seminorm

from oracles import brute_envelope_1d, lp_supporting_plane

SETTINGS = settings(max_examples=25, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow])

orders = st.floats(1.15, 1.9)
finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def _data_1d(seed, n=31, noise=0.3):
    rng = np.random.default_rng(seed)
    f = build_grid_function("affine:p=0", L=1.5, h=0.1)
    return f.with_values(np.abs(f.axis) + noise * rng.standard_normal(f.n))


@SETTINGS
@given(st.integers(0, 10_000))
def test_envelope_below_convex_idempotent(seed):
    g = _data_1d(seed)
    env = convex_envelope(g)
    assert np.all(env.values <= g.values + 1e-12)
    assert np.allclose(env.values, brute_envelope_1d(g.axis, g.values), atol=1e-12)
    assert np.allclose(convex_envelope(env).values, env.values, atol=1e-12)


@SETTINGS
@given(st.integers(0, 10_000))
def test_plane_check_matches_lp(seed):
    g = _data_1d(seed, noise=0.05)
    k = 1 + seed % (g.n - 2)
    tol = 1e-10 * g.scale
    assert bool(supporting_plane_check(g, (k,))) == lp_supporting_plane(g.points, g.values, k, tol)


@SETTINGS
@given(st.floats(-3, 3), st.floats(-3, 3), orders)
def test_affine_has_zero_value(p, c, s):
    f = build_grid_function(f"affine:p={p!r},c={c!r}", L=6.0, h=0.1)
    assert eval_ma(f, [0.5], OperatorParams(s, 1)).value == 0.0


@SETTINGS
@given(st.floats(0.5, 2.0), st.floats(-0.8, 0.8), orders)
def test_adding_a_plane_leaves_value_unchanged(a, p, s):
    P = OperatorParams(s, 1)
    base = build_grid_function(f"smoothcone:a={a!r}", L=12.0, h=0.05)
    tilted = build_grid_function(f"smoothcone:a={a!r},p={p!r}", L=12.0, h=0.05)
    v0 = eval_ma(base, [0.5], P).value
    v1 = eval_ma(tilted, [0.5], P).value
    assert abs(v1 - v0) <= 1e-2 * v0


@SETTINGS
@given(st.floats(0.5, 3.0), orders)
def test_degree_one_homogeneity(lam, s):
    # lam * (sqrt(1+y^2) - 1) is the smooth cone with a = lam, M = lam^2
    P = OperatorParams(s, 1)
    f = build_grid_function("smoothcone:a=1", L=12.0, h=0.05)
    g = build_grid_function(f"smoothcone:a={lam!r},M={lam * lam!r}", L=12.0, h=0.05)
    ref = lam * eval_ma(f, [0.0], P).value
    assert abs(eval_ma(g, [0.0], P).value - ref) <= 5e-3 * ref


@SETTINGS
@given(st.floats(1.0, 1e8), orders)
def test_capped_monotone_and_below_full(n, s):
    P = OperatorParams(s, 1)
    f = build_grid_function("smoothcone:a=1", L=10.0, h=0.05)
    lo = eval_ma(f, [0.0], P, KernelSpec("capped", n)).value
    hi = eval_ma(f, [0.0], P, KernelSpec("capped", 4 * n)).value
    full = eval_ma(f, [0.0], P).value
    assert 0 <= lo <= hi * (1 + 1e-9) and hi <= full * (1 + 1e-9)


@SETTINGS
@given(st.floats(0.2, 3.0))
def test_c11_of_quadratic_is_its_curvature(A):
    q = build_grid_function(f"quadratic:A={A!r}", L=2.0, h=0.05)
    assert abs(c11_seminorm(q) - A) <= 1e-9 * max(A, 1)


@SETTINGS
@given(finite)
def test_fmt_roundtrip(v):
    assert float(fmt(v)) == float(f"{v:.12g}")


@SETTINGS
@given(st.lists(st.floats(-100, 100, allow_nan=False).filter(lambda x: x == x), min_size=1, max_size=4))
def test_builder_spec_roundtrip(vals):
    text = "smoothcone:M=" + ",".join(repr(v) for v in vals)
    name, params = parse_builder_spec(text)
    assert name == "smoothcone" and params["M"] == vals
