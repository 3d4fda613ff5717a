import numpy as np
import pytest

from nlma.grid import build_grid_function
from nlma.operator import KernelSpec, OperatorParams
from nlma.solver import (SolverConfig, c11_seminorm, comparison_check, dirichlet_demo,
                         is_nonsmooth, residual, solve_global, strict_convexity_probe,
                         symmetry_defect)


@pytest.fixture(scope="module")
def small_solve():
    phi = build_grid_function("smoothcone:a=1", L=25.575, h=0.05)
    P = OperatorParams(1.5, 1)
    return phi, P, solve_global(phi, P)


def test_strict_convexity_probe():
    phi = build_grid_function("smoothcone:a=1", L=4.0, h=0.1)
    assert strict_convexity_probe(phi) > 0
    aff = build_grid_function("affine:p=1", L=4.0, h=0.1)
    assert strict_convexity_probe(aff) == pytest.approx(0.0, abs=1e-9)


def test_solve_rejects_non_strictly_convex():
    aff = build_grid_function("affine:p=1", L=4.0, h=0.1)
    with pytest.raises(ValueError, match="strictly convex"):
        solve_global(aff, OperatorParams(1.5, 1))


def test_c11_seminorm_of_quadratic():
    q = build_grid_function("quadratic:A=3", L=2.0, h=0.05)
    assert c11_seminorm(q) == pytest.approx(3.0, rel=1e-9)
    kink = build_grid_function("maxplanes:P=1,-1", L=2.0, h=0.05)
    assert is_nonsmooth(kink)
    assert not is_nonsmooth(q)


def test_stub_operator_fixed_point():
    # with MA replaced by a constant c the fixed point is u = phi + c
    phi = build_grid_function("smoothcone:a=1", L=6.0, h=0.1)
    c = 0.05
    stub = lambda u, kernel, mask: np.full(u.shape, c)
    w = phi.with_values(np.ones(phi.shape))
    st = solve_global(phi, OperatorParams(1.5, 1), SolverConfig(tol=3e-3), barrier=w, operator=stub)
    assert st.converged
    sub = phi.interior_mask(0.2 * phi.L)
    assert np.abs((st.u.values - phi.values)[sub] - c).max() < 3e-3 * phi.scale


def test_solve_1d_certificate(small_solve):
    phi, P, st = small_solve
    cert = st.certificate
    assert st.converged and cert["sandwich"] and cert["convex"]
    assert cert["sup_residual"] <= cert["tol"]
    assert cert["c11"] <= 1.1 * cert["c11_phi"]
    assert symmetry_defect(st.u) < 1e-8
    # the log has one row per accepted iterate plus the initial state
    assert len(st.log) == st.iteration + 1 or len(st.log) == st.iteration
    assert all(len(row) == 7 for row in st.log)


def test_residual_of_solution_is_small(small_solve):
    phi, P, st = small_solve
    r, sup = residual(st.u, phi, P)
    assert sup <= 2e-3 * phi.scale


def test_comparison_orders_solution_and_barriers(small_solve):
    phi, P, st = small_solve
    omega = phi.interior_mask(0.2 * phi.L)
    upper = phi.with_values(phi.values + st.w.values)
    v = comparison_check(phi, upper, 0.0, omega, P, tol=1e-2 * phi.scale)
    assert v.verdict in ("ordered", "hypothesis-failed")
    if v.verdict == "hypothesis-failed":
        assert "reason" in v.detail


def test_comparison_detects_violated_hypothesis():
    phi = build_grid_function("smoothcone:a=1", L=6.0, h=0.1)
    lifted = phi.with_values(phi.values + 1.0)
    omega = phi.interior_mask(0.5 * phi.L)
    v = comparison_check(lifted, phi, 0.0, omega, OperatorParams(1.5, 1))
    assert v.verdict == "hypothesis-failed"


def test_dirichlet_demo_witness():
    v = dirichlet_demo(1.5, 0.01, L=4.0, h=0.05)
    assert v.verdict == "no-solution-witness"
    assert v.detail["nodes_violating"] >= 1
    # U = |y| on the ball boundary gives MA U = 2 / (s (s - 1)) inside
    assert v.detail["ma_min"] == pytest.approx(2 / (1.5 * 0.5), rel=1e-3)
