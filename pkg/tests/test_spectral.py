import numpy as np
import pytest
from scipy.special import gamma

from nlma.grid import GridFunction, build_grid_function
from nlma.spectral import (AliasingError, build_upper_barrier, direct_frac_laplacian, fit_decay,
                           frac_laplacian, kernel_constant, resolvent_apply)

from oracles import fraclap_1d_direct


def test_kernel_constant_one_dimension():
    # C_{1,s} = s 2^{s-1} Gamma((1+s)/2) / (sqrt(pi) Gamma(1-s/2))
    s = 1.5
    ref = s * 2 ** (s - 1) * gamma((1 + s) / 2) / (np.sqrt(np.pi) * gamma(1 - s / 2))
    assert kernel_constant(1, s) == pytest.approx(ref, rel=1e-14)


def test_plane_wave_is_eigenfunction():
    L, h = 5.0, 0.05
    n = int(round(2 * L / h)) + 1
    ax = -L + h * np.arange(n)
    k = 3 * np.pi / L
    pw = GridFunction(np.sin(k * ax), L, h, exact=lambda y: np.sin(k * y[..., 0]))
    out = frac_laplacian(pw, 1.5).values
    assert np.abs(out - k ** 1.5 * np.sin(k * ax)).max() < 1e-9


def test_affine_is_annihilated():
    f = build_grid_function("affine:p=0.3,c=1", L=20.0, h=0.05)
    assert np.abs(frac_laplacian(f, 1.5).values).max() < 1e-8


def test_gaussian_against_direct_quadrature():
    g = build_grid_function("gaussian:width=1", L=10.0, h=0.05)
    fun = lambda y: np.exp(-y * y / 2)
    out = frac_laplacian(g, 1.5, "kernel", pad=8).values
    for x in (0.0, 1.0):
        assert out[g.index_of([x])] == pytest.approx(fraclap_1d_direct(fun, x, 1.5), abs=5e-5)


def test_periodic_image_error_decays_with_padding():
    # images of the |x|^{-1-s} tail contribute ~ (pad L)^{-1-s}
    g = build_grid_function("gaussian:width=1", L=10.0, h=0.05)
    ref = fraclap_1d_direct(lambda y: np.exp(-y * y / 2), 0.0, 1.5)
    errs = [abs(frac_laplacian(g, 1.5, "kernel", pad=p).values[g.index_of([0.0])] - ref) for p in (2, 4, 8)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.allclose(rates, 2.5, atol=0.1)


def test_cone_split_against_direct_sum():
    f = build_grid_function("smoothcone:a=2", L=20.0, h=0.05)
    A = frac_laplacian(f, 1.5, "kernel").values
    X = f.points[::40]
    ref = direct_frac_laplacian(f.exact, X, 1.5, n_rad=96)
    assert np.abs(A[::40] - ref).max() < 5e-3 * np.abs(ref).max()


def test_resolvent_inverts_shifted_operator():
    g = build_grid_function("gaussian:width=1", L=10.0, h=0.05)
    u = resolvent_apply(g, 1.5)
    back = u.values + frac_laplacian(u.with_values(u.values, exact=None), 1.5).values
    # the forward check zero-pads u outside the box, so agreement is to the tail size
    core = np.abs(g.axis) < 5
    assert np.abs(back - g.values)[core].max() < 1e-4


def test_resolvent_refuses_aliased_input():
    f = build_grid_function("affine:p=1", L=2.0, h=0.1)
    with pytest.raises(AliasingError):
        resolvent_apply(f.with_values(f.values, exact=None), 1.5)


def test_barrier_decay_and_sign():
    phi = build_grid_function("smoothcone:a=1", L=20.0, h=0.05)
    w = build_upper_barrier(phi, 1.5)
    assert w.values.min() > 0
    C, e = w.meta["tail"]
    assert abs(e - (1 - 1.5)) <= 0.15
    assert fit_decay(w) == pytest.approx((C, e))
