import numpy as np
import pytest

from nlma.cones import QuadraticCone, sphere_quadrature, unit_ball_volume
from nlma.grid import (GridFunction, build_grid_function, grid_size, parse_builder_spec,
                       read_grid, write_grid)
from nlma.hull import convex_envelope, subdifferential_at, supporting_plane_check

from oracles import brute_envelope_1d, lp_supporting_plane, unit_ball


def test_grid_size_and_nodes():
    assert grid_size(1.0, 0.25) == 9
    f = build_grid_function("affine:p=2,c=1", L=1.0, h=0.25)
    assert f.axis[0] == -1.0 and f.axis[-1] == 1.0
    assert np.allclose(f.values, 2 * f.axis + 1)
    with pytest.raises(ValueError):
        grid_size(1.0, 0.3)


def test_builder_spec_parsing():
    name, params = parse_builder_spec("smoothcone:a=2,M=4,0,0,1")
    assert name == "smoothcone"
    assert params["a"] == [2.0] and params["M"] == [4.0, 0.0, 0.0, 1.0]
    with pytest.raises(ValueError, match="'=3'"):
        parse_builder_spec("smoothcone:a=1,=3")


def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown function family"):
        build_grid_function("bogus:a=1", L=1.0, h=0.5)


def test_unit_ball_volume_matches_gamma_formula():
    for d in (1, 2, 3):
        assert unit_ball_volume(d) == pytest.approx(unit_ball(d), rel=1e-14)


def test_sphere_quadrature_integrates_constants():
    dirs, w = sphere_quadrature(2, 64)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    # weights sum to the sphere area 2 pi
    assert w.sum() == pytest.approx(2 * np.pi)


def test_grid_roundtrip(tmp_path):
    f = build_grid_function("smoothcone:a=1", L=2.0, h=0.5, dim=2)
    path = tmp_path / "f.txt"
    write_grid(f, path, tail=(1.5, -0.5))
    g = read_grid(path)
    assert np.array_equal(g.values, f.values)
    assert g.meta["tail"] == (1.5, -0.5)


def test_values_shape_checked():
    with pytest.raises(ValueError, match="do not match"):
        GridFunction(np.zeros(4), 1.0, 0.5)


def test_envelope_matches_chord_oracle_1d():
    rng = np.random.default_rng(3)
    f = build_grid_function("affine:p=0", L=1.0, h=0.05)
    z = np.abs(f.axis) + 0.2 * rng.standard_normal(f.n)
    env = convex_envelope(f.with_values(z))
    assert np.allclose(env.values, brute_envelope_1d(f.axis, z), atol=1e-12)


def test_envelope_is_below_and_convex_2d():
    rng = np.random.default_rng(4)
    f = build_grid_function("quadratic:A=1,0,0,1", L=1.0, h=0.1, dim=2)
    g = f.with_values(f.values + 0.05 * rng.standard_normal(f.shape))
    env = convex_envelope(g)
    assert np.all(env.values <= g.values + 1e-12)
    assert env.second_differences().min() >= -1e-10


def test_plane_check_agrees_with_lp_oracle():
    rng = np.random.default_rng(5)
    f = build_grid_function("affine:p=0", L=1.0, h=0.1)
    z = f.axis ** 2 + 0.02 * rng.standard_normal(f.n)
    g = f.with_values(z)
    for k in range(1, f.n - 1):
        ours = bool(supporting_plane_check(g, (k,)))
        assert ours == lp_supporting_plane(f.points, z, k, tol=1e-10 * g.scale)


def test_plane_check_witness_on_concave():
    f = build_grid_function("negcone:a=1", L=4.0, h=0.1)
    chk = supporting_plane_check(f, [0.0])
    assert not chk.ok and chk.witness is not None and "nonconvex" in chk.flags


def test_subdifferential_of_kink():
    f = build_grid_function("maxplanes:P=1,-1", L=2.0, h=0.1)
    sd = subdifferential_at(f, [0.0])
    assert not sd.singleton
    assert sorted(sd.vertices[:, 0]) == pytest.approx([-1.0, 1.0])
    smooth = subdifferential_at(f, [1.0])
    assert smooth.singleton and smooth.vertices[0, 0] == pytest.approx(1.0)


def test_quadratic_cone_unit_volume():
    cone = QuadraticCone(np.diag([4.0, 1.0]), np.zeros(2))
    # {y : |M^{1/2} y| <= 1} has area pi / sqrt(det M)
    assert cone.unit_volume(np.zeros(2)) == pytest.approx(np.pi / 2, rel=1e-9)
