import numpy as np
import pytest

from nlma.field import eval_ma_field, modulus_exponent
from nlma.grid import build_grid_function
from nlma.operator import (KernelSpec, OperatorParams, eval_ma, eval_ma_oracle,
                           scaled_limit_study)
from nlma.profile import radial_rearrangement, section_profile

from oracles import cone_closed_form, exact_1d_value

# frozen from oracles.cone_closed_form (Beta integral by quadrature)
CLOSED_FORM = {
    (1, 1.3): 6.873447473129838,
    (1, 1.5): 4.9441991394691405,
    (1, 1.8): 6.6143323423324505,
    (2, 1.3): 21.593572086420032,
    (2, 1.5): 15.532659694441229,
    (2, 1.8): 20.779537895073,
}


@pytest.fixture(scope="module")
def cone1d():
    return build_grid_function("smoothcone:a=1", L=20.0, h=0.05, dim=1)


def test_frozen_values_match_oracle():
    for (d, s), v in CLOSED_FORM.items():
        assert cone_closed_form(d, s) == pytest.approx(v, rel=1e-10)


def test_params_validation():
    with pytest.raises(ValueError):
        OperatorParams(2.0, 1)
    with pytest.raises(ValueError):
        OperatorParams(1.5, 4)


def test_kernel_parse_roundtrip():
    for text in ("full", "nearpinned:eps=0.1", "capped:n=1e+06", "localized:R=2"):
        assert str(KernelSpec.parse(text)) == text
    with pytest.raises(ValueError, match="expects 'n="):
        KernelSpec.parse("capped:eps=1")
    with pytest.raises(ValueError):
        KernelSpec("capped", -1.0)


@pytest.mark.parametrize("s", [1.3, 1.5, 1.8])
def test_closed_form_1d(cone1d, s):
    v = eval_ma(cone1d, [0.0], OperatorParams(s, 1)).value
    assert v == pytest.approx(CLOSED_FORM[(1, s)], rel=2e-3)


@pytest.mark.parametrize("x", [0.5, 1.0, -2.5])
def test_off_center_against_root_finding(cone1d, x):
    fun = lambda y: np.sqrt(1 + y * y)
    ref = exact_1d_value(fun, x, 1.5, fprime=lambda y: y / np.sqrt(1 + y * y))
    v = eval_ma(cone1d, [x], OperatorParams(1.5, 1)).value
    assert v == pytest.approx(ref, rel=5e-3)


def test_rearranged_oracle_agrees(cone1d):
    P = OperatorParams(1.5, 1)
    for x in (0.0, 1.5):
        assert eval_ma_oracle(cone1d, [x], P) == pytest.approx(eval_ma(cone1d, [x], P).value, rel=1e-3)


def test_edge_cases_exact():
    P = OperatorParams(1.5, 1)
    aff = build_grid_function("affine:p=0.3,c=1", L=10.0, h=0.05)
    assert eval_ma(aff, [0.5], P).value == 0.0
    ab = build_grid_function("maxplanes:P=1,-1", L=10.0, h=0.05)
    assert eval_ma(ab, [0.0], P).value == np.inf
    assert eval_ma(ab, [0.5], P).value == 0.0
    neg = build_grid_function("negcone:a=1", L=10.0, h=0.05)
    res = eval_ma(neg, [0.0], P)
    assert res.value == -np.inf and res.meta.get("witness") is not None


def test_capped_increases_to_full(cone1d):
    P = OperatorParams(1.5, 1)
    full = eval_ma(cone1d, [0.0], P).value
    vals = [eval_ma(cone1d, [0.0], P, KernelSpec("capped", n)).value for n in (1e2, 1e4, 1e6)]
    assert vals[0] < vals[1] < vals[2] <= full * (1 + 1e-9)


def test_localized_gap_decays_like_tail_mass(cone1d):
    # truncating the kernel at R drops about int_R^inf y^{-s} dy ~ R^{1-s}
    P = OperatorParams(1.5, 1)
    full = eval_ma(cone1d, [0.0], P).value
    gaps = [full - eval_ma(cone1d, [0.0], P, KernelSpec("localized", R)).value for R in (1e2, 1e3)]
    assert gaps[0] > gaps[1] > 0
    assert gaps[0] / gaps[1] == pytest.approx(10 ** 0.5, rel=0.05)


def test_section_profile_of_cone_vertex():
    f = build_grid_function("smoothcone:a=1", L=8.0, h=0.1, dim=2)
    prof = section_profile(f, [0.0, 0.0])
    t = np.array([0.01, 0.5, 3.0])
    # sections of sqrt(1+|y|^2) - 1 are discs of area pi (t^2 + 2t)
    assert np.allclose(prof(t), np.pi * (t * t + 2 * t), rtol=0.02)
    rad = radial_rearrangement(prof)
    assert np.all(np.diff(rad(np.linspace(0.1, 5, 20))) > 0)


def test_scaled_limit_gaps_shrink(cone1d):
    vals = [v for _, v in scaled_limit_study(cone1d, [0.5], [1.9, 1.95, 1.99])]
    gaps = np.abs(np.diff(vals))
    assert gaps[1] < gaps[0]


def test_field_matches_pointwise_1d():
    f = build_grid_function("smoothcone:a=1", L=10.0, h=0.05)
    P = OperatorParams(1.5, 1)
    mask = np.abs(f.axis) <= 2
    F = eval_ma_field(f, P, mask=mask)
    for x in (-2.0, 0.0, 1.25):
        k = f.index_of([x])
        assert F[k] == pytest.approx(eval_ma(f, [x], P).value, rel=5e-3)


def test_modulus_exponent_of_known_functions():
    x = np.linspace(0, 1, 201)
    assert modulus_exponent(x, 0.005) == pytest.approx(1.0, abs=1e-9)
    assert modulus_exponent(np.sqrt(x), 0.005) == pytest.approx(0.5, abs=1e-9)
