import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastslow.exceptions import SystemValidationError
from fastslow.systems import FastSlowSystem, TrigTerm, fixture, validate_system


def test_fixtures_validate():
    for name in ("LIN", "CBD", "CPL"):
        validate_system(fixture(name))


def test_certified_constants():
    cpl = fixture("CPL")
    assert cpl.lam == pytest.approx(2.1)
    assert cpl.K == pytest.approx(2 * np.pi)
    lin = fixture("LIN")
    assert lin.lam == 3
    assert lin.f_second_sup == 0.0


def test_cpl_pointwise_against_high_precision():
    # independent 50-digit evaluation of the closed-form fixture
    mpmath.mp.dps = 50
    x, th = mpmath.mpf("0.2"), mpmath.mpf("0.5")
    two_pi = 2 * mpmath.pi
    f_exact = 3 * x + mpmath.mpf("0.9") / two_pi * mpmath.sin(two_pi * th) * mpmath.sin(two_pi * x)
    w_exact = mpmath.sin(two_pi * th) + mpmath.cos(two_pi * x)
    cpl = fixture("CPL")
    assert float(cpl.f_lift(0.2, [0.5])) == pytest.approx(float(f_exact), abs=1e-15)
    assert float(cpl.omega(0.2, [0.5])[0]) == pytest.approx(float(w_exact), abs=1e-15)
    dfx_exact = 3 + mpmath.mpf("0.9") * mpmath.sin(two_pi * th) * mpmath.cos(two_pi * x)
    assert float(cpl.df_dx(0.2, [0.5])) == pytest.approx(float(dfx_exact), abs=1e-15)


def test_broadcasting_shapes():
    cpl = fixture("CPL")
    x = np.linspace(0, 1, 7, endpoint=False)
    th = np.linspace(0, 1, 7, endpoint=False)[:, None]
    assert cpl.f(x, th).shape == (7,)
    assert cpl.omega(x, th).shape == (7, 1)
    assert cpl.domega_dtheta(x, th).shape == (7, 1, 1)
    assert cpl.d2f_dtheta2(x, th).shape == (7, 1, 1)


def test_roundtrip_serialization():
    cpl = fixture("CPL")
    clone = FastSlowSystem.from_dict(cpl.to_dict())
    x, th = 0.37, np.array([0.81])
    assert clone.f_lift(x, th) == cpl.f_lift(x, th)
    assert np.array_equal(clone.omega(x, th), cpl.omega(x, th))


def test_overclaimed_lambda_rejected():
    with pytest.raises(SystemValidationError):
        FastSlowSystem(d=1, degree=3,
                       f_terms=[TrigTerm(0.9 / (2 * np.pi), kx=1, fx="sin")],
                       omega_terms=[[TrigTerm(1.0, kx=1, fx="cos")]],
                       lam=2.5)  # certified bound is 2.1


def test_underclaimed_K_rejected():
    with pytest.raises(SystemValidationError):
        FastSlowSystem(d=1, degree=3, f_terms=[],
                       omega_terms=[[TrigTerm(1.0, kx=1, fx="cos")]],
                       K=1.0)  # sup |domega/dx| = 2 pi


def test_expansion_below_two_rejected():
    with pytest.raises(SystemValidationError):
        FastSlowSystem(d=1, degree=2, f_terms=[],
                       omega_terms=[[TrigTerm(1.0, kx=1, fx="cos")]])


@st.composite
def random_trig_systems(draw):
    lam_target = draw(st.floats(2.05, 3.9))
    degree = 4
    amp = (degree - lam_target) / (2 * np.pi)
    phase = draw(st.floats(0.0, 1.0))
    w_amp = draw(st.floats(0.1, 1.5))
    return FastSlowSystem(
        d=1, degree=degree,
        f_terms=[TrigTerm(amp, kx=1, px=phase, fx="sin")],
        omega_terms=[[TrigTerm(w_amp, kx=1, fx="cos"),
                      TrigTerm(0.5, lt=(1,), ft="sin")]],
    )


@settings(max_examples=20, deadline=None, derandomize=True)
@given(random_trig_systems())
def test_random_systems_validate(system):
    validate_system(system)
    assert system.lam > 2
