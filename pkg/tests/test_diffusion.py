import numpy as np
import pytest

from fastslow.diffusion import (autocovariance, autocovariances, average_drift,
                                diffusion_matrix, drift_jacobian, jacobi_eigh,
                                sym_sqrt)
from fastslow.exceptions import NegativeEigenvalueError, TruncationTailError
from fastslow.systems import FastSlowSystem, TrigTerm
from fastslow.ulam import srb_density, ulam_operator


def theta_only_drift():
    return FastSlowSystem(d=1, degree=3, f_terms=[],
                          omega_terms=[[TrigTerm(1.0, lt=(1,), ft="sin")]])


def test_lin_drift_vanishes(lin):
    dens = srb_density(ulam_operator(lin, [0.0], 300))
    assert abs(average_drift(lin, dens)[0]) <= 1e-14


def test_pure_theta_drift_and_jacobian():
    system = theta_only_drift()
    theta = 0.3
    dens = srb_density(ulam_operator(system, [theta], 256))
    wbar = average_drift(system, dens)
    assert wbar[0] == pytest.approx(np.sin(2 * np.pi * theta), abs=1e-12)
    jac = drift_jacobian(system, [theta], 1e-4, 256)
    assert jac[0, 0] == pytest.approx(2 * np.pi * np.cos(2 * np.pi * theta), abs=1e-5)


def test_cpl_drift_splits_into_parts(cpl):
    # omega = sin(2 pi theta) + cos(2 pi x): the average splits by linearity
    dens = srb_density(ulam_operator(cpl, [0.25], 2048))
    wbar = average_drift(cpl, dens)
    part = dens.integrate(lambda x: np.cos(2 * np.pi * x))
    assert wbar[0] == pytest.approx(1.0 + part, abs=1e-12)


def test_jacobian_richardson_ratio():
    # error(h)/error(h/2) ~ 4 for a second-order difference
    system = theta_only_drift()
    theta, exact = 0.3, 2 * np.pi * np.cos(2 * np.pi * 0.3)
    e1 = abs(drift_jacobian(system, [theta], 1e-2, 256)[0, 0] - exact)
    e2 = abs(drift_jacobian(system, [theta], 5e-3, 256)[0, 0] - exact)
    assert 3.5 <= e1 / e2 <= 4.5


def test_jacobian_step_bounds():
    with pytest.raises(ValueError):
        drift_jacobian(theta_only_drift(), [0.3], 1e-7, 64)


def test_lin_autocovariances(lin):
    op = ulam_operator(lin, [0.0], 300)
    dens = srb_density(op)
    gam = autocovariances(lin, op, dens, 6)
    assert gam[0, 0, 0] == pytest.approx(0.5, abs=1e-13)
    assert np.abs(gam[1:]).max() <= 1e-10
    single = autocovariance(lin, dens, 3, op=op)
    assert single[0, 0] == pytest.approx(gam[3, 0, 0], abs=1e-15)


def test_lin_diffusion_value(lin):
    ctx = diffusion_matrix(lin, [0.0], 300, with_jacobian=False)
    assert ctx.sigma2[0, 0] == pytest.approx(0.5, abs=1e-3)
    assert ctx.sigma[0, 0] == pytest.approx(np.sqrt(0.5), abs=1e-3)
    assert not ctx.coboundary


def test_coboundary_flagged_and_degenerate(cbd):
    ctx = diffusion_matrix(cbd, [0.0], 300, with_jacobian=False)
    assert ctx.sigma2[0, 0] <= 1e-3
    assert ctx.coboundary


def test_cpl_not_flagged_and_decay_reported(cpl):
    ctx = diffusion_matrix(cpl, [0.25], 2048, M=60, with_jacobian=False)
    assert not ctx.coboundary
    assert ctx.decay_rate is not None and ctx.decay_rate > 0.2
    assert ctx.tail_estimate <= 1e-9


def test_cpl_autocovariances_against_time_series(cpl):
    # oracle: ensemble time average over 1e6 frozen-orbit points
    theta = 0.25
    op = ulam_operator(cpl, [theta], 4096)
    dens = srb_density(op)
    gam = autocovariances(cpl, op, dens, 5)
    rng = np.random.default_rng(555)
    R = 1_000_000
    x = rng.random(R)
    th = np.full((R, 1), theta)
    for _ in range(60):
        x = cpl.f(x, th)
    w0 = cpl.omega(x, th)[:, 0]
    mean_emp = w0.mean()
    what0 = w0 - mean_emp
    xk = x.copy()
    for k in range(1, 6):
        xk = cpl.f(xk, th)
        prod = (cpl.omega(xk, th)[:, 0] - mean_emp) * what0
        se = prod.std(ddof=1) / np.sqrt(R)
        assert gam[k, 0, 0] == pytest.approx(prod.mean(), abs=3 * se + 1e-5)


def test_cpl_sigma2_against_variance_growth(cpl):
    # oracle: limit of Var(sum of centered drift / sqrt(n)) over frozen orbits
    theta = 0.25
    ctx = diffusion_matrix(cpl, [theta], 4096, M=60, with_jacobian=False)
    wbar = ctx.omega_bar[0]
    rng = np.random.default_rng(987)
    R = 10_000
    x = rng.random(R)
    th = np.full((R, 1), theta)
    for _ in range(60):
        x = cpl.f(x, th)
    acc = np.zeros(R)
    checks = {}
    for n in range(1, 10_001):
        acc += cpl.omega(x, th)[:, 0] - wbar
        x = cpl.f(x, th)
        if n in (1000, 10_000):
            checks[n] = (acc / np.sqrt(n)).var(ddof=1)
    sig2 = ctx.sigma2[0, 0]
    stat = 3 * np.sqrt(2.0 / R)    # 3 relative standard errors of a variance
    assert checks[1000] == pytest.approx(sig2, rel=stat + 0.01)
    assert checks[10_000] == pytest.approx(sig2, rel=0.02)


def test_sigma2_symmetric_psd_random_thetas(cpl):
    rng = np.random.default_rng(31)
    for theta in rng.random(20):
        ctx = diffusion_matrix(cpl, [theta], 1024, M=60, with_jacobian=False)
        s2 = ctx.sigma2
        assert np.abs(s2 - s2.T).max() <= 1e-12
        assert np.linalg.eigvalsh(s2).min() >= -1e-9
        assert np.abs(ctx.sigma @ ctx.sigma - s2).max() <= 1e-10


def test_sigma2_theta_continuity(cpl):
    vals = [diffusion_matrix(cpl, [t], 1024, M=60, with_jacobian=False).sigma2[0, 0]
            for t in (0.30, 0.301, 0.302)]
    assert abs(vals[1] - vals[0]) <= 0.05
    assert abs(vals[2] - vals[1]) <= 0.05


def test_tail_check_raises_for_short_truncation(cpl):
    with pytest.raises(TruncationTailError):
        diffusion_matrix(cpl, [0.25], 512, M=4, with_jacobian=False)


def test_jacobi_matches_reference():
    rng = np.random.default_rng(8)
    for d in (1, 2, 3, 4):
        A = rng.normal(size=(d, d))
        A = A + A.T
        w, V = jacobi_eigh(A)
        assert np.allclose(np.sort(w), np.linalg.eigvalsh(A), atol=1e-12)
        assert np.abs((V * w) @ V.T - A).max() <= 1e-12


def test_sym_sqrt_and_negative_rejection():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    S = sym_sqrt(A)
    assert np.abs(S @ S - A).max() <= 1e-12
    with pytest.raises(NegativeEigenvalueError):
        sym_sqrt(np.array([[-1.0]]))
