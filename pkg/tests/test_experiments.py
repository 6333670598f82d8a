import numpy as np
import pytest

from fastslow.diffusion import diffusion_matrix
from fastslow.exceptions import GridMismatchError
from fastslow.experiments import (
    Observable, averaging_error, clt_test, cylinder_weight, default_out_times,
    frozen_fluctuation_sums, generator_residual, martingale_residual,
    moment_scaling, run_ensemble,
)
from fastslow.experiments import observable_library as function_library
from fastslow.limits import covariance_evolve, solve_averaged
from fastslow.standard_pairs import constant_pair
from fastslow.systems import FastSlowSystem, TrigTerm, fixture


def lin_setup(eps, n, seed=42, T=1.0, theta0=0.3, m=33):
    lin = fixture("LIN")
    pair = constant_pair([theta0], 0.2, 0.3, eps)
    avg = solve_averaged(lambda th: np.zeros(1), [theta0], T)
    ot = default_out_times(T, m)
    ens = run_ensemble(lin, pair, eps, n, T, ot, seed, avg)
    cov = covariance_evolve(avg, lambda th: np.array([[0.5]]),
                            lambda th: np.array([[0.0]]), T, out_times=ot)
    return lin, ens, cov


def test_eps_zero_freezes_slow_paths():
    lin = fixture("LIN")
    pair = constant_pair([0.4], 0.2, 0.3, 0.0)
    avg = solve_averaged(lambda th: np.zeros(1), [0.4], 1.0)
    ens = run_ensemble(lin, pair, 0.0, 1, 1.0, default_out_times(1.0), 1, avg)
    assert np.all(ens.theta_lift == 0.4)
    assert np.all(ens.zeta == 0.0)


def test_same_seed_bit_identical():
    _, e1, _ = lin_setup(1e-3, 200)
    _, e2, _ = lin_setup(1e-3, 200)
    assert np.array_equal(e1.theta_lift, e2.theta_lift)
    assert np.array_equal(e1.zeta, e2.zeta)


def test_thread_count_does_not_change_results():
    lin = fixture("LIN")
    pair = constant_pair([0.3], 0.2, 0.3, 1e-3)
    avg = solve_averaged(lambda th: np.zeros(1), [0.3], 1.0)
    ot = default_out_times(1.0)
    outs = [run_ensemble(lin, pair, 1e-3, 5000, 1.0, ot, 9, avg, threads=k)
            for k in (1, 3)]
    assert np.array_equal(outs[0].theta_lift, outs[1].theta_lift)


def test_fluctuation_mean_is_centered():
    _, ens, _ = lin_setup(1e-3, 10_000)
    zT = ens.zeta[:, -1, 0]
    assert abs(zT.mean()) <= 3 * np.sqrt(0.5 / 10_000)


def test_averaging_error_scaling_lin():
    ensembles = [lin_setup(e, 2000)[1] for e in (4e-3, 1e-3, 2.5e-4)]
    rep = averaging_error(ensembles)
    assert rep.data["monotone_decreasing"]
    assert 0.4 <= rep.data["fitted_exponent"] <= 0.6


def test_averaging_error_stderr_halves_with_4x_samples():
    import numpy as _np

    def sup_stderr(ens):
        sup = _np.linalg.norm(ens.theta_lift - ens.theta_bar[None], axis=2).max(axis=1)
        return sup.std(ddof=1) / _np.sqrt(ens.n_traj)

    e1 = lin_setup(1e-3, 1000)[1]
    e2 = lin_setup(1e-3, 4000)[1]
    ratio = sup_stderr(e1) / sup_stderr(e2)
    assert 1.4 <= ratio <= 2.6


def test_deterministic_unit_drift_has_no_averaging_error():
    system = FastSlowSystem(d=1, degree=3, f_terms=[],
                            omega_terms=[[TrigTerm(1.0)]])
    eps = 1e-3
    pair = constant_pair([0.1], 0.2, 0.3, eps)
    avg = solve_averaged(lambda th: np.ones(1), [0.1], 1.0)
    ens = run_ensemble(system, pair, eps, 50, 1.0, default_out_times(1.0), 3, avg)
    sup = np.abs(ens.theta_lift - ens.theta_bar[None]).max()
    assert sup <= eps


def test_moment_scaling_ranges():
    _, ens, _ = lin_setup(1e-3, 10_000)
    rep = moment_scaling(ens)
    assert 0.4 <= rep.data["min_m2_ratio"]
    assert rep.data["max_m2_ratio"] <= 0.6
    assert rep.data["m4_exponent"] >= 1.8
    assert rep.data["m2_exponent"] == pytest.approx(1.0, abs=0.15)


def test_moment_scaling_needs_dyadic_grid():
    _, ens, _ = lin_setup(1e-3, 100, m=30)
    with pytest.raises(GridMismatchError):
        moment_scaling(ens)


def test_generator_residual_exact_zero_cases():
    lin, ens, cov = lin_setup(0.0, 50)
    z0 = function_library(1)[0]
    rep = generator_residual(ens, z0, "averaged",
                             drift_batch=lambda th: np.zeros_like(th))
    assert rep.data["mean"] == 0.0
    const = Observable("const",
                         lambda z: np.ones(np.shape(z)[:-1]),
                         lambda z: np.zeros(np.shape(z)),
                         lambda z: np.zeros(np.shape(z) + (1,)))
    _, ens2, cov2 = lin_setup(1e-3, 100)
    rep2 = generator_residual(ens2, const, "fluctuation", cov=cov2)
    assert rep2.data["mean"] == 0.0


def test_generator_residual_shrinks_with_eps():
    funcs = {f.name: f for f in function_library(1)}
    A = funcs["z0z0"]
    means = {}
    for eps in (1e-3, 1e-4):
        _, ens, cov = lin_setup(eps, 4000)
        rep = generator_residual(ens, A, "fluctuation", cov=cov, slack_c=1.0)
        assert rep.passed
        means[eps] = abs(rep.data["mean"])
    assert means[1e-4] < means[1e-3]


def test_generator_residual_detects_wrong_covariance():
    # the slack band must not be so wide that a wrong diffusion slips through
    _, ens, _ = lin_setup(1e-3, 10_000)
    avg = ens.avg
    bad = covariance_evolve(avg, lambda th: np.array([[0.8]]),
                            lambda th: np.array([[0.0]]), 1.0,
                            out_times=ens.out_times)
    funcs = {f.name: f for f in function_library(1)}
    rep = generator_residual(ens, funcs["z0z0"], "fluctuation", cov=bad, slack_c=1.0)
    assert not rep.passed


def test_martingale_residual_degenerate_and_reduction():
    _, ens, cov = lin_setup(1e-3, 2000)
    A = function_library(1)[0]
    rep = martingale_residual(ens, A, [], 0.5, 0.5, cov)
    assert rep.data["mean"] == 0.0
    one = cylinder_weight("one")
    a = martingale_residual(ens, A, [(0.25, one)], 0.5, 1.0, cov)
    b = martingale_residual(ens, A, [], 0.5, 1.0, cov)
    assert a.data["mean"] == b.data["mean"]


def test_martingale_residual_rejects_bad_times():
    _, ens, cov = lin_setup(1e-3, 100)
    A = function_library(1)[0]
    with pytest.raises(ValueError):
        martingale_residual(ens, A, [(0.6, cylinder_weight("one"))], 0.5, 1.0, cov)
    with pytest.raises(GridMismatchError):
        martingale_residual(ens, A, [], 0.513, 1.0, cov)


def test_clt_grid_mismatch_raises():
    _, ens, _ = lin_setup(1e-3, 100)
    avg = solve_averaged(lambda th: np.zeros(1), [0.3], 1.0)
    cov = covariance_evolve(avg, lambda th: np.array([[0.5]]),
                            lambda th: np.array([[0.0]]), 1.0,
                            out_times=np.linspace(0, 1, 17))
    with pytest.raises(GridMismatchError):
        clt_test(ens, cov)


def test_clt_report_lin():
    _, ens, cov = lin_setup(1e-3, 10_000)
    rep = clt_test(ens, cov)
    row = rep.data["times"][-1]
    assert row["cov"][0][0] == pytest.approx(0.5, rel=0.05)
    assert abs(row["skew"][0]) <= 0.08
    assert abs(row["excess_kurtosis"][0]) <= 0.15
    assert rep.data["mean_consistent"] and rep.data["charfn_consistent"]


def test_clt_cbd_degenerate():
    cbd = fixture("CBD")
    pair = constant_pair([0.3], 0.2, 0.3, 1e-3)
    avg = solve_averaged(lambda th: np.zeros(1), [0.3], 1.0)
    ens = run_ensemble(cbd, pair, 1e-3, 2000, 1.0, default_out_times(1.0), 5, avg)
    assert ens.zeta[:, -1, 0].var(ddof=1) <= 1e-2


def test_null_calibration_against_diffusion():
    lin = fixture("LIN")
    ctx = diffusion_matrix(lin, [0.3], 300, with_jacobian=False)
    pair = constant_pair([0.3], 0.2, 0.3, 0.0)
    for n_steps in (1000, 10_000):
        sums = frozen_fluctuation_sums(lin, pair, [0.3], n_steps, 4000, 13,
                                       ctx.omega_bar)
        var = sums[:, 0].var(ddof=1)
        assert var == pytest.approx(ctx.sigma2[0, 0], rel=3 * np.sqrt(2 / 4000) + 0.01)


def test_reports_are_deterministic_json():
    _, e1, c1 = lin_setup(1e-3, 500)
    _, e2, c2 = lin_setup(1e-3, 500)
    assert clt_test(e1, c1).to_json() == clt_test(e2, c2).to_json()
    assert moment_scaling(e1).to_json() == moment_scaling(e2).to_json()


def test_cylinder_weights():
    bump = cylinder_weight("bump", [0.5], 0.2)
    th = np.array([[0.5], [0.65], [0.8]])
    vals = bump(th)
    assert vals[0] == pytest.approx(1.0)
    assert 0 < vals[1] < 1
    assert vals[2] == 0.0
    cosw = cylinder_weight("coswave", [0.5])
    assert cosw(np.array([[0.5]]))[0] == pytest.approx(1.0)
    assert cosw(np.array([[0.0]]))[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(KeyError):
        cylinder_weight("nope", [0.0])
