"""Seeded ensembles and statistical verification of the limit laws.

Ensembles iterate the skew product from standard-pair initial conditions,
with one counter-based stream per trajectory, and store the lifted slow path
and the rescaled deviation from the averaged trajectory on a fixed output
grid. Reports are pure functions of stored arrays, reduced in a fixed order,
so identical configurations give byte-identical JSON no matter how many
threads ran the simulation.

Statistical pass/fail bands are always 3 standard errors plus an explicit
slack proportional to sqrt(eps); the slack absorbs the finite-eps bias of the
limit identities, whose rate the theory leaves unquantified.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import GridMismatchError, OrbitLengthError
from .limits import AveragedTrajectory, CovarianceTrajectory, gaussian_charfn
from .orbits import sample_paths_batch
from .rng import stream_uniforms
from .standard_pairs import StandardPair, sample_from_uniform
from .systems import FastSlowSystem

CHUNK = 4096   # fixed slice size; results must not depend on thread count


# -- test functions on the fluctuation space R^d -------------------------------

@dataclass(frozen=True)
class Observable:
    """Smooth observable with gradient and Hessian, vectorized over (..., d)."""

    name: str
    value: Callable
    grad: Callable
    hess: Callable


def _bump_parts(z: np.ndarray, radius: float):
    w = np.sum(z * z, axis=-1) / radius**2
    inside = w < 1.0
    ws = np.where(inside, w, 0.5)
    val = np.where(inside, np.exp(-ws / (1.0 - ws)), 0.0)
    dphi = np.where(inside, -1.0 / (1.0 - ws) ** 2, 0.0)
    d2phi = np.where(inside, -2.0 / (1.0 - ws) ** 3, 0.0)
    return val, dphi, d2phi


def bump_function(radius: float, d: int) -> Observable:
    """Compactly supported mollifier exp(-w/(1-w)), w = |z|^2/R^2 < 1."""

    def value(z):
        return _bump_parts(np.asarray(z, dtype=float), radius)[0]

    def grad(z):
        z = np.asarray(z, dtype=float)
        val, dphi, _ = _bump_parts(z, radius)
        return (val * dphi)[..., None] * (2.0 * z / radius**2)

    def hess(z):
        z = np.asarray(z, dtype=float)
        val, dphi, d2phi = _bump_parts(z, radius)
        dw = 2.0 * z / radius**2
        outer = dw[..., :, None] * dw[..., None, :]
        eye = np.eye(d)
        return (val * (dphi**2 + d2phi))[..., None, None] * outer \
            + (val * dphi)[..., None, None] * (2.0 / radius**2) * eye

    return Observable(f"bump{radius:g}", value, grad, hess)


def wave_function(lam: np.ndarray, kind: str) -> Observable:
    """Real or imaginary part of exp(i <lam, z>)."""
    lam = np.asarray(lam, dtype=float)
    ll = lam[:, None] * lam[None, :]
    if kind == "cos":
        return Observable(
            f"cos<l,z>|l|={np.linalg.norm(lam):g}",
            lambda z: np.cos(z @ lam),
            lambda z: -np.sin(z @ lam)[..., None] * lam,
            lambda z: -np.cos(z @ lam)[..., None, None] * ll,
        )
    return Observable(
        f"sin<l,z>|l|={np.linalg.norm(lam):g}",
        lambda z: np.sin(z @ lam),
        lambda z: np.cos(z @ lam)[..., None] * lam,
        lambda z: -np.sin(z @ lam)[..., None, None] * ll,
    )


def observable_library(d: int) -> list[Observable]:
    """Coordinates, coordinate pairs, |z|^2, a bump, and wave parts."""
    funcs: list[Observable] = []
    eye = np.eye(d)
    for i in range(d):
        e = eye[i]
        funcs.append(Observable(
            f"z{i}", lambda z, i=i: np.asarray(z)[..., i],
            lambda z, e=e: np.broadcast_to(e, np.shape(z)).copy(),
            lambda z, d=d: np.zeros(np.shape(z)[:-1] + (d, d)),
        ))
    for i in range(d):
        for j in range(i, d):
            h = np.outer(eye[i], eye[j]) + np.outer(eye[j], eye[i])
            funcs.append(Observable(
                f"z{i}z{j}",
                lambda z, i=i, j=j: np.asarray(z)[..., i] * np.asarray(z)[..., j],
                lambda z, i=i, j=j, eye=eye: np.asarray(z)[..., j:j + 1] * eye[i]
                + np.asarray(z)[..., i:i + 1] * eye[j],
                lambda z, h=h: np.broadcast_to(h, np.shape(z)[:-1] + h.shape).copy(),
            ))
    funcs.append(Observable(
        "sqnorm", lambda z: np.sum(np.asarray(z) ** 2, axis=-1),
        lambda z: 2.0 * np.asarray(z),
        lambda z, d=d: np.broadcast_to(2.0 * np.eye(d), np.shape(z)[:-1] + (d, d)).copy(),
    ))
    funcs.append(bump_function(2.0, d))
    lam = np.full(d, 1.0)
    funcs.append(wave_function(lam, "cos"))
    funcs.append(wave_function(lam, "sin"))
    return funcs


# -- smooth cylinder weights on the slow torus ---------------------------------

def cylinder_weight(name: str, center=None, width: float = 0.2) -> Callable:
    """Named smooth weight B(theta); input is a lifted (..., d) array."""
    if name == "one":
        return lambda th: np.ones(np.shape(th)[:-1])
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if name == "bump":
        s = np.sin(np.pi * width) ** 2

        def weight(th):
            u = np.sin(np.pi * (np.asarray(th) - center)) ** 2 / s
            w = np.sum(u, axis=-1)
            inside = w < 1.0
            ws = np.where(inside, w, 0.5)
            return np.where(inside, np.exp(-ws / (1.0 - ws)), 0.0)

        return weight
    if name == "coswave":
        def weight(th):
            return np.prod(0.5 * (1.0 + np.cos(2 * np.pi * (np.asarray(th) - center))), axis=-1)

        return weight
    raise KeyError(f"unknown cylinder weight {name!r}")


# -- ensemble -------------------------------------------------------------------

@dataclass
class Ensemble:
    """Stored slow paths and fluctuations of a seeded trajectory collection."""

    system: FastSlowSystem
    eps: float
    n_traj: int
    root_seed: int
    T: float
    out_times: np.ndarray        # (m,)
    theta_lift: np.ndarray       # (n_traj, m, d)
    zeta: np.ndarray             # (n_traj, m, d)
    theta_bar: np.ndarray        # (m, d) averaged trajectory on the grid
    avg: AveragedTrajectory
    pair_domain: tuple = (0.0, 1.0)

    @property
    def d(self) -> int:
        return self.theta_lift.shape[2]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.out_times - t)))
        if abs(self.out_times[i] - t) > 1e-9 * max(1.0, self.T):
            raise GridMismatchError(f"time {t} not on the output grid")
        return i


def default_out_times(T: float, m: int = 33) -> np.ndarray:
    return np.linspace(0.0, T, m)


def run_ensemble(system: FastSlowSystem, pair: StandardPair, eps: float,
                 n_traj: int, T: float, out_times, root_seed: int,
                 avg: AveragedTrajectory, threads: int = 1,
                 max_steps: int = 50_000_000) -> Ensemble:
    """Simulate n_traj trajectories from the pair and record path data.

    Trajectory k draws its initial point with stream root_seed XOR k; the
    deterministic iteration is vectorized over fixed-size chunks, which a
    thread pool may process concurrently. Chunk boundaries and all reductions
    are independent of the thread count, so output is bit-reproducible.
    """
    out_times = np.asarray(out_times, dtype=float)
    if eps > 0 and T / eps > max_steps:
        raise OrbitLengthError(f"T/eps = {T / eps:.3g} steps exceed budget {max_steps}")
    us = stream_uniforms(root_seed, n_traj)
    x0, theta0 = sample_from_uniform(pair, us)

    starts = list(range(0, n_traj, CHUNK))

    def work(c0: int) -> np.ndarray:
        sl = slice(c0, min(c0 + CHUNK, n_traj))
        return sample_paths_batch(system, eps, x0[sl], theta0[sl], out_times, T,
                                  max_steps=max_steps)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(c0) for c0 in starts]
    lifts = np.concatenate(parts, axis=0)

    theta_bar = avg.at(out_times)
    zeta = (lifts - theta_bar[None]) / np.sqrt(eps) if eps > 0 else np.zeros_like(lifts)
    return Ensemble(
        system=system, eps=eps, n_traj=n_traj, root_seed=root_seed, T=T,
        out_times=out_times, theta_lift=lifts, zeta=zeta, theta_bar=theta_bar,
        avg=avg, pair_domain=(pair.curve.a, pair.curve.b),
    )


# -- reports ---------------------------------------------------------------------

def _f(x):
    """JSON-safe scalar."""
    return float(x)


@dataclass
class Report:
    kind: str
    inputs: dict
    data: dict
    passed: Optional[bool] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "inputs": self.inputs, "data": self.data}
        if self.passed is not None:
            out["passed"] = bool(self.passed)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_text(self) -> str:
        """Aligned-column rendering for humans; JSON stays the machine format."""
        lines = [f"report: {self.kind}"]
        for key, val in sorted(self.inputs.items()):
            lines.append(f"  {key} = {val}")
        if self.passed is not None:
            lines.append(f"  passed = {self.passed}")
        for key, val in sorted(self.data.items()):
            if isinstance(val, list) and val and isinstance(val[0], dict):
                cols = list(val[0].keys())
                widths = [max(len(c), 12) for c in cols]
                lines.append("  " + "  ".join(c.rjust(w) for c, w in zip(cols, widths)))
                for row in val:
                    cells = []
                    for c, w in zip(cols, widths):
                        v = row[c]
                        cells.append((f"{v:.6g}" if isinstance(v, float) else str(v)).rjust(w))
                    lines.append("  " + "  ".join(cells))
            else:
                lines.append(f"  {key} = {val}")
        return "\n".join(lines) + "\n"


def averaging_error(ensembles: Sequence[Ensemble]) -> Report:
    """E sup_t ||Theta_eps - Theta_bar|| per eps, with a log-log slope fit."""
    if len(ensembles) < 3:
        raise ValueError("need at least 3 eps values for a scaling fit")
    rows = []
    for ens in sorted(ensembles, key=lambda e: -e.eps):
        dev = np.linalg.norm(ens.theta_lift - ens.theta_bar[None], axis=2)
        sup = dev.max(axis=1)
        rows.append({
            "eps": _f(ens.eps),
            "mean_sup_error": _f(sup.mean()),
            "stderr": _f(sup.std(ddof=1) / np.sqrt(ens.n_traj)),
            "n": ens.n_traj,
        })
    errs = np.array([r["mean_sup_error"] for r in rows])
    epss = np.array([r["eps"] for r in rows])
    slope = float(np.polyfit(np.log(epss), np.log(errs), 1)[0])
    monotone = bool(np.all(np.diff(errs) < 0))
    return Report(
        kind="averaging_error",
        inputs={"eps": [r["eps"] for r in rows], "n": rows[0]["n"],
                "T": _f(ensembles[0].T), "seed": ensembles[0].root_seed},
        data={"rows": rows, "fitted_exponent": slope, "monotone_decreasing": monotone},
    )


def moment_scaling(ensemble: Ensemble, max_level: Optional[int] = None) -> Report:
    """Second and fourth moments of increments over dyadic gaps.

    For gap T/2^j the estimate averages over all aligned disjoint increments
    and all trajectories; the standard error treats per-trajectory averages
    as the independent unit. Ratios to gap and gap^2 plus log-log exponent
    fits quantify the Kolmogorov-criterion scaling.
    """
    m = ensemble.out_times.shape[0] - 1
    levels = int(np.log2(m))
    if 2 ** levels != m:
        raise GridMismatchError("moment scaling needs 2^j + 1 output times")
    if max_level is not None:
        levels = min(levels, max_level)
    T = ensemble.T
    rows = []
    for j in range(levels + 1):
        stride = m // 2 ** j
        idx = np.arange(0, m + 1, stride)
        dz = np.diff(ensemble.zeta[:, idx, :], axis=1)
        sq = np.sum(dz * dz, axis=2)
        q2 = sq.mean(axis=1)
        q4 = (sq * sq).mean(axis=1)
        gap = T / 2 ** j
        n = ensemble.n_traj
        rows.append({
            "gap": _f(gap),
            "m2": _f(q2.mean()), "m2_se": _f(q2.std(ddof=1) / np.sqrt(n)),
            "m4": _f(q4.mean()), "m4_se": _f(q4.std(ddof=1) / np.sqrt(n)),
            "m2_over_gap": _f(q2.mean() / gap),
            "m4_over_gap2": _f(q4.mean() / gap**2),
        })
    gaps = np.array([r["gap"] for r in rows])
    m2 = np.array([r["m2"] for r in rows])
    m4 = np.array([r["m4"] for r in rows])
    fit2 = float(np.polyfit(np.log(gaps), np.log(m2), 1)[0])
    fit4 = float(np.polyfit(np.log(gaps), np.log(m4), 1)[0])
    return Report(
        kind="moment_scaling",
        inputs={"eps": _f(ensemble.eps), "n": ensemble.n_traj, "T": _f(T),
                "seed": ensemble.root_seed},
        data={"rows": rows, "m2_exponent": fit2, "m4_exponent": fit4,
              "max_m2_ratio": _f(max(r["m2_over_gap"] for r in rows)),
              "min_m2_ratio": _f(min(r["m2_over_gap"] for r in rows))},
    )


def generator_residual(ensemble: Ensemble, A: Observable, variant: str,
                       drift_batch: Optional[Callable] = None,
                       cov: Optional[CovarianceTrajectory] = None,
                       slack_c: float = 1.0) -> Report:
    """Mean of the time-differentiation identity for one test function.

    averaged   : A(Theta(T)) - A(Theta(0)) - int <omega_bar, grad A>(Theta) dt
    fluctuation: A(zeta(T)) - A(zeta(0)) - int L_s A(zeta(s)) ds with the
                 second-order generator along the averaged path.
    The time integral is a trapezoid on the output grid.
    """
    ts = ensemble.out_times
    if variant == "averaged":
        if drift_batch is None:
            raise ValueError("averaged variant needs a drift_batch provider")
        th = ensemble.theta_lift
        shape = th.shape
        wbar = drift_batch(th.reshape(-1, shape[2])).reshape(shape)
        integrand = np.sum(A.grad(th) * wbar, axis=2)
        boundary = A.value(th[:, -1]) - A.value(th[:, 0])
    elif variant == "fluctuation":
        if cov is None:
            raise ValueError("fluctuation variant needs a covariance trajectory")
        z = ensemble.zeta
        integrand = np.zeros(z.shape[:2])
        for i, t in enumerate(ts):
            B = cov.B_at(float(t))
            s2 = np.asarray(cov.sigma2_provider(ensemble.avg.at(float(t))), dtype=float)
            gi = A.grad(z[:, i])
            hi = A.hess(z[:, i])
            integrand[:, i] = np.einsum("nj,nj->n", gi, z[:, i] @ B.T) \
                + 0.5 * np.einsum("ij,nij->n", s2, hi)
        boundary = A.value(z[:, -1]) - A.value(z[:, 0])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    resid = boundary - np.trapezoid(integrand, ts, axis=1)
    mean = _f(resid.mean())
    se = _f(resid.std(ddof=1) / np.sqrt(ensemble.n_traj)) if ensemble.n_traj > 1 else 0.0
    thr = 3.0 * se + slack_c * np.sqrt(ensemble.eps)
    return Report(
        kind="generator_residual",
        inputs={"A": A.name, "variant": variant, "eps": _f(ensemble.eps),
                "n": ensemble.n_traj, "seed": ensemble.root_seed},
        data={"mean": mean, "stderr": se, "threshold": _f(thr)},
        passed=bool(abs(mean) <= thr),
    )


def martingale_residual(ensemble: Ensemble, A: Observable,
                        conditioning: Sequence[tuple], s: float, t: float,
                        cov: CovarianceTrajectory,
                        slack_c: float = 1.0) -> Report:
    """Conditioned residual E[ prod B_i(Theta(t_i)) * (A(zeta(t)) - A(zeta(s))
    - int_s^t L_tau A d tau) ]; the martingale property makes this vanish in
    the limit, so the pass band is 3 stderr + slack_c * sqrt(eps).

    conditioning is a sequence of (t_i, B_i) with t_i < s and B_i a callable
    weight on the slow torus.
    """
    if not (0.0 <= s <= t <= ensemble.T):
        raise ValueError("need 0 <= s <= t <= T")
    i_s, i_t = ensemble.time_index(s), ensemble.time_index(t)
    z = ensemble.zeta
    w = np.ones(ensemble.n_traj)
    for (ti, Bi) in conditioning:
        if ti >= s:
            raise ValueError("conditioning times must precede s")
        w = w * np.asarray(Bi(np.mod(ensemble.theta_lift[:, ensemble.time_index(ti)], 1.0)))
    if i_t > i_s:
        ts = ensemble.out_times[i_s:i_t + 1]
        integrand = np.zeros((ensemble.n_traj, ts.shape[0]))
        for k, tt in enumerate(ts):
            B = cov.B_at(float(tt))
            s2 = np.asarray(cov.sigma2_provider(ensemble.avg.at(float(tt))), dtype=float)
            zi = z[:, i_s + k]
            integrand[:, k] = np.einsum("nj,nj->n", A.grad(zi), zi @ B.T) \
                + 0.5 * np.einsum("ij,nij->n", s2, A.hess(zi))
        integral = np.trapezoid(integrand, ts, axis=1)
    else:
        integral = np.zeros(ensemble.n_traj)
    resid = w * (A.value(z[:, i_t]) - A.value(z[:, i_s]) - integral)
    mean = _f(resid.mean())
    se = _f(resid.std(ddof=1) / np.sqrt(ensemble.n_traj)) if ensemble.n_traj > 1 else 0.0
    thr = 3.0 * se + slack_c * np.sqrt(ensemble.eps)
    return Report(
        kind="martingale_residual",
        inputs={"A": A.name, "s": _f(s), "t": _f(t),
                "conditioning_times": [_f(ti) for ti, _ in conditioning],
                "eps": _f(ensemble.eps), "n": ensemble.n_traj,
                "seed": ensemble.root_seed},
        data={"mean": mean, "stderr": se, "threshold": _f(thr)},
        passed=bool(abs(mean) <= thr),
    )


def clt_test(ensemble: Ensemble, cov: CovarianceTrajectory,
             lambdas: Optional[Sequence[float]] = None,
             two_time: Optional[Sequence[tuple]] = None,
             slack_c: float = 1.0) -> Report:
    """Compare the empirical fluctuation law with the Gaussian limit.

    Per output time: mean, covariance against Sigma(t), marginal skewness and
    excess kurtosis. At the final time: characteristic function at several
    frequencies. Across time pairs (s, t): cross-covariance against the flow
    prediction Cov(zeta(s), zeta(t)^T) = Sigma(s) Phi(s, t)^T.
    """
    if ensemble.out_times.shape != cov.times.shape or \
            not np.allclose(ensemble.out_times, cov.times, atol=1e-12):
        raise GridMismatchError("ensemble and covariance use different time grids")
    z = ensemble.zeta
    N, m, d = z.shape
    slack = slack_c * np.sqrt(ensemble.eps)
    T = ensemble.T
    times_rows = []
    for i, t in enumerate(ensemble.out_times):
        if t == 0.0:
            continue
        zi = z[:, i, :]
        mu = zi.mean(axis=0)
        sd = zi.std(axis=0, ddof=1)
        emp = np.cov(zi.T, ddof=1).reshape(d, d)
        Sig = cov.Sigma_at(float(t))
        scale = max(float(np.abs(Sig).max()), 1e-12)
        centered = zi - mu
        skew = (centered**3).mean(axis=0) / np.maximum(sd, 1e-300) ** 3
        kurt = (centered**4).mean(axis=0) / np.maximum(sd, 1e-300) ** 4 - 3.0
        times_rows.append({
            "t": _f(t),
            "mean": [_f(v) for v in mu],
            "mean_se": [_f(v) for v in sd / np.sqrt(N)],
            "cov": [[_f(v) for v in row] for row in emp],
            "sigma_limit": [[_f(v) for v in row] for row in Sig],
            "cov_rel_err": _f(np.abs(emp - Sig).max() / scale),
            "skew": [_f(v) for v in skew],
            "excess_kurtosis": [_f(v) for v in kurt],
        })
    mean_ok = all(
        abs(r["mean"][j]) <= 3.0 * r["mean_se"][j] + slack
        for r in times_rows for j in range(d)
    )

    if lambdas is None:
        lambdas = [0.5, 1.0, 1.5, 2.0, 3.0]
    zT = z[:, -1, :]
    char_rows = []
    for lv in lambdas:
        lam = np.zeros(d)
        lam[0] = lv
        phase = zT @ lam
        re, im = np.cos(phase), np.sin(phase)
        logmag, _ = gaussian_charfn(cov, lam, 0.0, float(T))
        char_rows.append({
            "lambda": _f(lv),
            "emp_re": _f(re.mean()), "emp_re_se": _f(re.std(ddof=1) / np.sqrt(N)),
            "emp_im": _f(im.mean()), "emp_im_se": _f(im.std(ddof=1) / np.sqrt(N)),
            "analytic_re": _f(np.exp(logmag)),
            "analytic_im": 0.0,
        })
    char_ok = all(
        abs(r["emp_re"] - r["analytic_re"]) <= 3.0 * r["emp_re_se"] + slack
        and abs(r["emp_im"]) <= 3.0 * r["emp_im_se"] + slack
        for r in char_rows
    )

    if two_time is None:
        two_time = [(T / 4, T / 2), (T / 2, T)]
    two_rows = []
    for (s, t) in two_time:
        i_s, i_t = ensemble.time_index(s), ensemble.time_index(t)
        zs = z[:, i_s, :] - z[:, i_s, :].mean(axis=0)
        zt = z[:, i_t, :] - z[:, i_t, :].mean(axis=0)
        emp = zs.T @ zt / (N - 1)
        pred = cov.Sigma_at(float(s)) @ cov.flow(float(s), float(t)).T
        scale = max(float(np.abs(pred).max()), 1e-12)
        two_rows.append({
            "s": _f(s), "t": _f(t),
            "emp": [[_f(v) for v in row] for row in emp],
            "pred": [[_f(v) for v in row] for row in pred],
            "rel_err": _f(np.abs(emp - pred).max() / scale),
        })

    return Report(
        kind="clt",
        inputs={"eps": _f(ensemble.eps), "n": N, "T": _f(T),
                "seed": ensemble.root_seed},
        data={"times": times_rows, "charfn": char_rows, "two_time": two_rows,
              "mean_consistent": bool(mean_ok), "charfn_consistent": bool(char_ok)},
    )


# -- frozen-dynamics fluctuation sums ---------------------------------------------

def frozen_fluctuation_sums(system: FastSlowSystem, pair: StandardPair,
                            theta_freeze, n_steps: int, n_traj: int,
                            root_seed: int, omega_bar_value) -> np.ndarray:
    """Normalized Birkhoff sums (1/sqrt(n)) sum (omega - omega_bar)(x_k, theta).

    The slow coordinate is held at theta_freeze, so the ensemble variance of
    the result converges to the summed-autocovariance diffusion matrix; used
    for null calibration of the fluctuation machinery.
    """
    theta = np.atleast_1d(np.asarray(theta_freeze, dtype=float))
    wbar = np.asarray(omega_bar_value, dtype=float)
    us = stream_uniforms(root_seed, n_traj)
    x, _ = sample_from_uniform(pair, us)
    th = np.broadcast_to(theta, (n_traj, system.d))
    acc = np.zeros((n_traj, system.d))
    for _ in range(n_steps):
        acc += system.omega(x, th) - wbar
        x = system.f(x, th)
    return acc / np.sqrt(n_steps)
