"""Invariant tangent cones along orbits.

Tracks how the differential of the skew product acts on near-horizontal
vectors (1, eps*u) and on the central field (s, 1): the forward slope u
evolves inside the cone |u| <= c with c = (K+1)/(lam-2), the scalar factor
v accumulates the expansion, and the central slope s is obtained by backward
iteration, which is contracting. Products are also accumulated in log space
so long orbits do not overflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConeConditionError, ConeViolationError
from .orbits import orbit
from .systems import FastSlowSystem


@dataclass(frozen=True)
class ConeFrame:
    """Tangent data after n steps from a base point."""

    n: int
    v: float               # expansion factor of (1, 0)
    log_v: float
    u: np.ndarray          # (d,) scaled unstable slope, |u| <= c
    s: np.ndarray          # (d,) central slope, |s| <= K
    r: float               # central normalization ratio (scalar for d = 1)
    Gamma: float           # product of df/dx along the orbit
    log_Gamma: float
    c: float
    a: float


def cone_constant(system: FastSlowSystem) -> float:
    return (system.K + 1.0) / (system.lam - 2.0)


def cone_frames(system: FastSlowSystem, eps: float, x0: float, theta0,
                n: int) -> list[ConeFrame]:
    """Frames for k = 0..n along the orbit of (x0, theta0).

    Raises ConeConditionError if eps*K*c > 1 (standing admissibility bound)
    and ConeViolationError with the offending step if a slope escapes,
    which signals a misconfigured lam or K.
    """
    c = cone_constant(system)
    if eps * system.K * c > 1.0 + 1e-12:
        raise ConeConditionError(
            f"eps*K*c = {eps * system.K * c:.4f} > 1; reduce eps (c={c:.4f})"
        )
    # certified bound for sup |df/dtheta| / (df/dx); enters the v vs Gamma bound
    a = c * system.dft_sup / system.lam

    orb = orbit(system, eps, x0, theta0, n)
    d = orb.theta.shape[1]
    fx = system.df_dx(orb.x, orb.theta)                  # (n+1,)
    ft = system.df_dtheta(orb.x, orb.theta)              # (n+1, d)
    ox = system.domega_dx(orb.x, orb.theta)              # (n+1, d)
    ot = system.domega_dtheta(orb.x, orb.theta)          # (n+1, d, d)

    # forward pass: u and the expansion factor v
    us = np.zeros((n + 1, d))
    log_v = np.zeros(n + 1)
    for k in range(n):
        u = us[k]
        den = fx[k] + eps * float(ft[k] @ u)
        num = ox[k] + u + eps * (ot[k] @ u)
        us[k + 1] = num / den
        if np.linalg.norm(us[k + 1]) > c * (1 + 1e-12):
            raise ConeViolationError(k + 1, float(np.linalg.norm(us[k + 1])), c)
        log_v[k + 1] = log_v[k] + np.log(den)
    log_gamma = np.concatenate([[0.0], np.cumsum(np.log(fx[:-1]))])

    frames = []
    for m in range(n + 1):
        s, r = _central_slope(fx, ft, ox, ot, eps, m, d)
        with np.errstate(over="ignore"):
            frames.append(
                ConeFrame(
                    n=m,
                    v=float(np.exp(log_v[m])),
                    log_v=float(log_v[m]),
                    u=us[m].copy(),
                    s=s,
                    r=r,
                    Gamma=float(np.exp(log_gamma[m])),
                    log_Gamma=float(log_gamma[m]),
                    c=c,
                    a=a,
                )
            )
    return frames


def _central_slope(fx, ft, ox, ot, eps, m, d):
    """Backward solve for the m-step central slope at the base point.

    The defining condition maps (s_m, 1) at the base to the vertical after m
    steps; backward iteration of the slope is a contraction (factor 1/df/dx),
    so this is the numerically stable direction.
    """
    sigma = np.zeros(d)
    eye = np.eye(d)
    ratios = np.empty(m)
    sigmas = np.empty((m + 1, d))
    sigmas[m] = sigma
    for k in range(m - 1, -1, -1):
        den = fx[k] - eps * float(sigma @ ox[k])
        sigma = ((eye + eps * ot[k]).T @ sigma - ft[k]) / den
        sigmas[k] = sigma
    # normalization ratio of the vertical component along the forward sweep
    if d == 1:
        r = 1.0
        for k in range(m):
            r *= 1.0 + eps * float(ox[k][0] * sigmas[k][0] + ot[k][0, 0])
    else:
        R = eye.copy()
        for k in range(m):
            R = (eps * np.outer(ox[k], sigmas[k]) + eye + eps * ot[k]) @ R
        r = float(np.linalg.det(R)) ** (1.0 / d)
    return sigmas[0], float(r)


def check_frames(system: FastSlowSystem, frames: list[ConeFrame], eps: float,
                 rtol: float = 1e-9) -> dict:
    """Verify the cone-frame bounds; returns measured constants.

    Checks |u| <= c, |s| <= K and Gamma * exp(-a*eps*n) <= v <= Gamma *
    exp(a*eps*n); the per-step ratio bound b for r is measured and reported
    rather than assumed.
    """
    c = frames[0].c
    a = frames[0].a
    b_measured = 0.0
    for k in range(1, len(frames)):
        fr = frames[k]
        if np.linalg.norm(fr.u) > c * (1 + rtol):
            raise ConeViolationError(k, float(np.linalg.norm(fr.u)), c)
        if np.linalg.norm(fr.s) > system.K * (1 + rtol):
            raise ConeViolationError(k, float(np.linalg.norm(fr.s)), system.K)
        width = a * eps * k
        dev = fr.log_v - fr.log_Gamma
        if not (-width - rtol <= dev <= width + rtol):
            raise ConeViolationError(k, float(dev), width)
        if eps > 0:
            prev = frames[k - 1]
            if prev.r > 0 and fr.r > 0:
                b_measured = max(b_measured, abs(np.log(fr.r / prev.r)) / eps)
    return {"c": c, "a": a, "b_measured": b_measured}
