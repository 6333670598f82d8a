"""Averaged drift, drift Jacobian, autocovariances and diffusion matrix.

The diffusion matrix is the summed-autocovariance (Green-Kubo) series of the
centered drift under the frozen dynamics,

    sigma2 = Gamma_0 + sum_{m>=1} (Gamma_m + Gamma_m^T),

truncated where the certified correlation decay makes the tail negligible and
verified a posteriori. The symmetric PSD square root comes from a cyclic
Jacobi eigensolver; the slow dimension is small (1-3) so dense d x d work is
free while the N x N transfer matrix stays sparse.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import default_truncation
from .exceptions import NegativeEigenvalueError, TruncationTailError
from .systems import FastSlowSystem
from .ulam import SRBDensity, UlamOperator, srb_density, ulam_operator


def average_drift(system: FastSlowSystem, density: SRBDensity) -> np.ndarray:
    """Drift averaged against the invariant density: (d,) vector."""
    x = density.midpoints
    th = np.broadcast_to(density.theta, x.shape + (system.d,))
    om = system.omega(x, th)                      # (N, d)
    return (om * density.rho[:, None]).mean(axis=0)


def omega_bar(system: FastSlowSystem, theta, N: int) -> np.ndarray:
    """Convenience: fresh transfer-operator solve, then average_drift."""
    op = ulam_operator(system, theta, N)
    return average_drift(system, srb_density(op))


def drift_jacobian(system: FastSlowSystem, theta, h: float, N: int) -> np.ndarray:
    """Jacobian of the averaged drift by central differences.

    Each column requires two fresh invariant-density solves at theta +- h e_j.
    h must lie in [1e-6, 1e-2]: below that the solve noise dominates, above
    the O(h^2) truncation does.
    """
    if not (1e-6 <= h <= 1e-2):
        raise ValueError("finite-difference step h must lie in [1e-6, 1e-2]")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = system.d
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        wp = omega_bar(system, theta + e, N)
        wm = omega_bar(system, theta - e, N)
        jac[:, j] = (wp - wm) / (2 * h)
    return jac


def centered_drift_values(system: FastSlowSystem, density: SRBDensity) -> np.ndarray:
    """Grid values of omega - omega_bar at the density's theta: (N, d)."""
    x = density.midpoints
    th = np.broadcast_to(density.theta, x.shape + (system.d,))
    om = system.omega(x, th)
    return om - (om * density.rho[:, None]).mean(axis=0)


def autocovariances(system: FastSlowSystem, op: UlamOperator, density: SRBDensity,
                    kmax: int) -> np.ndarray:
    """Gamma_k for k = 0..kmax as a (kmax+1, d, d) array.

    Gamma_k[i, j] = int (omega_hat_i o f^k) * omega_hat_j dm, computed by k
    pushforwards of the signed measures omega_hat_j * m under the discretized
    transfer operator, then quadrature against omega_hat_i.
    """
    what = centered_drift_values(system, density)        # (N, d)
    d = system.d
    gam = np.empty((kmax + 1, d, d))
    push = what * density.rho[:, None]                   # density values of hat-omega_j dm
    for k in range(kmax + 1):
        gam[k] = (what.T @ push) / density.N
        if k < kmax:
            push = np.column_stack([op.P @ push[:, j] for j in range(d)])
    return gam


def autocovariance(system: FastSlowSystem, density: SRBDensity, k: int,
                   op: Optional[UlamOperator] = None,
                   max_lag: int = 10_000) -> np.ndarray:
    """Single Gamma_k; builds the operator when not supplied (k >= 1)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > max_lag:
        raise ValueError(f"lag {k} exceeds the configured horizon {max_lag}")
    if op is None and k > 0:
        op = ulam_operator(system, density.theta, density.N)
    if k == 0:
        what = centered_drift_values(system, density)
        return (what.T @ (what * density.rho[:, None])) / density.N
    return autocovariances(system, op, density, k)[k]


@dataclass(frozen=True)
class DiffusionContext:
    """Everything the fluctuation law needs at one frozen theta."""

    theta: np.ndarray
    N: int
    M: int                       # truncation of the autocovariance sum
    omega_bar: np.ndarray        # (d,)
    D_omega_bar: np.ndarray      # (d, d)
    Gamma: np.ndarray            # (M+1, d, d)
    sigma2: np.ndarray           # (d, d) symmetric PSD
    sigma: np.ndarray            # (d, d) symmetric PSD square root
    tail_estimate: float         # max ||Gamma_k|| over k in [M/2, M]
    coboundary: bool             # degenerate diffusion detected
    decay_rate: Optional[float]  # fitted exponential rate of ||Gamma_k||, if resolvable


def diffusion_matrix(system: FastSlowSystem, theta, N: int,
                     M: Optional[int] = None, fd_step: float = 1e-3,
                     tail_tol: float = 1e-9,
                     coboundary_tol: float = 1e-3,
                     clamp_tol: float = 1e-9,
                     with_jacobian: bool = True) -> DiffusionContext:
    """Assemble the diffusion matrix and its context at frozen theta.

    Negative eigenvalues within -clamp_tol are discretization noise and are
    clamped to zero; anything more negative raises, signalling a truncation
    that is too short or a grid that is too coarse. The tail of ||Gamma_k||
    over [M/2, M] must fall below tail_tol.
    """
    if M is None:
        M = default_truncation(system.lam, tail_tol)
    op = ulam_operator(system, theta, N)
    density = srb_density(op)
    wbar = average_drift(system, density)
    gam = autocovariances(system, op, density, M)

    sigma2 = gam[0].copy()
    for m in range(1, M + 1):
        sigma2 += gam[m] + gam[m].T
    asym = float(np.abs(sigma2 - sigma2.T).max())
    if asym > 1e-12:
        raise NegativeEigenvalueError(f"sigma2 asymmetry {asym:.2e} above 1e-12")
    sigma2 = 0.5 * (sigma2 + sigma2.T)

    norms = np.linalg.norm(gam, axis=(1, 2))
    tail = float(norms[M // 2:].max())
    if tail > tail_tol:
        raise TruncationTailError(
            f"||Gamma_k|| tail {tail:.2e} above {tail_tol:.1e}; increase M"
        )

    evals, evecs = jacobi_eigh(sigma2)
    if evals.min() < -clamp_tol:
        raise NegativeEigenvalueError(
            f"sigma2 eigenvalue {evals.min():.3e} below -{clamp_tol:.1e}"
        )
    evals = np.maximum(evals, 0.0)
    sigma = (evecs * np.sqrt(evals)) @ evecs.T
    sigma = 0.5 * (sigma + sigma.T)

    scale = max(float(np.trace(gam[0])), 1e-30)
    coboundary = bool(evals.min() <= coboundary_tol * scale)
    decay = _fit_decay(norms)

    dbar = (
        drift_jacobian(system, theta, fd_step, N)
        if with_jacobian
        else np.full((system.d, system.d), np.nan)
    )
    return DiffusionContext(
        theta=np.atleast_1d(np.asarray(theta, dtype=float)),
        N=N, M=M, omega_bar=wbar, D_omega_bar=dbar, Gamma=gam,
        sigma2=sigma2, sigma=sigma, tail_estimate=tail,
        coboundary=coboundary, decay_rate=decay,
    )


def _fit_decay(norms: np.ndarray) -> Optional[float]:
    """Least-squares exponential rate of ||Gamma_k|| decay, k >= 1."""
    ks = np.arange(1, norms.shape[0])
    mask = norms[1:] > 1e-14
    if mask.sum() < 3:
        return None
    slope = np.polyfit(ks[mask], np.log(norms[1:][mask]), 1)[0]
    return float(-slope)


def jacobi_eigh(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns (eigenvalues, eigenvectors) with A = V diag(w) V^T. Deterministic
    and dependency-free; intended for the d x d diffusion blocks, d <= 3.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.ravel().copy(), V
    scale = float(np.abs(A).max()) or 1.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(A[p, q]))
                if abs(A[p, q]) <= tol * scale:
                    continue
                beta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(beta) / (abs(beta) + np.hypot(1.0, beta))
                if beta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                V = V @ rot
        if off <= tol * scale:
            break
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def sym_sqrt(A: np.ndarray, clamp_tol: float = 1e-9) -> np.ndarray:
    """Symmetric PSD square root via the Jacobi decomposition."""
    w, V = jacobi_eigh(np.asarray(A, dtype=float))
    if w.min() < -clamp_tol:
        raise NegativeEigenvalueError(f"matrix eigenvalue {w.min():.3e} below -{clamp_tol:.1e}")
    w = np.maximum(w, 0.0)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)
