"""Fast-slow skew products on the cylinder T^1 x T^d.

A system is a pair of maps

    x' = f(x, theta)            (fast, uniformly expanding: df/dx >= lam > 2)
    theta' = theta + eps * omega(x, theta)   (slow)

restricted here to trigonometric polynomials, so that every derivative is
available in closed form and the expansion bound lam and the derivative
bound K are certified by coefficient sums. All evaluators broadcast:
``x`` has shape ``(...)`` and ``theta`` shape ``(..., d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import SystemValidationError

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigTerm:
    """One product term  amp * Fx(2*pi*(kx*x + px)) * Ft(2*pi*(<l,theta> + pt)).

    ``fx``/``ft`` are 'sin', 'cos' or 'none' (constant factor 1).
    """

    amp: float
    kx: int = 0
    px: float = 0.0
    fx: str = "none"
    lt: tuple[int, ...] = ()
    pt: float = 0.0
    ft: str = "none"


def _factor(kind: str, k: float, phase: float, u: np.ndarray, order: int) -> np.ndarray:
    """Derivative of order 0/1/2 of sin|cos(2*pi*(k*u + phase)) w.r.t. u."""
    if kind == "none":
        if order == 0:
            return np.ones_like(u)
        return np.zeros_like(u)
    arg = _TWO_PI * (k * u + phase)
    w = _TWO_PI * k
    if kind == "sin":
        if order == 0:
            return np.sin(arg)
        if order == 1:
            return w * np.cos(arg)
        return -(w * w) * np.sin(arg)
    if kind == "cos":
        if order == 0:
            return np.cos(arg)
        if order == 1:
            return -w * np.sin(arg)
        return -(w * w) * np.cos(arg)
    raise ValueError(f"unknown trig kind {kind!r}")


class FastSlowSystem:
    """Trig-polynomial fast-slow system with analytic derivative accessors.

    Parameters
    ----------
    d : slow dimension (theta lives on T^d)
    degree : topological degree of the fast map (integer >= 2)
    f_terms : periodic part of f as a list of TrigTerm
    omega_terms : one list of TrigTerm per slow component
    name : identifier used in reports
    lam, K : optional certified bounds; derived from coefficients if omitted
    """

    def __init__(
        self,
        d: int,
        degree: int,
        f_terms: list[TrigTerm],
        omega_terms: list[list[TrigTerm]],
        name: str = "custom",
        lam: Optional[float] = None,
        K: Optional[float] = None,
    ):
        if d < 1:
            raise SystemValidationError("slow dimension d must be >= 1")
        if len(omega_terms) != d:
            raise SystemValidationError("omega_terms must have one list per component")
        self.d = d
        self.degree = int(degree)
        self.name = name
        self.f_terms = [TrigTerm(*t) if not isinstance(t, TrigTerm) else t for t in f_terms]
        self.omega_terms = [
            [TrigTerm(*t) if not isinstance(t, TrigTerm) else t for t in comp]
            for comp in omega_terms
        ]
        for t in self.f_terms + [t for comp in self.omega_terms for t in comp]:
            if len(t.lt) not in (0, d):
                raise SystemValidationError("theta frequency vector has wrong length")

        # certified coefficient-sum bounds
        fx_wobble = sum(abs(t.amp) * _TWO_PI * abs(t.kx) for t in self.f_terms if t.fx != "none")
        lam_cert = self.degree - fx_wobble
        self.lam = float(lam) if lam is not None else lam_cert
        if self.lam <= 2.0:
            raise SystemValidationError(f"expansion bound lam={self.lam:.4f} <= 2")
        if self.lam > lam_cert + 1e-12:
            raise SystemValidationError(
                f"claimed lam={self.lam} exceeds certified bound {lam_cert:.6f}"
            )
        self.dfx_sup = self.degree + fx_wobble
        self.dft_sup = max(
            (sum(abs(t.amp) * _TWO_PI * abs(t.lt[j]) for t in self.f_terms if t.lt) if self.f_terms else 0.0)
            for j in range(d)
        ) if self.f_terms else 0.0
        self.domx_sup = max(
            sum(abs(t.amp) * _TWO_PI * abs(t.kx) for t in comp) for comp in self.omega_terms
        )
        self.domt_sup = max(
            (
                max((sum(abs(t.amp) * _TWO_PI * abs(t.lt[j]) for t in comp if t.lt) for j in range(d)))
                if comp
                else 0.0
            )
            for comp in self.omega_terms
        )
        K_cert = max(self.domx_sup, self.domt_sup, self.dft_sup)
        self.K = float(K) if K is not None else K_cert
        if self.K + 1e-12 < K_cert:
            raise SystemValidationError(
                f"claimed K={self.K} below certified bound {K_cert:.6f}"
            )
        # per-component sup of omega and a Euclidean bound, for Lipschitz checks
        self.omega_comp_sup = np.array(
            [sum(abs(t.amp) for t in comp) for comp in self.omega_terms]
        )
        self.omega_sup = float(np.linalg.norm(self.omega_comp_sup))
        # curvature bounds used by the standard-pair constants
        self.fxx_sup = sum(abs(t.amp) * _TWO_PI**2 * t.kx**2 for t in self.f_terms)
        self.fxt_sup = max(
            (sum(abs(t.amp) * _TWO_PI**2 * abs(t.kx) * abs(t.lt[j]) for t in self.f_terms if t.lt) for j in range(d)),
            default=0.0,
        ) if self.f_terms else 0.0
        self.ftt_sup = max(
            (
                sum(abs(t.amp) * _TWO_PI**2 * abs(t.lt[i]) * abs(t.lt[j]) for t in self.f_terms if t.lt)
                for i in range(d)
                for j in range(d)
            ),
            default=0.0,
        ) if self.f_terms else 0.0
        self.f_second_sup = max(self.fxx_sup, self.fxt_sup, self.ftt_sup)
        self.oxx_sup = max(
            sum(abs(t.amp) * _TWO_PI**2 * t.kx**2 for t in comp) for comp in self.omega_terms
        )
        self.oxt_sup = max(
            (
                max(
                    (sum(abs(t.amp) * _TWO_PI**2 * abs(t.kx) * abs(t.lt[j]) for t in comp if t.lt) for j in range(d)),
                    default=0.0,
                )
                if comp
                else 0.0
            )
            for comp in self.omega_terms
        )
        self.ott_sup = max(
            (
                max(
                    (
                        sum(abs(t.amp) * _TWO_PI**2 * abs(t.lt[i]) * abs(t.lt[j]) for t in comp if t.lt)
                        for i in range(d)
                        for j in range(d)
                    ),
                    default=0.0,
                )
                if comp
                else 0.0
            )
            for comp in self.omega_terms
        )

    # -- evaluation helpers ------------------------------------------------

    def _sum_terms(self, terms, x, theta, ox: int, otj=None, otk=None):
        """Sum of term derivatives; otj/otk select theta components (None = value)."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, theta.shape[:-1]))
        for t in terms:
            u = theta @ np.asarray(t.lt, dtype=float) if t.lt else np.zeros(theta.shape[:-1])
            ot = (otj is not None) + (otk is not None)
            val = t.amp * _factor(t.fx, t.kx, t.px, x, ox) * _factor(t.ft, 1.0, t.pt, u, ot)
            if otj is not None:
                val = val * (t.lt[otj] if t.lt else 0.0)
            if otk is not None:
                val = val * (t.lt[otk] if t.lt else 0.0)
            out = out + val
        return out

    # -- fast map ----------------------------------------------------------

    def f_lift(self, x, theta):
        """Lift of the fast map to the real line (degree * x + periodic part)."""
        return self.degree * np.asarray(x, dtype=float) + self._sum_terms(self.f_terms, x, theta, 0)

    def f(self, x, theta):
        return np.mod(self.f_lift(x, theta), 1.0)

    def df_dx(self, x, theta):
        return self.degree + self._sum_terms(self.f_terms, x, theta, 1)

    def df_dtheta(self, x, theta):
        return np.stack(
            [self._sum_terms(self.f_terms, x, theta, 0, otj=j) for j in range(self.d)], axis=-1
        )

    def d2f_dx2(self, x, theta):
        return self._sum_terms(self.f_terms, x, theta, 2)

    def d2f_dxdtheta(self, x, theta):
        return np.stack(
            [self._sum_terms(self.f_terms, x, theta, 1, otj=j) for j in range(self.d)], axis=-1
        )

    def d2f_dtheta2(self, x, theta):
        rows = [
            [self._sum_terms(self.f_terms, x, theta, 0, otj=j, otk=k) for k in range(self.d)]
            for j in range(self.d)
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    # -- slow drift ----------------------------------------------------------

    def omega(self, x, theta):
        return np.stack(
            [self._sum_terms(comp, x, theta, 0) for comp in self.omega_terms], axis=-1
        )

    def domega_dx(self, x, theta):
        return np.stack(
            [self._sum_terms(comp, x, theta, 1) for comp in self.omega_terms], axis=-1
        )

    def domega_dtheta(self, x, theta):
        """Entry (..., i, j) = d omega_i / d theta_j."""
        rows = [
            [self._sum_terms(comp, x, theta, 0, otj=j) for j in range(self.d)]
            for comp in self.omega_terms
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    def d2omega_dx2(self, x, theta):
        return np.stack(
            [self._sum_terms(comp, x, theta, 2) for comp in self.omega_terms], axis=-1
        )

    def d2omega_dxdtheta(self, x, theta):
        rows = [
            [self._sum_terms(comp, x, theta, 1, otj=j) for j in range(self.d)]
            for comp in self.omega_terms
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    def frozen_map(self, theta):
        """The circle map f(., theta) with theta held fixed, plus its lift."""
        theta = np.asarray(theta, dtype=float)

        def fl(x):
            xs = np.asarray(x, dtype=float)
            return self.f_lift(xs, np.broadcast_to(theta, xs.shape + (self.d,)))

        return fl

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "degree": self.degree,
            "lam": self.lam,
            "K": self.K,
            "f_terms": [list(dataclass_tuple(t)) for t in self.f_terms],
            "omega_terms": [
                [list(dataclass_tuple(t)) for t in comp] for comp in self.omega_terms
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "FastSlowSystem":
        return FastSlowSystem(
            d=data["d"],
            degree=data["degree"],
            f_terms=[TrigTerm(a, k, p, fx, tuple(lt), pt, ft) for a, k, p, fx, lt, pt, ft in data["f_terms"]],
            omega_terms=[
                [TrigTerm(a, k, p, fx, tuple(lt), pt, ft) for a, k, p, fx, lt, pt, ft in comp]
                for comp in data["omega_terms"]
            ],
            name=data.get("name", "custom"),
            lam=data.get("lam"),
            K=data.get("K"),
        )


def dataclass_tuple(t: TrigTerm):
    return (t.amp, t.kx, t.px, t.fx, list(t.lt), t.pt, t.ft)


# -- fixture registry --------------------------------------------------------

def fixture(name: str) -> FastSlowSystem:
    """Named test systems used across the package.

    LIN : f = 3x mod 1, omega = cos(2 pi x). Closed-form everything.
    CBD : f as LIN, omega = cos(2 pi x) - cos(6 pi x), a dynamical coboundary
          g - g o f with g = cos(2 pi x); degenerate diffusion.
    CPL : f = 3x + (0.9/2pi) sin(2 pi theta) sin(2 pi x), omega =
          sin(2 pi theta) + cos(2 pi x); genuine theta coupling, lam = 2.1.
    """
    key = name.upper()
    if key == "LIN":
        return FastSlowSystem(
            d=1,
            degree=3,
            f_terms=[],
            omega_terms=[[TrigTerm(1.0, kx=1, fx="cos")]],
            name="LIN",
        )
    if key == "CBD":
        return FastSlowSystem(
            d=1,
            degree=3,
            f_terms=[],
            omega_terms=[[TrigTerm(1.0, kx=1, fx="cos"), TrigTerm(-1.0, kx=3, fx="cos")]],
            name="CBD",
        )
    if key == "CPL":
        return FastSlowSystem(
            d=1,
            degree=3,
            f_terms=[TrigTerm(0.9 / _TWO_PI, kx=1, fx="sin", lt=(1,), ft="sin")],
            omega_terms=[[TrigTerm(1.0, lt=(1,), ft="sin"), TrigTerm(1.0, kx=1, fx="cos")]],
            name="CPL",
        )
    raise KeyError(f"unknown fixture {name!r}")


FIXTURES = ("LIN", "CBD", "CPL")


# -- validation ---------------------------------------------------------------

def validate_system(system: FastSlowSystem, rtol: float = 1e-6, n_probe: int = 13) -> None:
    """Check analytic derivatives against finite differences on a probe grid.

    Also verifies df/dx >= lam and that K dominates the three derivative
    sup-norms at the probes. Guards against inconsistent user-supplied data.
    """
    h = 1e-6
    xs = (np.arange(n_probe) + 0.383) / n_probe
    rows = np.stack(
        [((np.arange(n_probe) * (j + 2) + 0.271) / n_probe) % 1.0 for j in range(system.d)],
        axis=-1,
    )
    xg, ig = np.meshgrid(xs, np.arange(n_probe), indexing="ij")
    x = xg.ravel()
    theta = rows[ig.ravel()]

    def _close(a, b, what):
        scale = 1.0 + np.abs(a)
        bad = np.abs(a - b) > rtol * scale
        if np.any(bad):
            i = int(np.argmax(np.abs(a - b) / scale))
            raise SystemValidationError(
                f"{what}: analytic and finite-difference values disagree "
                f"(worst rel err {float((np.abs(a - b) / scale).ravel()[i]):.2e})"
            )

    fd_fx = (system.f_lift(x + h, theta) - system.f_lift(x - h, theta)) / (2 * h)
    _close(system.df_dx(x, theta), fd_fx, "df/dx")
    fd_ox = (system.omega(x + h, theta) - system.omega(x - h, theta)) / (2 * h)
    _close(system.domega_dx(x, theta), fd_ox, "domega/dx")
    for j in range(system.d):
        e = np.zeros(system.d)
        e[j] = h
        fd_ft = (system.f_lift(x, theta + e) - system.f_lift(x, theta - e)) / (2 * h)
        _close(system.df_dtheta(x, theta)[..., j], fd_ft, "df/dtheta")
        fd_ot = (system.omega(x, theta + e) - system.omega(x, theta - e)) / (2 * h)
        _close(system.domega_dtheta(x, theta)[..., j], fd_ot, "domega/dtheta")

    dfx = system.df_dx(x, theta)
    if np.any(dfx < system.lam - 1e-9):
        raise SystemValidationError(
            f"df/dx drops to {float(dfx.min()):.6f} < lam = {system.lam}"
        )
    sup = max(
        float(np.abs(system.domega_dx(x, theta)).max()),
        float(np.abs(system.domega_dtheta(x, theta)).max()),
        float(np.abs(system.df_dtheta(x, theta)).max()),
    )
    if sup > system.K + 1e-9:
        raise SystemValidationError(f"K={system.K} smaller than observed sup {sup:.6f}")
