"""Quantized, thread-safe cache of drift / diffusion data over theta.

Every evaluation of omega_bar, its Jacobian or sigma2 costs at least one
transfer-operator solve, so values are computed on a grid with spacing
``quantum`` and interpolated multilinearly in between. Readers are lock-free
after insertion; insertion holds an exclusive lock. Node values are keyed by
the quantized index reduced by the period, so a trajectory winding around the
torus reuses its nodes.
"""
from __future__ import annotations

import threading
from typing import Optional

import numpy as np

from .diffusion import average_drift, diffusion_matrix, drift_jacobian, sym_sqrt
from .systems import FastSlowSystem
from .ulam import srb_density, ulam_operator


class SRBCache:
    def __init__(self, system: FastSlowSystem, N: int = 4096,
                 M: Optional[int] = None, fd_step: float = 1e-3,
                 quantum: float = 1e-3, tail_tol: float = 1e-9):
        self.system = system
        self.N = int(N)
        self.M = M
        self.fd_step = float(fd_step)
        self.quantum = float(quantum)
        self.tail_tol = float(tail_tol)
        self._values: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        per = 1.0 / self.quantum
        self._period = int(round(per)) if abs(per - round(per)) < 1e-9 else None

    # -- node-level computations ------------------------------------------

    def _node_key(self, idx: np.ndarray, kind: str) -> tuple:
        if self._period is not None:
            idx = np.mod(idx, self._period)
        return (kind, *idx.tolist())

    def _node_value(self, idx: np.ndarray, kind: str) -> np.ndarray:
        key = self._node_key(idx, kind)
        val = self._values.get(key)
        if val is not None:
            return val
        with self._lock:
            val = self._values.get(key)
            if val is not None:
                return val
            theta = np.mod(idx * self.quantum, 1.0)
            if kind == "wbar":
                val = average_drift(
                    self.system, srb_density(ulam_operator(self.system, theta, self.N))
                )
            elif kind == "jac":
                val = drift_jacobian(self.system, theta, self.fd_step, self.N)
            elif kind == "sigma2":
                ctx = diffusion_matrix(
                    self.system, theta, self.N, M=self.M,
                    tail_tol=self.tail_tol, with_jacobian=False,
                )
                val = ctx.sigma2
            else:
                raise KeyError(kind)
            self._values[key] = val
            return val

    def _interp(self, theta, kind: str) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        base = np.floor(theta / self.quantum).astype(np.int64)
        frac = theta / self.quantum - base
        d = self.system.d
        out = None
        for corner in range(1 << d):
            bits = np.array([(corner >> j) & 1 for j in range(d)], dtype=np.int64)
            w = float(np.prod(np.where(bits == 1, frac, 1.0 - frac)))
            if w == 0.0:
                continue
            v = self._node_value(base + bits, kind)
            out = w * v if out is None else out + w * v
        return out

    def _interp_batch(self, thetas: np.ndarray, kind: str) -> np.ndarray:
        """Vectorized interpolation over (n, d) points.

        Unique nodes are solved once and gathered, so the cost is bounded by
        the number of distinct grid cells the points fall in, not n.
        """
        thetas = np.asarray(thetas, dtype=float)
        base = np.floor(thetas / self.quantum).astype(np.int64)
        frac = thetas / self.quantum - base
        d = self.system.d
        out = None
        for corner in range(1 << d):
            bits = np.array([(corner >> j) & 1 for j in range(d)], dtype=np.int64)
            w = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=-1)
            idx = base + bits
            uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
            vals = np.stack([self._node_value(row, kind) for row in uniq])
            term = w.reshape(w.shape + (1,) * (vals.ndim - 1)) * vals[inverse]
            out = term if out is None else out + term
        return out

    # -- public providers ----------------------------------------------------

    def omega_bar(self, theta) -> np.ndarray:
        return self._interp(theta, "wbar")

    def omega_bar_batch(self, thetas: np.ndarray) -> np.ndarray:
        return self._interp_batch(thetas, "wbar")

    def sigma2_batch(self, thetas: np.ndarray) -> np.ndarray:
        return self._interp_batch(thetas, "sigma2")

    def d_omega_bar(self, theta) -> np.ndarray:
        return self._interp(theta, "jac")

    def sigma2(self, theta) -> np.ndarray:
        return self._interp(theta, "sigma2")

    def sigma(self, theta) -> np.ndarray:
        return sym_sqrt(self.sigma2(theta))

    def stats(self) -> dict:
        return {"nodes": len(self._values), "quantum": self.quantum, "N": self.N}
