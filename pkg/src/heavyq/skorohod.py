"""Skorohod problem on the nonnegative orthant with reflection R = I - P^T.

Given a path psi with psi(0) in the orthant, find (phi, eta) with

    phi = psi + R eta,   phi >= 0,   eta(0) = 0,
    eta_i nondecreasing, increasing only while phi_i = 0.

Paths are piecewise constant between grid points.  The multi-dimensional
solver iterates the reflection fixed point

    eta_i <- max(0, sup_{s<=t} [ (P^T eta)_i(s) - psi_i(s) ]),

which contracts geometrically at rate governed by the spectral radius of P.
For K = 1 (P = 0) the fixed point collapses to the running-maximum formula,
implemented directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import spectral_radius, _check_substochastic
from .paths import GridPath

__all__ = [
    "SPSolution",
    "SPConvergenceError",
    "solve_sp",
    "solve_sp_1d",
    "lipschitz_probe",
    "OrthantReflector",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-10


class SPConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"reflection fixed point did not reach tolerance after {iterations} "
            f"iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SPSolution:
    """Solution pair of the discrete Skorohod problem.

    residual is the final sup-norm change of the fixed-point iteration
    (0.0 for the closed-form one-dimensional solve).
    """

    phi: GridPath
    eta: GridPath
    iterations: int
    residual: float


def _default_max_iter(rho: float, tol: float) -> int:
    if rho <= 0.0:
        return 50
    return int(math.ceil(math.log(tol) / math.log(rho))) + 50


def _check_start(values: np.ndarray, tol: float):
    if np.any(values[0] < -tol):
        raise ValueError("psi(0) must lie in the nonnegative orthant")


def solve_sp_1d(psi: GridPath) -> SPSolution:
    """Closed-form one-dimensional solution: eta(t) = max(0, max_{s<=t} -psi(s))."""
    if psi.dim != 1:
        raise ValueError("solve_sp_1d expects a one-dimensional path")
    _check_start(psi.values, DEFAULT_TOL)
    v = psi.values[:, 0]
    eta = np.maximum(np.maximum.accumulate(-v), 0.0)
    phi = np.maximum(v + eta, 0.0)
    return SPSolution(GridPath(psi.grid, phi), GridPath(psi.grid, eta), 1, 0.0)


def solve_sp(psi: GridPath, P: np.ndarray, tol: float = DEFAULT_TOL,
             max_iter: int | None = None) -> SPSolution:
    """Reflection fixed point for the orthant Skorohod problem.

    Parameters
    ----------
    psi : GridPath
        Input path with psi(0) in the orthant.
    P : ndarray
        Substochastic routing matrix with spectral radius below 1.
    tol : float
        Sup-norm convergence tolerance of the eta iteration.
    max_iter : int, optional
        Defaults to ceil(log tol / log rho) + 50.
    """
    P = _check_substochastic(P)
    if P.shape[0] != psi.dim:
        raise ValueError("routing matrix size does not match path dimension")
    rho = spectral_radius(P)
    if rho >= 1.0:
        raise ValueError("spectral radius of P must be below 1")
    if max_iter is None:
        max_iter = _default_max_iter(rho, tol)
    _check_start(psi.values, tol)

    V = psi.values
    R = np.eye(P.shape[0]) - P.T
    eta = np.zeros_like(V)
    change = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        target = eta @ P - V  # (P^T eta)_i(s) - psi_i(s) at every grid time
        new = np.maximum(np.maximum.accumulate(target, axis=0), 0.0)
        change = float(np.max(np.abs(new - eta)))
        eta = new
        if change < tol:
            break
    else:
        raise SPConvergenceError(change, iterations)

    phi = V + eta @ R.T
    # convergence leaves residues of order tol below the boundary
    phi = np.maximum(phi, 0.0)
    return SPSolution(GridPath(psi.grid, phi), GridPath(psi.grid, eta), iterations, change)


def lipschitz_probe(psi1: GridPath, psi2: GridPath, P: np.ndarray,
                    tol: float = DEFAULT_TOL) -> float:
    """sup_t |phi1 - phi2| / sup_t |psi1 - psi2| (Euclidean norm per time).

    Returns 0.0 for identical inputs.
    """
    if psi1.dim != psi2.dim or len(psi1.grid) != len(psi2.grid) or np.any(psi1.grid != psi2.grid):
        raise ValueError("probe paths must share grid and dimension")
    denom = float(np.max(np.linalg.norm(psi1.values - psi2.values, axis=1)))
    if denom == 0.0:
        return 0.0
    s1 = solve_sp(psi1, P, tol)
    s2 = solve_sp(psi2, P, tol)
    num = float(np.max(np.linalg.norm(s1.phi.values - s2.phi.values, axis=1)))
    return num / denom


class OrthantReflector:
    """Step-by-step reflection with memory, for incremental inputs.

    Feeding increments of psi reproduces the discrete Skorohod solution of
    the accumulated path: each step solves the one-step complementarity
    problem   x' = x + delta + R d_eta >= 0,  d_eta >= 0,  x'_i d_eta_i = 0
    via the same contraction as solve_sp.  Batched over rows so many
    independent paths advance in one call.
    """

    def __init__(self, P: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int | None = None):
        self.P = _check_substochastic(P)
        rho = spectral_radius(self.P)
        if rho >= 1.0:
            raise ValueError("spectral radius of P must be below 1")
        self.tol = tol
        self.max_iter = max_iter if max_iter is not None else _default_max_iter(rho, tol)
        self._one_dim = self.P.shape[0] == 1 and self.P[0, 0] == 0.0
        self._RT = (np.eye(self.P.shape[0]) - self.P.T).T

    def step(self, x: np.ndarray, delta: np.ndarray):
        """Advance states x (rows) by unconstrained increments delta (rows).

        Returns (x_new, d_eta), both with the shape of x.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        delta = np.atleast_2d(np.asarray(delta, dtype=float))
        cand = x + delta
        if self._one_dim:
            x_new = np.maximum(cand, 0.0)
            return x_new, x_new - cand
        d_eta = np.zeros_like(cand)
        for it in range(self.max_iter):
            new = np.maximum(d_eta @ self.P - cand, 0.0)
            change = float(np.max(np.abs(new - d_eta))) if new.size else 0.0
            d_eta = new
            if change < self.tol:
                break
        else:  # pragma: no cover
            raise SPConvergenceError(change, self.max_iter)
        x_new = np.maximum(cand + d_eta @ self._RT, 0.0)
        return x_new, d_eta
