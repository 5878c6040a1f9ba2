"""The reflected diffusion limit and its drivers.

For a critically loaded network the diffusion-scaled queue process converges
to X = Gamma(X_0 + integral of a(X) + M), where Gamma is the orthant Skorohod
map for R = I - P^T and M is a continuous martingale built from the primitive
limits:

    M_i(t) = W^A_i(lam_i(0) t) + sum_j W^Phi_ji(mu_j(0) t)
             - sum_j (delta_ij - p_ji) W^D_j(mu_j(0) t),

with W^A_i = sqrt(a_i) lam_i B^A_i on arrival stations (zero elsewhere),
W^D_k = sqrt(s_k) mu_k B^D_k, and W^Phi_j a K-dimensional Brownian motion
with the multinomial covariance p_ji (delta_ik - p_jk).  All drivers are
independent, so M is a Brownian motion with an explicit covariance matrix;
both the covariance route and the componentwise route are implemented and
must agree in law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .network import _check_substochastic
from .paths import GridPath
from .primitives import SeedLike, _seed_sequence
from .skorohod import OrthantReflector

__all__ = [
    "JacksonParams",
    "CovarianceMatrix",
    "LimitSpec",
    "build_covariance",
    "build_limit_martingale_path",
    "simulate_reflected_diffusion",
    "sample_reflected_marginals",
    "rbm_special_case",
    "MAX_STEP",
]

# integrator steps must resolve the diffusion; anything coarser is refused
MAX_STEP = 1e-2
_NEG_PIVOT_TOL = 1e-12


def _pivoted_psd_factor(A: np.ndarray, neg_tol: float = _NEG_PIVOT_TOL) -> np.ndarray:
    """Factor F with A = F F^T for symmetric positive semidefinite A.

    Outer-product Cholesky with diagonal pivoting; pivots in
    [-neg_tol * scale, neg_tol * scale] are truncated to zero, anything more
    negative raises.  F is lower-triangular up to the pivot permutation.
    """
    W = np.array(A, dtype=float)
    n = W.shape[0]
    L = np.zeros((n, n))
    perm = list(range(n))
    scale = max(1.0, float(np.max(np.abs(np.diag(W))))) if n else 1.0
    for k in range(n):
        rem = np.diag(W)[k:]
        j = k + int(np.argmax(rem))
        if W[j, j] < -neg_tol * scale:
            raise ValueError(f"matrix is indefinite: pivot {W[j, j]:.3e}")
        if j != k:
            W[[k, j], :] = W[[j, k], :]
            W[:, [k, j]] = W[:, [j, k]]
            L[[k, j], :k] = L[[j, k], :k]
            perm[k], perm[j] = perm[j], perm[k]
        pivot = W[k, k]
        if pivot <= neg_tol * scale:
            continue  # truncated direction
        d = math.sqrt(pivot)
        L[k, k] = d
        if k + 1 < n:
            col = W[k + 1:, k] / d
            L[k + 1:, k] = col
            W[k + 1:, k + 1:] -= np.outer(col, col)
    F = np.zeros((n, n))
    F[perm, :] = L
    return F


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric PSD matrix together with a factor for sampling."""

    matrix: np.ndarray
    cholesky: np.ndarray  # matrix == cholesky @ cholesky.T

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, neg_tol: float = _NEG_PIVOT_TOL) -> "CovarianceMatrix":
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("covariance must be square")
        if not np.all(np.isfinite(M)):
            raise ValueError("covariance must be finite")
        sym_err = float(np.max(np.abs(M - M.T))) if M.size else 0.0
        if sym_err > 1e-10 * max(1.0, float(np.max(np.abs(M))) if M.size else 1.0):
            raise ValueError(f"covariance is not symmetric (defect {sym_err:.3e})")
        M = (M + M.T) / 2.0
        return cls(M, _pivoted_psd_factor(M, neg_tol))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class JacksonParams:
    """Nominal rates, gap variances, speed values at the origin, and routing.

    Stations outside arrival_stations follow the usual convention: nominal
    arrival rate 1, gap variance 0, arrival speed 0 (enforced here).
    """

    arrival_rates: np.ndarray
    arrival_variances: np.ndarray
    service_rates: np.ndarray
    service_variances: np.ndarray
    arrival_speed0: np.ndarray
    service_speed0: np.ndarray
    routing: np.ndarray
    arrival_stations: frozenset

    def __post_init__(self):
        P = _check_substochastic(self.routing)
        K = P.shape[0]
        fields = ["arrival_rates", "arrival_variances", "service_rates",
                  "service_variances", "arrival_speed0", "service_speed0"]
        vals = {}
        for name in fields:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (K,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be {K} finite values")
            vals[name] = v
        J = frozenset(int(i) for i in self.arrival_stations)
        if any(i < 0 or i >= K for i in J):
            raise ValueError("arrival station index out of range")
        off = np.array([i not in J for i in range(K)])
        vals["arrival_rates"] = np.where(off, 1.0, vals["arrival_rates"])
        vals["arrival_variances"] = np.where(off, 0.0, vals["arrival_variances"])
        vals["arrival_speed0"] = np.where(off, 0.0, vals["arrival_speed0"])
        for name in ("arrival_rates", "service_rates"):
            if np.any(vals[name] <= 0):
                raise ValueError(f"{name} must be positive")
        for name in ("arrival_variances", "service_variances", "arrival_speed0", "service_speed0"):
            if np.any(vals[name] < 0):
                raise ValueError(f"{name} must be nonnegative")
        for name in fields:
            object.__setattr__(self, name, vals[name])
        object.__setattr__(self, "routing", P)
        object.__setattr__(self, "arrival_stations", J)

    @property
    def dim(self) -> int:
        return self.routing.shape[0]


def build_covariance(params: JacksonParams) -> CovarianceMatrix:
    """Covariance per unit time of the limit martingale M."""
    K = params.dim
    P = params.routing
    lam, a = params.arrival_rates, params.arrival_variances
    mu, s = params.service_rates, params.service_variances
    lhat, shat = params.arrival_speed0, params.service_speed0

    lam3a = lhat * lam ** 3 * a      # arrival-stream term
    mus = shat * mu                  # routing-noise weight per source
    mu3s = shat * mu ** 3 * s        # service-stream weight per source

    A = np.zeros((K, K))
    for i in range(K):
        acc = lam3a[i] + mu3s[i] * (1.0 - 2.0 * P[i, i])
        for j in range(K):
            acc += P[j, i] * (mus[j] * (1.0 - P[j, i]) + mu3s[j] * P[j, i])
        A[i, i] = acc
    for i in range(K):
        for j in range(i + 1, K):
            acc = mu3s[i] * P[i, j] + mu3s[j] * P[j, i]
            for k in range(K):
                acc += P[k, i] * P[k, j] * (mus[k] - mu3s[k])
            A[i, j] = A[j, i] = -acc
    try:
        return CovarianceMatrix.from_matrix(A)
    except ValueError as exc:
        raise ValueError(f"limit covariance is not positive semidefinite: {exc}") from exc


# ---------------------------------------------------------------------------
# martingale synthesis


class _NoiseSampler:
    """Per-step Gaussian increments of M, batched over paths."""

    def __init__(self, source: Union[CovarianceMatrix, JacksonParams], dt: float):
        self.dt = dt
        if isinstance(source, CovarianceMatrix):
            self.mode = "covariance"
            self._scaled_factor = source.cholesky * math.sqrt(dt)
            self.dim = source.dim
            return
        if not isinstance(source, JacksonParams):
            raise TypeError("noise source must be CovarianceMatrix or JacksonParams")
        self.mode = "componentwise"
        p = source
        K = p.dim
        self.dim = K
        lam0 = p.arrival_speed0 * p.arrival_rates          # lam_i(0)
        mu0 = p.service_speed0 * p.service_rates           # mu_j(0)
        # arrival streams: independent, variance a_i lam_i^2 per unit internal time
        self._arr_coef = np.sqrt(p.arrival_variances * p.arrival_rates ** 2 * lam0 * dt)
        # service streams: combined through I - P^T
        svc_coef = np.sqrt(p.service_variances * p.service_rates ** 2 * mu0 * dt)
        self._svc_map = -(np.eye(K) - p.routing.T) * svc_coef[None, :]
        # routing streams: one multinomial-covariance factor per source
        self._route_factors = []
        for j in range(K):
            row = p.routing[j]
            C = (np.diag(row) - np.outer(row, row)) * mu0[j] * dt
            self._route_factors.append(_pivoted_psd_factor(C))

    def sample(self, rng: np.random.Generator, n_paths: int) -> np.ndarray:
        if self.mode == "covariance":
            return rng.standard_normal((n_paths, self.dim)) @ self._scaled_factor.T
        K = self.dim
        out = rng.standard_normal((n_paths, K)) * self._arr_coef
        out += rng.standard_normal((n_paths, K)) @ self._svc_map.T
        for j in range(K):
            out += rng.standard_normal((n_paths, K)) @ self._route_factors[j].T
        return out


def build_limit_martingale_path(source: Union[CovarianceMatrix, JacksonParams],
                                horizon: float, dt: float, seed: SeedLike,
                                mode: str = "auto") -> GridPath:
    """One sample path of the limit martingale M on a uniform grid.

    mode: "covariance" draws increments through the covariance factor,
    "componentwise" synthesizes the arrival, routing, and service drivers
    separately; "auto" picks componentwise for JacksonParams input.
    """
    if dt <= 0 or dt > MAX_STEP:
        raise ValueError(f"dt must lie in (0, {MAX_STEP}]")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if mode == "auto":
        mode = "componentwise" if isinstance(source, JacksonParams) else "covariance"
    if mode == "covariance" and isinstance(source, JacksonParams):
        source = build_covariance(source)
    elif mode == "componentwise" and not isinstance(source, JacksonParams):
        raise ValueError("componentwise synthesis needs JacksonParams")
    m = max(1, int(round(horizon / dt)))
    grid = np.linspace(0.0, horizon, m + 1)
    sampler = _NoiseSampler(source, grid[1] - grid[0])
    rng = np.random.default_rng(np.random.PCG64(_seed_sequence(seed)))
    inc = np.vstack([np.zeros((1, sampler.dim)), sampler.sample(rng, m)])
    return GridPath(grid, np.cumsum(inc, axis=0))


# ---------------------------------------------------------------------------
# the reflected limit process


@dataclass
class LimitSpec:
    """Initial condition, drift, and noise of the reflected limit diffusion.

    initial: a K-vector (point mass) or callable(rng, n) -> (n, K) sampler.
    drift: vectorized callable mapping states (m, K) to drifts (m, K); objects
    exposing eval_grid (like DriftFunction) are adapted; None means zero.
    noise: CovarianceMatrix or JacksonParams (componentwise synthesis).
    """

    initial: Union[np.ndarray, Callable]
    drift: Optional[Callable]
    noise: Union[CovarianceMatrix, JacksonParams]

    def noise_dim(self) -> int:
        return self.noise.dim

    def sample_initial(self, rng: np.random.Generator, n_paths: int) -> np.ndarray:
        K = self.noise_dim()
        if callable(self.initial):
            x0 = np.asarray(self.initial(rng, n_paths), dtype=float)
            if x0.shape != (n_paths, K):
                raise ValueError("initial sampler must return (n_paths, K)")
        else:
            x0 = np.broadcast_to(np.asarray(self.initial, dtype=float), (n_paths, K)).copy()
        if np.any(x0 < 0):
            raise ValueError("initial states must lie in the orthant")
        return x0

    def drift_at(self, X: np.ndarray) -> Optional[np.ndarray]:
        if self.drift is None:
            return None
        fn = getattr(self.drift, "eval_grid", self.drift)
        return np.asarray(fn(X), dtype=float)


def _integrate(spec: LimitSpec, P: np.ndarray, horizon: float, dt: float,
               n_paths: int, seed: SeedLike, record_times=None, full_grid: bool = False):
    if dt <= 0 or dt > MAX_STEP:
        raise ValueError(f"dt must lie in (0, {MAX_STEP}]")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    m = max(1, int(round(horizon / dt)))
    grid = np.linspace(0.0, horizon, m + 1)
    step = grid[1] - grid[0]
    sampler = _NoiseSampler(spec.noise, step)
    K = sampler.dim
    reflector = OrthantReflector(P)
    rng = np.random.default_rng(np.random.PCG64(_seed_sequence(seed)))
    X = spec.sample_initial(rng, n_paths)

    if full_grid:
        path = np.empty((m + 1, n_paths, K))
        path[0] = X
    out = None
    rec_idx = None
    if record_times is not None:
        rec_idx = np.clip(np.round(np.asarray(record_times, dtype=float) / step).astype(int), 0, m)
        out = np.empty((n_paths, len(rec_idx), K))
        for pos in np.nonzero(rec_idx == 0)[0]:
            out[:, pos] = X

    for k in range(1, m + 1):
        delta = sampler.sample(rng, n_paths)
        a = spec.drift_at(X)
        if a is not None:
            delta = delta + a * step
        X, _ = reflector.step(X, delta)
        if full_grid:
            path[k] = X
        if rec_idx is not None:
            for pos in np.nonzero(rec_idx == k)[0]:
                out[:, pos] = X
    return grid, (path if full_grid else out)


def simulate_reflected_diffusion(spec: LimitSpec, P: np.ndarray, horizon: float,
                                 dt: float, seed: SeedLike) -> GridPath:
    """One Euler path of the reflected limit diffusion.

    The unconstrained increment a(X) dt + Delta M is pushed through the
    orthant reflection step by step, which reproduces the Skorohod solution
    of the accumulated free path.
    """
    grid, path = _integrate(spec, P, horizon, dt, n_paths=1, seed=seed, full_grid=True)
    return GridPath(grid, path[:, 0, :])


def sample_reflected_marginals(spec: LimitSpec, P: np.ndarray, times, horizon: float,
                               dt: float, n_paths: int, seed: SeedLike) -> np.ndarray:
    """Marginals of the reflected diffusion at the given times.

    Returns shape (n_paths, len(times), K); times snap to the nearest grid
    point of the dt-discretization.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size and (times.min() < 0 or times.max() > horizon + 1e-12):
        raise ValueError("record times must lie in [0, horizon]")
    _, out = _integrate(spec, P, horizon, dt, n_paths=n_paths, seed=seed, record_times=times)
    return out


def rbm_special_case(params: JacksonParams, drift_at_origin=None) -> LimitSpec:
    """Reflected Brownian motion limit for unit speed functions.

    Requires arrival speeds of one on arrival stations and service speeds of
    one everywhere; then the noise is the constant-covariance Brownian motion
    and the drift is the constant vector a(0).
    """
    K = params.dim
    on = np.array([i in params.arrival_stations for i in range(K)])
    if np.any(params.arrival_speed0[on] != 1.0) or np.any(params.service_speed0 != 1.0):
        raise ValueError("speed functions must be identically one at the origin")
    cov = build_covariance(params)
    if drift_at_origin is None:
        drift = None
    else:
        a0 = np.asarray(drift_at_origin, dtype=float)
        if a0.shape != (K,):
            raise ValueError("drift_at_origin must be a K-vector")

        def drift(X, _a0=a0):
            return np.broadcast_to(_a0, np.shape(X)).copy()

    return LimitSpec(initial=np.zeros(K), drift=drift, noise=cov)
