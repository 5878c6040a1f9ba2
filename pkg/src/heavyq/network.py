"""Open network topology, state-dependent rate functions, and scaling families.

A network has K single-server stations, a substochastic routing matrix P
(row i: probabilities of moving from station i to station j, residual mass
exits), and a subset of stations receiving external arrivals.  The reflection
matrix R = I - P^T drives both the pathwise dynamics and the limit object.

Rate functions map the queue-length vector x in R_+^K to a nonnegative rate
and carry a linear-growth certificate: rate(x) <= H * (1 + |x|).

A scaling family packages first-order intensities (lambda1, mu1), which must
balance (lambda1 = R mu1), together with second-order perturbations
(lambda2, mu2) that produce the limit drift a(x) = lambda2(x) - R mu2(x).
The n-th system's rates follow the expansion
    rate_n(x) = n * base(x/n) + sqrt(n) * perturbation(x/sqrt(n)).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ModelConditionError",
    "ConditionViolation",
    "RateFunction",
    "ConstantRate",
    "AffineRate",
    "TabulatedRate",
    "NetworkTopology",
    "build_reflection_matrix",
    "spectral_radius",
    "ScalingFamily",
    "ScaledRate",
    "effective_rates",
    "DriftFunction",
    "drift_function",
    "validate_family",
    "validation_grid",
    "estimate_lipschitz",
]

SUBSTOCHASTIC_TOL = 1e-12
SPECTRAL_GAP = 1e-6
BALANCE_TOL = 1e-9
GROWTH_TOL = 1e-12


class ModelConditionError(ValueError):
    """A model assumption failed.  `condition` carries the label."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


@dataclass(frozen=True)
class ConditionViolation:
    condition: str
    message: str


# ---------------------------------------------------------------------------
# rate functions


class RateFunction:
    """Nonnegative rate as a function of the queue-length vector.

    Subclasses set `kind`, `is_constant`, and a linear-growth certificate
    `growth_bound` H with rate(x) <= H * (1 + |x|) on the orthant.
    __call__ takes a sequence of K floats; eval_grid takes an (m, K) array.
    """

    kind: str = "abstract"
    is_constant: bool = False
    growth_bound: float = math.inf

    def __call__(self, x: Sequence[float]) -> float:  # pragma: no cover
        raise NotImplementedError

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self(row) for row in X])


class ConstantRate(RateFunction):
    kind = "constant"
    is_constant = True

    def __init__(self, value: float, growth_bound: Optional[float] = None):
        value = float(value)
        if value < 0 or not math.isfinite(value):
            raise ValueError("constant rate must be finite and >= 0")
        self.value = value
        self.growth_bound = float(growth_bound) if growth_bound is not None else value

    def __call__(self, x) -> float:
        return self.value

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], self.value)

    def __repr__(self):
        return f"ConstantRate({self.value!r})"


class AffineRate(RateFunction):
    """rate(x) = min(max(0, intercept + slopes . x), cap)."""

    kind = "affine"

    def __init__(
        self,
        intercept: float,
        slopes: Sequence[float],
        cap: float = math.inf,
        growth_bound: Optional[float] = None,
    ):
        self.intercept = float(intercept)
        self.slopes = tuple(float(s) for s in slopes)
        if cap < 0:
            raise ValueError("cap must be >= 0")
        self.cap = float(cap)
        if not math.isfinite(self.intercept) or not all(map(math.isfinite, self.slopes)):
            raise ValueError("affine coefficients must be finite")
        self.is_constant = all(s == 0.0 for s in self.slopes)
        auto = max(abs(self.intercept), math.sqrt(sum(s * s for s in self.slopes)))
        auto = min(auto, self.cap) if math.isfinite(self.cap) else auto
        self.growth_bound = float(growth_bound) if growth_bound is not None else auto
        self._slopes_arr = np.array(self.slopes)

    def __call__(self, x) -> float:
        if len(x) != len(self.slopes):
            raise ValueError("state dimension does not match slope count")
        v = self.intercept
        for s, xi in zip(self.slopes, x):
            v += s * xi
        if v < 0.0:
            return 0.0
        return v if v <= self.cap else self.cap

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = self.intercept + X @ self._slopes_arr
        return np.clip(v, 0.0, self.cap)

    def __repr__(self):
        return f"AffineRate({self.intercept!r}, {self.slopes!r}, cap={self.cap!r})"


class TabulatedRate(RateFunction):
    """Piecewise-linear table in one queue coordinate, linear tail beyond it.

    Knots must start at 0 and strictly increase; values are nonnegative.
    Beyond the last knot the rate continues with slope `tail_slope` >= 0.
    """

    kind = "tabulated"

    def __init__(
        self,
        coord: int,
        knots: Sequence[float],
        values: Sequence[float],
        tail_slope: float = 0.0,
        growth_bound: Optional[float] = None,
    ):
        self.coord = int(coord)
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.tail_slope = float(tail_slope)
        if self.coord < 0:
            raise ValueError("coord must be a station index")
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape or len(self.knots) < 1:
            raise ValueError("knots and values must be equal-length 1-d arrays")
        if self.knots[0] != 0.0 or not np.all(np.diff(self.knots) > 0):
            raise ValueError("knots must start at 0 and strictly increase")
        if np.any(self.values < 0) or self.tail_slope < 0:
            raise ValueError("tabulated values and tail slope must be >= 0")
        self.is_constant = bool(np.all(self.values == self.values[0]) and self.tail_slope == 0.0)
        auto = max(float(self.values.max()), self.tail_slope)
        self.growth_bound = float(growth_bound) if growth_bound is not None else auto
        self._knots_list = self.knots.tolist()
        self._values_list = self.values.tolist()

    def __call__(self, x) -> float:
        z = x[self.coord]
        kn, va = self._knots_list, self._values_list
        last = len(kn) - 1
        if z >= kn[last]:
            return va[last] + self.tail_slope * (z - kn[last])
        j = bisect_right(kn, z) - 1
        if j < 0:
            return va[0]
        w = (z - kn[j]) / (kn[j + 1] - kn[j])
        return va[j] + w * (va[j + 1] - va[j])

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = X[:, self.coord]
        out = np.interp(z, self.knots, self.values)
        return out + self.tail_slope * np.maximum(0.0, z - self.knots[-1])

    def __repr__(self):
        return (
            f"TabulatedRate({self.coord}, {self.knots.tolist()}, "
            f"{self.values.tolist()}, tail_slope={self.tail_slope})"
        )


# ---------------------------------------------------------------------------
# topology


def spectral_radius(P: np.ndarray) -> float:
    """Spectral radius of a square nonnegative matrix, to LAPACK accuracy."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("P must be square")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise ValueError("P must be nonnegative and finite")
    if P.shape[0] == 0:
        return 0.0
    try:
        eig = np.linalg.eigvals(P)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ModelConditionError("(A1)", f"spectral radius computation failed: {exc}")
    return float(np.abs(eig).max())


def _check_substochastic(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ModelConditionError("substochasticity", "routing matrix must be square")
    if not np.all(np.isfinite(P)):
        raise ModelConditionError("substochasticity", "routing matrix must be finite")
    if np.any(P < 0):
        raise ModelConditionError("substochasticity", "routing probabilities must be >= 0")
    sums = P.sum(axis=1)
    bad = np.nonzero(sums > 1.0 + SUBSTOCHASTIC_TOL)[0]
    if bad.size:
        raise ModelConditionError(
            "substochasticity", f"row {bad[0]} sums to {sums[bad[0]]:.17g} > 1"
        )
    return P


def build_reflection_matrix(P: np.ndarray) -> np.ndarray:
    """R = I - P^T for substochastic P with spectral radius below 1."""
    P = _check_substochastic(P)
    rho = spectral_radius(P)
    if rho > 1.0 - SPECTRAL_GAP:
        raise ModelConditionError("(A1)", f"spectral radius {rho:.17g} exceeds 1 - {SPECTRAL_GAP}")
    return np.eye(P.shape[0]) - P.T


@dataclass(frozen=True)
class NetworkTopology:
    """Station count, routing matrix, and the set of external-arrival stations."""

    routing: np.ndarray
    arrival_stations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = _check_substochastic(self.routing)
        object.__setattr__(self, "routing", P)
        object.__setattr__(self, "arrival_stations", frozenset(int(i) for i in self.arrival_stations))
        K = P.shape[0]
        if any(i < 0 or i >= K for i in self.arrival_stations):
            raise ValueError("arrival station index out of range")
        object.__setattr__(self, "reflection", build_reflection_matrix(P))

    @property
    def size(self) -> int:
        return self.routing.shape[0]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.routing)


# ---------------------------------------------------------------------------
# scaling families and effective rates


def _as_rate_tuple(rates, K: int, name: str):
    rates = tuple(rates)
    if len(rates) != K:
        raise ValueError(f"{name} must have one rate function per station")
    for r in rates:
        if not isinstance(r, RateFunction):
            raise TypeError(f"{name} entries must be RateFunction instances")
    return rates


@dataclass(frozen=True)
class ScalingFamily:
    """First-order intensities and second-order perturbations, per station.

    arrival_base/service_base are lambda1/mu1; the perturbations are
    lambda2/mu2 and may be omitted (treated as identically zero).
    """

    arrival_base: tuple
    service_base: tuple
    arrival_perturbation: Optional[tuple] = None
    service_perturbation: Optional[tuple] = None

    def __post_init__(self):
        K = len(self.service_base)
        zero = tuple(ConstantRate(0.0) for _ in range(K))
        object.__setattr__(self, "arrival_base", _as_rate_tuple(self.arrival_base, K, "arrival_base"))
        object.__setattr__(self, "service_base", _as_rate_tuple(self.service_base, K, "service_base"))
        ap = self.arrival_perturbation if self.arrival_perturbation is not None else zero
        sp = self.service_perturbation if self.service_perturbation is not None else zero
        object.__setattr__(self, "arrival_perturbation", _as_rate_tuple(ap, K, "arrival_perturbation"))
        object.__setattr__(self, "service_perturbation", _as_rate_tuple(sp, K, "service_perturbation"))

    @property
    def size(self) -> int:
        return len(self.service_base)


class ScaledRate:
    """Rate of the n-th system for one station.

    rate-absorbed convention:  n * base(x/n) + sqrt(n) * pert(x/sqrt(n))
    conventional convention:   scale * [ base(x/n) + pert(x/sqrt(n)) / sqrt(n) ]

    `scale` rescales intensity into the time-change speed of a renewal
    stream whose gaps already carry the physical mean.
    """

    __slots__ = ("base", "pert", "n", "sqrt_n", "convention", "scale", "constant_value")

    def __init__(self, base: RateFunction, pert: RateFunction, n: float,
                 convention: str = "rate-absorbed", scale: float = 1.0):
        if convention not in ("rate-absorbed", "conventional"):
            raise ValueError(f"unknown convention {convention!r}")
        if n <= 0:
            raise ValueError("n must be positive")
        self.base = base
        self.pert = pert
        self.n = float(n)
        self.sqrt_n = math.sqrt(float(n))
        self.convention = convention
        self.scale = float(scale)
        if base.is_constant and pert.is_constant:
            zeros = (0.0,)
            self.constant_value = self._combine(base(zeros), pert(zeros))
        else:
            self.constant_value = None

    def _combine(self, b: float, p: float) -> float:
        if self.convention == "rate-absorbed":
            return self.scale * (self.n * b + self.sqrt_n * p)
        return self.scale * (b + p / self.sqrt_n)

    def __call__(self, x) -> float:
        if self.constant_value is not None:
            return self.constant_value
        n, rn = self.n, self.sqrt_n
        b = self.base([xi / n for xi in x])
        p = self.pert([xi / rn for xi in x])
        return self._combine(b, p)

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        b = self.base.eval_grid(X / self.n)
        p = self.pert.eval_grid(X / self.sqrt_n)
        if self.convention == "rate-absorbed":
            return self.scale * (self.n * b + self.sqrt_n * p)
        return self.scale * (b + p / self.sqrt_n)


def effective_rates(family: ScalingFamily, n: float, convention: str = "rate-absorbed",
                    arrival_scale=None, service_scale=None):
    """Per-station rate callables of the n-th system, (arrivals, services)."""
    K = family.size
    a_scale = np.ones(K) if arrival_scale is None else np.asarray(arrival_scale, dtype=float)
    s_scale = np.ones(K) if service_scale is None else np.asarray(service_scale, dtype=float)
    lam = [
        ScaledRate(family.arrival_base[i], family.arrival_perturbation[i], n, convention, a_scale[i])
        for i in range(K)
    ]
    mu = [
        ScaledRate(family.service_base[i], family.service_perturbation[i], n, convention, s_scale[i])
        for i in range(K)
    ]
    return lam, mu


# ---------------------------------------------------------------------------
# validation grid, drift, and condition checks


def validation_grid(K: int, radius: float = 10.0, points_per_axis: int = 11,
                    max_grid_dim: int = 4, seed: int = 0) -> np.ndarray:
    """Probe points in the orthant ball |x| <= radius.

    Full lattice (points_per_axis per coordinate, filtered to the ball) up to
    max_grid_dim dimensions; beyond that, the same point budget sampled
    uniformly from the orthant ball.
    """
    if K <= max_grid_dim:
        axis = np.linspace(0.0, radius, points_per_axis)
        mesh = np.meshgrid(*([axis] * K), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        keep = np.linalg.norm(pts, axis=1) <= radius + 1e-12
        return pts[keep]
    rng = np.random.default_rng(seed)
    m = points_per_axis ** max_grid_dim
    # uniform direction in the positive orthant, radius by the usual r^(1/K) law
    raw = np.abs(rng.standard_normal((m, K)))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    r = radius * rng.random(m) ** (1.0 / K)
    pts = raw * r[:, None]
    pts[0] = 0.0
    return pts


def _eval_vector(rates, X: np.ndarray) -> np.ndarray:
    return np.stack([r.eval_grid(X) for r in rates], axis=1)


def estimate_lipschitz(f, grid: np.ndarray, max_pairs: int = 20000, seed: int = 1) -> float:
    """Largest |f(x)-f(y)| / |x-y| over sampled grid pairs.  f maps (m,K)->(m,K')."""
    grid = np.atleast_2d(grid)
    m = grid.shape[0]
    if m < 2:
        return 0.0
    vals = np.atleast_2d(f(grid))
    rng = np.random.default_rng(seed)
    n_pairs = min(max_pairs, m * (m - 1) // 2)
    i = rng.integers(0, m, size=n_pairs)
    j = rng.integers(0, m, size=n_pairs)
    # always include consecutive pairs, which pick up local slopes
    i = np.concatenate([i, np.arange(m - 1)])
    j = np.concatenate([j, np.arange(1, m)])
    keep = i != j
    i, j = i[keep], j[keep]
    dx = np.linalg.norm(grid[i] - grid[j], axis=1)
    df = np.linalg.norm(vals[i] - vals[j], axis=1)
    ok = dx > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(df[ok] / dx[ok]))


@dataclass(frozen=True)
class DriftFunction:
    """Limit drift a(x) = lambda2(x) - R mu2(x)."""

    arrival_perturbation: tuple
    service_perturbation: tuple
    reflection: np.ndarray

    def __call__(self, x) -> np.ndarray:
        lam2 = np.array([r(x) for r in self.arrival_perturbation])
        mu2 = np.array([r(x) for r in self.service_perturbation])
        return lam2 - self.reflection @ mu2

    def eval_grid(self, X: np.ndarray) -> np.ndarray:
        lam2 = _eval_vector(self.arrival_perturbation, X)
        mu2 = _eval_vector(self.service_perturbation, X)
        return lam2 - mu2 @ self.reflection.T


def _balance_error(family: ScalingFamily, topology: NetworkTopology, grid: np.ndarray) -> float:
    lam1 = _eval_vector(family.arrival_base, grid)
    mu1 = _eval_vector(family.service_base, grid)
    return float(np.max(np.abs(lam1 - mu1 @ topology.reflection.T)))


def drift_function(family: ScalingFamily, topology: NetworkTopology,
                   grid: Optional[np.ndarray] = None, tol: float = BALANCE_TOL) -> DriftFunction:
    """Build the limit drift after checking first-order balance on the grid."""
    if family.size != topology.size:
        raise ValueError("family and topology disagree on station count")
    if grid is None:
        grid = validation_grid(topology.size)
    err = _balance_error(family, topology, grid)
    if err > tol:
        raise ModelConditionError(
            "(A3)", f"first-order balance violated: max |lambda1 - R mu1| = {err:.17g}"
        )
    return DriftFunction(family.arrival_perturbation, family.service_perturbation,
                         topology.reflection)


def validate_family(family: ScalingFamily, topology: NetworkTopology,
                    grid: Optional[np.ndarray] = None,
                    declared_lipschitz: Optional[float] = None) -> list:
    """All model-condition checks; returns ConditionViolation list (empty if clean)."""
    violations = []
    if family.size != topology.size:
        return [ConditionViolation("model", "family and topology disagree on station count")]
    if grid is None:
        grid = validation_grid(topology.size)
    norms = 1.0 + np.linalg.norm(np.atleast_2d(grid), axis=1)

    # arrivals only where the topology says so
    for i in range(family.size):
        if i not in topology.arrival_stations:
            lam1 = family.arrival_base[i].eval_grid(grid)
            lam2 = family.arrival_perturbation[i].eval_grid(grid)
            if np.any(lam1 != 0.0) or np.any(lam2 != 0.0):
                violations.append(ConditionViolation(
                    "model",
                    f"station {i + 1} has no external arrivals but nonzero arrival intensity"))
                break

    # (A2): each rate honors its linear-growth certificate on the grid
    groups = [family.arrival_base, family.arrival_perturbation,
              family.service_base, family.service_perturbation]
    names = ["lambda1", "lambda2", "mu1", "mu2"]
    for rates, name in zip(groups, names):
        for i, r in enumerate(rates):
            vals = r.eval_grid(grid)
            excess = np.max(vals - r.growth_bound * norms)
            if excess > GROWTH_TOL:
                violations.append(ConditionViolation(
                    "(A2)", f"{name}[{i}] exceeds its growth bound by {excess:.3g} on the grid"))

    # (A3): first-order balance
    err = _balance_error(family, topology, grid)
    if err > BALANCE_TOL:
        violations.append(ConditionViolation(
            "(A3)", f"first-order balance violated: max |lambda1 - R mu1| = {err:.17g}"))

    # (A4): drift Lipschitz estimate, optionally against a declared bound
    drift = DriftFunction(family.arrival_perturbation, family.service_perturbation,
                          topology.reflection)
    lip = estimate_lipschitz(drift.eval_grid, grid)
    if not math.isfinite(lip):
        violations.append(ConditionViolation("(A4)", "drift Lipschitz estimate is not finite"))
    elif declared_lipschitz is not None and lip > declared_lipschitz * (1 + 1e-9):
        violations.append(ConditionViolation(
            "(A4)", f"estimated drift Lipschitz constant {lip:.6g} exceeds declared "
                    f"bound {declared_lipschitz:.6g}"))
    return violations
