"""Renewal counting streams and routing draws driving the network equations.

Every source of randomness is a seeded stream: renewal streams produce the
internal-time epochs of the unit counting processes, routing streams consume
one uniform per departure.  Streams generate lazily in blocks, cache their
history, and replay byte-identically for a given seed.

Lognormal gap draws are truncated at exp(mu + 8 sigma); the excised tail mass
is below 1e-15 for the admissible sigma range, which keeps all moments of
interest effectively unchanged while bounding individual gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .paths import GridPath

__all__ = [
    "RenewalSpec",
    "PrimitiveStream",
    "RoutingStream",
    "NonMonotoneQueryError",
    "HistoryExceededError",
    "centered_scaled_counts",
    "centered_scaled_routing",
]

_MEAN_TOL = 1e-12
_LOGNORMAL_SIGMA_MAX = 2.0
_BLOCK_START = 256

SeedLike = Union[int, np.random.SeedSequence]


class NonMonotoneQueryError(ValueError):
    """next_count was queried at a time earlier than a previous query."""


class HistoryExceededError(ValueError):
    """A read-only query went past the realized stream history."""


def _seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


@dataclass(frozen=True)
class RenewalSpec:
    """Gap distribution of a renewal stream, with stated mean and variance.

    The stated moments must match the distribution parameters; use the
    classmethod constructors, which compute them.
    """

    distribution: str
    params: tuple
    mean: float
    variance: float

    def __post_init__(self):
        if self.mean <= 0 or not math.isfinite(self.mean):
            raise ValueError("mean gap must be positive and finite")
        if self.variance < 0 or not math.isfinite(self.variance):
            raise ValueError("gap variance must be finite and >= 0")
        m, v = _moments(self.distribution, self.params)
        if abs(m - self.mean) > _MEAN_TOL * max(1.0, abs(m)):
            raise ValueError(
                f"stated mean {self.mean!r} does not match {self.distribution} parameters ({m!r})")
        if abs(v - self.variance) > _MEAN_TOL * max(1.0, abs(v)):
            raise ValueError(
                f"stated variance {self.variance!r} does not match {self.distribution} "
                f"parameters ({v!r})")

    @classmethod
    def exponential(cls, mean: float = 1.0) -> "RenewalSpec":
        mean = float(mean)
        return cls("exponential", (mean,), mean, mean * mean)

    @classmethod
    def erlang(cls, shape: int, mean: float = 1.0) -> "RenewalSpec":
        shape = int(shape)
        if shape < 1:
            raise ValueError("erlang shape must be >= 1")
        mean = float(mean)
        return cls("erlang", (shape, mean), mean, mean * mean / shape)

    @classmethod
    def uniform(cls, low: float, high: float) -> "RenewalSpec":
        low, high = float(low), float(high)
        if not 0.0 <= low < high:
            raise ValueError("need 0 <= low < high")
        return cls("uniform", (low, high), (low + high) / 2.0, (high - low) ** 2 / 12.0)

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "RenewalSpec":
        mu, sigma = float(mu), float(sigma)
        if not 0.0 < sigma <= _LOGNORMAL_SIGMA_MAX:
            raise ValueError(f"need 0 < sigma <= {_LOGNORMAL_SIGMA_MAX}")
        mean = math.exp(mu + sigma * sigma / 2.0)
        var = (math.exp(sigma * sigma) - 1.0) * math.exp(2.0 * mu + sigma * sigma)
        return cls("lognormal", (mu, sigma), mean, var)

    @classmethod
    def deterministic(cls, gap: float = 1.0) -> "RenewalSpec":
        gap = float(gap)
        if gap <= 0:
            raise ValueError("gap must be positive")
        return cls("deterministic", (gap,), gap, 0.0)

    def normalized(self) -> "RenewalSpec":
        """Same distribution shape rescaled to mean 1."""
        m = self.mean
        d, p = self.distribution, self.params
        if d == "exponential":
            return RenewalSpec.exponential(1.0)
        if d == "erlang":
            return RenewalSpec.erlang(p[0], 1.0)
        if d == "uniform":
            return RenewalSpec.uniform(p[0] / m, p[1] / m)
        if d == "lognormal":
            return RenewalSpec.lognormal(p[0] - math.log(m), p[1])
        if d == "deterministic":
            return RenewalSpec.deterministic(1.0)
        raise ValueError(f"unknown distribution {d!r}")  # pragma: no cover

    def sample_gaps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized gap draws; draws of exactly zero are redrawn."""
        gaps = _draw(self.distribution, self.params, rng, size)
        # a zero gap would stall the counting process clock
        for _ in range(100):
            zero = gaps <= 0.0
            if not zero.any():
                return gaps
            gaps[zero] = _draw(self.distribution, self.params, rng, int(zero.sum()))
        raise RuntimeError("could not draw positive gaps")  # pragma: no cover


def _moments(distribution: str, params: tuple):
    if distribution == "exponential":
        (m,) = params
        return m, m * m
    if distribution == "erlang":
        k, m = params
        return m, m * m / k
    if distribution == "uniform":
        lo, hi = params
        return (lo + hi) / 2.0, (hi - lo) ** 2 / 12.0
    if distribution == "lognormal":
        mu, sigma = params
        return (math.exp(mu + sigma * sigma / 2.0),
                (math.exp(sigma * sigma) - 1.0) * math.exp(2.0 * mu + sigma * sigma))
    if distribution == "deterministic":
        (gap,) = params
        return gap, 0.0
    raise ValueError(f"unknown distribution {distribution!r}")


def _draw(distribution: str, params: tuple, rng: np.random.Generator, size: int) -> np.ndarray:
    if distribution == "exponential":
        return params[0] * rng.standard_exponential(size)
    if distribution == "erlang":
        k, m = params
        return rng.gamma(shape=k, scale=m / k, size=size)
    if distribution == "uniform":
        return rng.uniform(params[0], params[1], size)
    if distribution == "lognormal":
        mu, sigma = params
        draws = rng.lognormal(mean=mu, sigma=sigma, size=size)
        return np.minimum(draws, math.exp(mu + 8.0 * sigma))
    if distribution == "deterministic":
        return np.full(size, params[0])
    raise ValueError(f"unknown distribution {distribution!r}")


class PrimitiveStream:
    """Lazily realized renewal epochs S_1 < S_2 < ... in internal time.

    epoch(k) returns S_k (1-indexed), extending the realization on demand.
    next_count implements the monotone counting-query interface: the number
    of epochs in [0, t], for nondecreasing t.  count_at evaluates counts over
    the already-realized history only.
    """

    def __init__(self, spec: RenewalSpec, seed: SeedLike):
        self.spec = spec
        self._rng = np.random.default_rng(np.random.PCG64(_seed_sequence(seed)))
        self._epochs = np.empty(0)
        self._sums_list: list = []
        self._total = 0.0
        self._block = _BLOCK_START
        self._last_query = -math.inf
        self._count_ptr = 0

    # -- generation ------------------------------------------------------

    def _extend(self, min_len: Optional[int] = None, min_time: Optional[float] = None):
        while ((min_len is not None and len(self._epochs) < min_len)
               or (min_time is not None and self._total <= min_time)):
            gaps = self.spec.sample_gaps(self._rng, self._block)
            sums = self._total + np.cumsum(gaps)
            # tiny gaps can vanish against a large running total; keep the
            # partial sums strictly increasing
            if not np.all(np.diff(np.concatenate(([self._total], sums))) > 0):
                lo = self._total
                for i in range(len(sums)):
                    if sums[i] <= lo:
                        sums[i] = np.nextafter(lo, math.inf)
                    lo = sums[i]
            self._epochs = np.concatenate([self._epochs, sums])
            self._total = float(self._epochs[-1])
            self._block = min(self._block * 2, 1 << 20)

    def epoch(self, k: int) -> float:
        """k-th renewal epoch, 1-indexed."""
        if k < 1:
            raise ValueError("epochs are 1-indexed")
        if k > len(self._epochs):
            self._extend(min_len=k)
        return float(self._epochs[k - 1])

    @property
    def realized_count(self) -> int:
        return len(self._epochs)

    @property
    def realized_time(self) -> float:
        return self._total

    # -- counting queries --------------------------------------------------

    def next_count(self, internal_time: float) -> int:
        """N(internal_time) under the monotone-query contract."""
        if internal_time < self._last_query:
            raise NonMonotoneQueryError(
                f"query at {internal_time!r} precedes previous query at {self._last_query!r}")
        self._last_query = internal_time
        if internal_time < 0:
            return 0
        self._extend(min_time=internal_time)
        ptr = self._count_ptr
        epochs = self._epochs
        while ptr < len(epochs) and epochs[ptr] <= internal_time:
            ptr += 1
        self._count_ptr = ptr
        return ptr

    def count_at(self, internal_times) -> np.ndarray:
        """Counts over realized history only; raises past realized_time."""
        t = np.atleast_1d(np.asarray(internal_times, dtype=float))
        if t.size and t.max() > self._total:
            raise HistoryExceededError(
                f"query at {t.max()!r} exceeds realized history {self._total!r}")
        return np.searchsorted(self._epochs, t, side="right")


class RoutingStream:
    """Routing decisions for departures from one station.

    Each departure consumes a single uniform draw mapped onto consecutive
    intervals of the routing row; the residual interval is an exit from the
    network (destination None).  The full decision history is kept so the
    cumulative routing counts Phi(m) can be evaluated afterwards.
    """

    def __init__(self, probabilities: Sequence[float], seed: SeedLike):
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 1:
            raise ValueError("probabilities must be a vector")
        if np.any(p < 0) or p.sum() > 1.0 + 1e-12:
            raise ValueError("routing row must be substochastic")
        self.probabilities = p
        self._cum = np.cumsum(p)
        self._rng = np.random.default_rng(np.random.PCG64(_seed_sequence(seed)))
        self._history = np.empty(0, dtype=np.int64)
        self._used = 0
        self._counts = np.zeros(len(p), dtype=np.int64)

    @property
    def consumed(self) -> int:
        return self._used

    @property
    def counts(self) -> np.ndarray:
        """Cumulative destination counts Phi(consumed), exits excluded."""
        return self._counts.copy()

    def route_departure(self) -> Optional[int]:
        """Destination station of the next departure, or None on exit."""
        if self._used == len(self._history):
            extra = max(256, len(self._history))
            draws = self._rng.random(extra)
            dests = np.searchsorted(self._cum, draws, side="right")
            dests[dests == len(self.probabilities)] = -1  # exit
            self._history = np.concatenate([self._history, dests])
        d = int(self._history[self._used])
        self._used += 1
        if d >= 0:
            self._counts[d] += 1
            return d
        return None

    def phi_at(self, m) -> np.ndarray:
        """Phi(m): destination counts among the first m decisions.

        Accepts a scalar or array of decision counts; counts beyond the
        consumed history raise.  Returns shape (K,) or (len(m), K).
        """
        m_arr = np.atleast_1d(np.asarray(m, dtype=np.int64))
        if m_arr.size and (m_arr.min() < 0 or m_arr.max() > self._used):
            raise HistoryExceededError("phi_at query beyond consumed decisions")
        K = len(self.probabilities)
        used = self._history[: self._used]
        onehot = np.zeros((self._used + 1, K), dtype=np.int64)
        live = used >= 0
        onehot[1:][live, used[live]] = 1
        prefix = np.cumsum(onehot, axis=0)
        out = prefix[m_arr]
        return out[0] if np.isscalar(m) or np.ndim(m) == 0 else out


# ---------------------------------------------------------------------------
# centered and diffusion-scaled primitive paths


def centered_scaled_counts(stream: PrimitiveStream, n: float, horizon: float,
                           num_points: int = 512) -> GridPath:
    """(N(n t) - n t) / sqrt(n) on a uniform grid over [0, horizon].

    The stream must have been realized past internal time n * horizon.
    """
    if n <= 0 or horizon <= 0:
        raise ValueError("n and horizon must be positive")
    grid = np.linspace(0.0, horizon, num_points + 1)
    counts = stream.count_at(n * grid)
    values = (counts - n * grid) / math.sqrt(n)
    return GridPath(grid, values)


def centered_scaled_routing(stream: RoutingStream, n: float, horizon: float,
                            num_points: int = 512) -> GridPath:
    """(Phi(floor(n t)) - p * n t) / sqrt(n) on a uniform grid over [0, horizon]."""
    if n <= 0 or horizon <= 0:
        raise ValueError("n and horizon must be positive")
    grid = np.linspace(0.0, horizon, num_points + 1)
    m = np.floor(n * grid).astype(np.int64)
    phi = stream.phi_at(m)
    values = (phi - np.outer(n * grid, stream.probabilities)) / math.sqrt(n)
    return GridPath(grid, values)
