"""Event-driven simulation of state-dependent open queueing networks.

The network equations drive everything: external arrivals at station i are
the renewal count N_i^A evaluated at the integrated arrival rate, departures
are N_i^D evaluated at the integrated service rate (the integrand carries the
indicator {Q_i > 0}, so the service clock freezes at an empty station), and
each departure consumes one routing draw.  Between events the queue vector is
constant, so the integrated rates are exact piecewise-linear functions of
time; the engine tracks them as per-station internal clocks.

Two constructions of the same system:

* simulate_direct steps physical time from event to event;
* simulate_uniformized normalizes all rates by
  theta(x) = 1 + sum_i (arrival_i(x) + service_i(x)), runs the event loop in
  normalized time where every rate is below one, and maps each jump back to
  physical time through the piecewise-linear time change.

Both consume identical primitive streams, so they agree in law; they are kept
as independent code paths for cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import NetworkTopology
from .paths import GridPath, uniform_grid, DEFAULT_POINTS_PER_UNIT
from .primitives import PrimitiveStream, RenewalSpec, RoutingStream, SeedLike, _seed_sequence

__all__ = [
    "SimConfig",
    "Trajectory",
    "TraceDecomposition",
    "ExplosionError",
    "simulate_direct",
    "simulate_uniformized",
    "decompose_trace",
    "scaled_queue_path",
    "EVENT_ARRIVAL",
    "EVENT_DEPARTURE_ROUTED",
    "EVENT_DEPARTURE_EXIT",
    "EVENT_NAMES",
]

EVENT_ARRIVAL = 0
EVENT_DEPARTURE_ROUTED = 1
EVENT_DEPARTURE_EXIT = 2
EVENT_NAMES = {
    EVENT_ARRIVAL: "ARRIVAL",
    EVENT_DEPARTURE_ROUTED: "DEPARTURE_ROUTED",
    EVENT_DEPARTURE_EXIT: "DEPARTURE_EXIT",
}

DEFAULT_MAX_EVENTS = 100_000_000


class ExplosionError(RuntimeError):
    """Event budget exhausted before the horizon; carries the partial trace."""

    def __init__(self, message: str, partial: "Trajectory"):
        super().__init__(message)
        self.partial = partial


@dataclass
class SimConfig:
    """Everything one replication needs.

    arrival_rates/service_rates are per-station callables of the queue-length
    vector (ScaledRate or RateFunction instances work).  Stations outside the
    topology's arrival set never generate external arrivals; their entries in
    arrival_rates/arrival_specs are ignored.
    """

    topology: NetworkTopology
    arrival_rates: Sequence
    service_rates: Sequence
    arrival_specs: Sequence[Optional[RenewalSpec]]
    service_specs: Sequence[RenewalSpec]
    initial_queue: Sequence[int]
    horizon: float
    seed: SeedLike = 0
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        K = self.topology.size
        if not (len(self.arrival_rates) == len(self.service_rates) == K
                and len(self.arrival_specs) == len(self.service_specs) == K):
            raise ValueError("rate and spec sequences must have one entry per station")
        q0 = np.asarray(self.initial_queue, dtype=np.int64)
        if q0.shape != (K,) or np.any(q0 < 0):
            raise ValueError("initial queue must be K nonnegative integers")
        self.initial_queue = q0
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.max_events < 1:
            raise ValueError("max_events must be positive")
        for i in sorted(self.topology.arrival_stations):
            if self.arrival_specs[i] is None:
                raise ValueError(f"station {i} receives arrivals but has no gap distribution")


@dataclass
class Trajectory:
    """Piecewise-constant sample path with exact event-time bookkeeping.

    Row 0 is the initial state at time 0; a trailing row at the horizon closes
    the last inter-event interval.  event_kind is -1 on those non-event rows.
    arrival_clocks/service_clocks hold the integrated rates (the internal
    times fed to the counting processes); regulator holds
    Y_i = integral of service_rate_i(Q) over {Q_i = 0}.
    """

    times: np.ndarray
    queues: np.ndarray
    arrivals: np.ndarray
    internal: np.ndarray
    departures: np.ndarray
    regulator: np.ndarray
    arrival_clocks: np.ndarray
    service_clocks: np.ndarray
    event_station: np.ndarray
    event_kind: np.ndarray
    horizon: float
    routing_history: list = field(repr=False)

    @property
    def size(self) -> int:
        return self.queues.shape[1]

    @property
    def event_count(self) -> int:
        return int(np.sum(self.event_kind >= 0))

    def row_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if t.size and (t.min() < 0 or t.max() > self.horizon + 1e-9):
            raise ValueError("time outside [0, horizon]")
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, len(self.times) - 1)

    def queue_at(self, times) -> np.ndarray:
        """Queue-length vectors at the given times (cadlag step evaluation)."""
        return self.queues[self.row_at(times)]

    def write_event_csv(self, fileobj):
        """One CSV row per event: time, station, event type, queue vector.

        Stations are 1-based in the file, matching the harness outputs.
        """
        K = self.size
        header = "time,station,event_type," + ",".join(f"queue_{i + 1}" for i in range(K))
        fileobj.write(header + "\n")
        for r in range(len(self.times)):
            kind = int(self.event_kind[r])
            if kind < 0:
                continue
            q = ",".join(str(int(v)) for v in self.queues[r])
            fileobj.write(
                f"{self.times[r]:.17g},{int(self.event_station[r]) + 1},{EVENT_NAMES[kind]},{q}\n")


def simulate_direct(config: SimConfig) -> Trajectory:
    """Run the event loop in physical time."""
    return _run_event_loop(config, uniformized=False)


def simulate_uniformized(config: SimConfig) -> Trajectory:
    """Run the normalized-rate event loop and map jumps back to physical time."""
    return _run_event_loop(config, uniformized=True)


def _run_event_loop(config: SimConfig, uniformized: bool) -> Trajectory:
    topo = config.topology
    K = topo.size
    horizon = float(config.horizon)
    arrival_set = sorted(topo.arrival_stations)
    lam_fns = list(config.arrival_rates)
    mu_fns = list(config.service_rates)

    # one child seed per primitive, stable order: arrivals, services, routing
    root = _seed_sequence(config.seed)
    arr_seeds, svc_seeds, route_seeds = (s.spawn(K) for s in root.spawn(3))
    arr_streams = {i: PrimitiveStream(config.arrival_specs[i], arr_seeds[i]) for i in arrival_set}
    svc_streams = [PrimitiveStream(config.service_specs[i], svc_seeds[i]) for i in range(K)]
    route_streams = [RoutingStream(topo.routing[i], route_seeds[i]) for i in range(K)]

    q = [int(v) for v in config.initial_queue]
    inf = math.inf

    # per-station event machinery; arrival entries stay inert off the arrival set
    clock_a = [0.0] * K
    clock_d = [0.0] * K
    next_a = [arr_streams[i].epoch(1) if i in arr_streams else inf for i in range(K)]
    next_d = [svc_streams[i].epoch(1) for i in range(K)]
    count_a = [0] * K
    count_b = [0] * K
    count_d = [0] * K
    y = [0.0] * K

    all_const = all(getattr(f, "constant_value", None) is not None
                    for f in lam_fns + mu_fns)

    def rate_of(fn):
        c = getattr(fn, "constant_value", None)
        return c if c is not None else fn(q)

    lam = [rate_of(lam_fns[i]) if i in arr_streams else 0.0 for i in range(K)]
    mu = [rate_of(mu_fns[i]) for i in range(K)]

    # recorded rows
    rec_t = [0.0]
    rec_station = [-1]
    rec_kind = [-1]
    rec_q = [[v] for v in q]
    rec_a = [[0] for _ in range(K)]
    rec_b = [[0] for _ in range(K)]
    rec_d = [[0] for _ in range(K)]
    rec_y = [[0.0] for _ in range(K)]
    rec_ca = [[0.0] for _ in range(K)]
    rec_cd = [[0.0] for _ in range(K)]

    def record(station: int, kind: int, t: float):
        rec_t.append(t)
        rec_station.append(station)
        rec_kind.append(kind)
        for i in range(K):
            rec_q[i].append(q[i])
            rec_a[i].append(count_a[i])
            rec_b[i].append(count_b[i])
            rec_d[i].append(count_d[i])
            rec_y[i].append(y[i])
            rec_ca[i].append(clock_a[i])
            rec_cd[i].append(clock_d[i])

    def advance(dt: float):
        # dt is physical elapsed time within one constant-rate interval
        for i in range(K):
            li = lam[i]
            if li > 0.0:
                clock_a[i] += li * dt
            mi = mu[i]
            if mi > 0.0:
                if q[i] > 0:
                    clock_d[i] += mi * dt
                else:
                    y[i] += mi * dt

    def build(t_end: float) -> Trajectory:
        if rec_t[-1] < t_end:
            record(-1, -1, t_end)
        return Trajectory(
            times=np.array(rec_t),
            queues=np.array(rec_q, dtype=np.int64).T,
            arrivals=np.array(rec_a, dtype=np.int64).T,
            internal=np.array(rec_b, dtype=np.int64).T,
            departures=np.array(rec_d, dtype=np.int64).T,
            regulator=np.array(rec_y).T,
            arrival_clocks=np.array(rec_ca).T,
            service_clocks=np.array(rec_cd).T,
            event_station=np.array(rec_station, dtype=np.int64),
            event_kind=np.array(rec_kind, dtype=np.int64),
            horizon=t_end,
            routing_history=[rs._history[: rs._used].copy() for rs in route_streams],
        )

    t = 0.0
    events = 0
    max_events = config.max_events
    while True:
        theta = 1.0
        if uniformized:
            for i in range(K):
                theta += lam[i] + mu[i]
        # next event: departures first, then arrivals, ascending station index,
        # strict comparison keeps that order on exact ties; in uniformized mode
        # the waits are in normalized time (rates divided by theta)
        best = inf
        best_i = -1
        best_dep = False
        for i in range(K):
            mi = mu[i]
            if q[i] > 0 and mi > 0.0:
                if uniformized:
                    mi /= theta
                w = (next_d[i] - clock_d[i]) / mi
                if w < best:
                    best, best_i, best_dep = w, i, True
        for i in arrival_set:
            li = lam[i]
            if li > 0.0:
                if uniformized:
                    li /= theta
                w = (next_a[i] - clock_a[i]) / li
                if w < best:
                    best, best_i, best_dep = w, i, False

        # physical elapsed time: one unit of normalized time lasts 1/theta
        dt = best / theta if uniformized else best

        if best_i < 0 or t + dt > horizon:
            advance(horizon - t)
            return build(horizon)

        advance(dt)
        t += dt
        events += 1
        if events > max_events:
            raise ExplosionError(
                f"exceeded {max_events} events at time {t:.6g} (horizon {horizon:.6g})",
                build(t))

        if best_dep:
            i = best_i
            clock_d[i] = next_d[i]  # snap the triggering clock onto its epoch
            count_d[i] += 1
            next_d[i] = svc_streams[i].epoch(count_d[i] + 1)
            q[i] -= 1
            dest = route_streams[i].route_departure()
            if dest is None:
                record(i, EVENT_DEPARTURE_EXIT, t)
            else:
                q[dest] += 1
                count_b[dest] += 1
                record(i, EVENT_DEPARTURE_ROUTED, t)
        else:
            i = best_i
            clock_a[i] = next_a[i]
            count_a[i] += 1
            next_a[i] = arr_streams[i].epoch(count_a[i] + 1)
            q[i] += 1
            record(i, EVENT_ARRIVAL, t)

        if not all_const:
            for i in range(K):
                lam[i] = rate_of(lam_fns[i]) if i in arr_streams else 0.0
                mu[i] = rate_of(mu_fns[i])


# ---------------------------------------------------------------------------
# centered decomposition and scaling


@dataclass(frozen=True)
class TraceDecomposition:
    """Centered components of one trajectory on a common grid.

    queue == queue(0) + drift_integral + m_total + regulator @ R^T, exactly,
    where m_total = m_arrival + m_internal - m_service.
    """

    queue: GridPath
    m_arrival: GridPath
    m_internal: GridPath
    m_service: GridPath
    m_total: GridPath
    regulator: GridPath
    drift_integral: GridPath

    def reconstructed_queue(self, reflection: np.ndarray) -> GridPath:
        values = (self.queue.values[0]
                  + self.drift_integral.values
                  + self.m_total.values
                  + self.regulator.values @ reflection.T)
        return GridPath(self.queue.grid, values)


def _prefix_counts(history: np.ndarray, K: int) -> np.ndarray:
    onehot = np.zeros((len(history) + 1, K), dtype=np.int64)
    live = history >= 0
    onehot[1:][live, history[live]] = 1
    return np.cumsum(onehot, axis=0)


def decompose_trace(traj: Trajectory, arrival_rates, service_rates,
                    topology: NetworkTopology, num_points: Optional[int] = None,
                    grid: str = "uniform") -> TraceDecomposition:
    """Centered primitives, regulator, and drift integral along a trajectory.

    grid="uniform" evaluates on a uniform grid (num_points + 1 points,
    default resolution 1024 per unit time); grid="events" evaluates at the
    recorded event times, where every component is exact.
    """
    K = traj.size
    if topology.size != K:
        raise ValueError("topology does not match trajectory dimension")
    if grid == "events":
        g = traj.times.copy()
    elif grid == "uniform":
        if num_points is None:
            g = uniform_grid(traj.horizon)
        else:
            g = np.linspace(0.0, traj.horizon, num_points + 1)
    else:
        raise ValueError("grid must be 'uniform' or 'events'")

    idx = traj.row_at(g)
    dt = g - traj.times[idx]

    # slopes of the piecewise-linear compensators on each inter-event interval
    Q = traj.queues.astype(float)
    lam_slope = np.zeros((len(traj.times), K))
    for i in sorted(topology.arrival_stations):
        lam_slope[:, i] = arrival_rates[i].eval_grid(Q)
    mu_slope = np.stack([service_rates[i].eval_grid(Q) for i in range(K)], axis=1)
    busy = traj.queues > 0

    tau_a = traj.arrival_clocks[idx] + lam_slope[idx] * dt[:, None]
    tau_d = traj.service_clocks[idx] + np.where(busy[idx], mu_slope[idx], 0.0) * dt[:, None]
    y = traj.regulator[idx] + np.where(busy[idx], 0.0, mu_slope[idx]) * dt[:, None]

    A = traj.arrivals[idx].astype(float)
    D = traj.departures[idx].astype(float)
    q_path = traj.queues[idx].astype(float)

    m_arrival = A - tau_a

    P = topology.routing
    phi = np.zeros((len(g), K, K))  # phi[t, j, i]: arrivals at i among D_j(t) departures
    for j in range(K):
        prefix = _prefix_counts(traj.routing_history[j], K)
        phi[:, j, :] = prefix[traj.departures[idx][:, j]]
    m_internal = phi.sum(axis=1) - D @ P  # sum_j [Phi_ji(D_j) - p_ji D_j]

    centered_d = D - tau_d
    m_service = centered_d - centered_d @ P  # own term minus routed feedback

    m_total = m_arrival + m_internal - m_service

    # integral of the effective drift: tau_a - R (tau_d + y) componentwise
    drift_int = tau_a - (tau_d + y) @ topology.reflection.T

    return TraceDecomposition(
        queue=GridPath(g, q_path),
        m_arrival=GridPath(g, m_arrival),
        m_internal=GridPath(g, m_internal),
        m_service=GridPath(g, m_service),
        m_total=GridPath(g, m_total),
        regulator=GridPath(g, y),
        drift_integral=GridPath(g, drift_int),
    )


def scaled_queue_path(traj: Trajectory, n: float, convention: str = "rate-absorbed",
                      num_points: Optional[int] = None) -> GridPath:
    """Diffusion-scaled queue path.

    rate-absorbed: X(t) = Q(t) / sqrt(n) on [0, horizon].
    conventional:  X(t) = Q(n t) / sqrt(n) on [0, horizon / n].
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rn = math.sqrt(n)
    if convention == "rate-absorbed":
        span = traj.horizon
        g = uniform_grid(span) if num_points is None else np.linspace(0.0, span, num_points + 1)
        return GridPath(g, traj.queue_at(g) / rn)
    if convention == "conventional":
        span = traj.horizon / n
        g = uniform_grid(span, points_per_unit=DEFAULT_POINTS_PER_UNIT) if num_points is None \
            else np.linspace(0.0, span, num_points + 1)
        return GridPath(g, traj.queue_at(n * g) / rn)
    raise ValueError("convention must be 'rate-absorbed' or 'conventional'")
