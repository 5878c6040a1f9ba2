"""Convergence experiments: config files, scaling sweeps, and reports.

A JSON config describes one heavy-traffic experiment: the topology, the
scaling family, the gap distributions, the levels n to sweep, and the output
layout.  The harness runs replications of the event-driven simulator at each
level, draws marginals of the reflected limit diffusion, and emits a CSV of
per-(n, t, station) summary statistics plus a manifest that makes the run
reproducible byte for byte.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import kolmogi

from .limits import JacksonParams, LimitSpec, build_covariance, sample_reflected_marginals
from .network import (
    AffineRate,
    ConditionViolation,
    ConstantRate,
    ModelConditionError,
    NetworkTopology,
    RateFunction,
    ScalingFamily,
    TabulatedRate,
    drift_function,
    effective_rates,
    spectral_radius,
    validate_family,
)
from .primitives import RenewalSpec
from .simulator import (
    ExplosionError,
    SimConfig,
    scaled_queue_path,
    simulate_direct,
    simulate_uniformized,
)

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "ComparisonReport",
    "load_config",
    "parse_config",
    "validate_config",
    "replication_seed",
    "run_scaling_sweep",
    "build_report",
    "emit_report",
    "ks_two_sample",
    "ks_critical",
    "ENGINE_TAGS",
    "LIMIT_TAG",
    "EXPLOSION_BUDGET",
]

# entropy tags keep engine and limit streams disjoint under one base seed
ENGINE_TAGS = {"direct": 0, "uniformized": 1}
LIMIT_TAG = 2
EXPLOSION_BUDGET = 0.01
MIN_REPLICATIONS = 100
_SEED_RULE = "SeedSequence((base_seed, tag, n, replication)); tags: direct=0, uniformized=1, limit=2"
_STATISTICS = ("mean", "covariance", "ks")

_ENGINES: dict = {"direct": simulate_direct, "uniformized": simulate_uniformized}


# ---------------------------------------------------------------------------
# config parsing


@dataclass
class ExperimentConfig:
    """Parsed experiment description (see load_config for the file format)."""

    topology: NetworkTopology
    family: ScalingFamily
    arrival_specs: tuple
    service_specs: tuple
    convention: str
    levels: tuple
    horizon: float
    replications: int
    initial_queue: tuple
    seed: int
    eval_times: tuple
    statistics: tuple
    engine: str
    out_dir: str
    limit_dt: float
    limit_paths: int
    limit_initial: tuple
    plot_paths: int
    declared_lipschitz: Optional[float]
    max_events: float
    raw: dict = field(repr=False)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ValueError(f"config section {where!r} is missing key {key!r}")
    return doc[key]


def _parse_rate(doc, where: str) -> RateFunction:
    if isinstance(doc, (int, float)):
        return ConstantRate(float(doc))
    if not isinstance(doc, dict):
        raise ValueError(f"{where}: rate must be a number or an object with a 'kind'")
    kind = _require(doc, "kind", where)
    bound = doc.get("growth_bound")
    try:
        if kind == "constant":
            return ConstantRate(float(_require(doc, "value", where)), growth_bound=bound)
        if kind == "affine":
            return AffineRate(
                float(doc.get("intercept", 0.0)),
                [float(s) for s in _require(doc, "slopes", where)],
                cap=float(doc.get("cap", math.inf)),
                growth_bound=bound,
            )
        if kind == "tabulated":
            return TabulatedRate(
                int(_require(doc, "coordinate", where)),
                [float(v) for v in _require(doc, "knots", where)],
                [float(v) for v in _require(doc, "values", where)],
                tail_slope=float(doc.get("tail_slope", 0.0)),
                growth_bound=bound,
            )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from exc
    raise ValueError(f"{where}: unknown rate kind {kind!r}")


def _parse_spec(doc, where: str) -> Optional[RenewalSpec]:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ValueError(f"{where}: gap distribution must be an object or null")
    dist = _require(doc, "distribution", where)
    try:
        if dist == "exponential":
            return RenewalSpec.exponential(doc.get("mean", 1.0))
        if dist == "erlang":
            return RenewalSpec.erlang(_require(doc, "shape", where), doc.get("mean", 1.0))
        if dist == "uniform":
            return RenewalSpec.uniform(_require(doc, "low", where), _require(doc, "high", where))
        if dist == "lognormal":
            return RenewalSpec.lognormal(_require(doc, "mu", where), _require(doc, "sigma", where))
        if dist == "deterministic":
            return RenewalSpec.deterministic(doc.get("gap", 1.0))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from exc
    raise ValueError(f"{where}: unknown distribution {dist!r}")


def _parse_rate_list(doc, K: int, where: str, required: bool):
    if doc is None:
        if required:
            raise ValueError(f"config is missing rate list {where!r}")
        return None
    if not isinstance(doc, list) or len(doc) != K:
        raise ValueError(f"{where} must list one rate per station ({K})")
    return tuple(_parse_rate(r, f"{where}[{i}]") for i, r in enumerate(doc))


def load_config(path: str) -> dict:
    """Read a JSON experiment config from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config root must be a JSON object")
    return doc


def parse_config(doc: dict) -> ExperimentConfig:
    """Type-check a config document and build the model objects.

    Raises ValueError on malformed input and ModelConditionError when the
    routing matrix itself is inadmissible; softer model conditions are left
    to validate_config.
    """
    topo_doc = _require(doc, "topology", "config")
    routing = np.asarray(_require(topo_doc, "routing", "topology"), dtype=float)
    stations = [int(i) for i in _require(topo_doc, "arrival_stations", "topology")]
    # Station ids are 1-based in config files, matching the emitted CSVs.
    if any(i < 1 or i > len(routing) for i in stations):
        raise ValueError("topology.arrival_stations entries must lie in 1..K")
    topology = NetworkTopology(routing, frozenset(i - 1 for i in stations))
    K = topology.size

    rates = _require(doc, "rates", "config")
    family = ScalingFamily(
        arrival_base=_parse_rate_list(rates.get("arrival_base"), K, "rates.arrival_base", True),
        service_base=_parse_rate_list(rates.get("service_base"), K, "rates.service_base", True),
        arrival_perturbation=_parse_rate_list(
            rates.get("arrival_perturbation"), K, "rates.arrival_perturbation", False),
        service_perturbation=_parse_rate_list(
            rates.get("service_perturbation"), K, "rates.service_perturbation", False),
    )

    prim = _require(doc, "primitives", "config")
    arr_doc = _require(prim, "arrival", "primitives")
    svc_doc = _require(prim, "service", "primitives")
    if not isinstance(arr_doc, list) or len(arr_doc) != K:
        raise ValueError(f"primitives.arrival must list one entry per station ({K})")
    if not isinstance(svc_doc, list) or len(svc_doc) != K:
        raise ValueError(f"primitives.service must list one entry per station ({K})")
    arrival_specs = tuple(_parse_spec(s, f"primitives.arrival[{i}]") for i, s in enumerate(arr_doc))
    service_specs = tuple(_parse_spec(s, f"primitives.service[{i}]") for i, s in enumerate(svc_doc))
    for i, s in enumerate(service_specs):
        if s is None:
            raise ValueError(f"primitives.service[{i}] must not be null")
    for i in sorted(topology.arrival_stations):
        if arrival_specs[i] is None:
            raise ValueError(
                f"primitives.arrival[{i}] must not be null (station {i + 1} receives arrivals)")

    scaling = _require(doc, "scaling", "config")
    convention = scaling.get("convention", "conventional")
    if convention not in ("conventional", "rate-absorbed"):
        raise ValueError(f"scaling.convention must be 'conventional' or 'rate-absorbed'")
    levels = tuple(int(n) for n in _require(scaling, "levels", "scaling"))
    if not levels or any(n < 1 for n in levels) or list(levels) != sorted(set(levels)):
        raise ValueError("scaling.levels must be distinct positive integers in increasing order")

    exp = _require(doc, "experiment", "config")
    horizon = float(_require(exp, "horizon", "experiment"))
    if horizon <= 0:
        raise ValueError("experiment.horizon must be positive")
    replications = int(_require(exp, "replications", "experiment"))
    if replications < MIN_REPLICATIONS:
        raise ValueError(f"experiment.replications must be >= {MIN_REPLICATIONS}")
    initial_queue = tuple(int(v) for v in exp.get("initial_queue", [0] * K))
    if len(initial_queue) != K or any(v < 0 for v in initial_queue):
        raise ValueError("experiment.initial_queue must be K nonnegative integers")
    eval_times = tuple(float(t) for t in exp.get("eval_times", [horizon / 2.0, horizon]))
    if not eval_times or any(not 0.0 < t <= horizon for t in eval_times):
        raise ValueError("experiment.eval_times must lie in (0, horizon]")
    statistics = tuple(exp.get("statistics", _STATISTICS))
    if not statistics or any(s not in _STATISTICS for s in statistics):
        raise ValueError(f"experiment.statistics entries must come from {_STATISTICS}")
    engine = exp.get("engine", "direct")
    if engine not in _ENGINES:
        raise ValueError(f"experiment.engine must be one of {sorted(_ENGINES)}")
    seed = int(exp.get("seed", 0))
    max_events = float(exp.get("max_events", 1e8))
    declared = exp.get("declared_lipschitz")

    out = doc.get("output", {})
    out_dir = str(out.get("dir", "out"))
    limit_dt = float(out.get("limit_dt", 1e-3))
    limit_paths = int(out.get("limit_paths", 20000))
    if limit_dt <= 0 or limit_paths < 1:
        raise ValueError("output.limit_dt must be positive and output.limit_paths >= 1")
    limit_initial = tuple(float(v) for v in out.get("limit_initial", [0.0] * K))
    if len(limit_initial) != K or any(v < 0 for v in limit_initial):
        raise ValueError("output.limit_initial must be K nonnegative reals")
    plot_paths = int(out.get("plot_paths", 0))
    if plot_paths < 0:
        raise ValueError("output.plot_paths must be >= 0")

    return ExperimentConfig(
        topology=topology, family=family,
        arrival_specs=arrival_specs, service_specs=service_specs,
        convention=convention, levels=levels, horizon=horizon,
        replications=replications, initial_queue=initial_queue, seed=seed,
        eval_times=eval_times, statistics=statistics, engine=engine, out_dir=out_dir,
        limit_dt=limit_dt, limit_paths=limit_paths, limit_initial=limit_initial,
        plot_paths=plot_paths,
        declared_lipschitz=None if declared is None else float(declared),
        max_events=max_events, raw=doc,
    )


def validate_config(doc: dict):
    """Parse and check a config document.

    Returns (config, violations).  Structural problems raise ValueError;
    model-condition failures (inadmissible routing, growth, balance,
    Lipschitz) come back as labeled ConditionViolation entries, with config
    None when the topology itself is unusable.
    """
    try:
        cfg = parse_config(doc)
    except ModelConditionError as exc:
        return None, [ConditionViolation(exc.condition, str(exc))]
    violations = list(validate_family(cfg.family, cfg.topology,
                                      declared_lipschitz=cfg.declared_lipschitz))
    return cfg, violations


# ---------------------------------------------------------------------------
# seeds, the sweep, and limit parameters


def replication_seed(base_seed: int, tag: int, n: int, r: int) -> np.random.SeedSequence:
    """Entropy-disjoint seed for replication r of level n under one tag."""
    return np.random.SeedSequence(entropy=(int(base_seed), int(tag), int(n), int(r)))


def limit_params(cfg: ExperimentConfig) -> JacksonParams:
    """Nominal rates, gap variances, and origin speeds implied by the config.

    The nominal rate of a stream is 1/mean of its gap distribution; the speed
    at the origin is the base intensity at 0 divided by the nominal rate.
    This covers both conventions: rate-absorbed configs carry mean-1 gaps and
    fold the rate into the intensity.
    """
    K = cfg.topology.size
    origin = np.zeros((1, K))
    lam = np.ones(K)
    a = np.zeros(K)
    lhat = np.zeros(K)
    for i in sorted(cfg.topology.arrival_stations):
        spec = cfg.arrival_specs[i]
        lam[i] = 1.0 / spec.mean
        a[i] = spec.variance
        lhat[i] = float(cfg.family.arrival_base[i].eval_grid(origin)[0]) * spec.mean
    mu = np.empty(K)
    s = np.empty(K)
    shat = np.empty(K)
    for i in range(K):
        spec = cfg.service_specs[i]
        mu[i] = 1.0 / spec.mean
        s[i] = spec.variance
        shat[i] = float(cfg.family.service_base[i].eval_grid(origin)[0]) * spec.mean
    return JacksonParams(
        arrival_rates=lam, arrival_variances=a,
        service_rates=mu, service_variances=s,
        arrival_speed0=lhat, service_speed0=shat,
        routing=cfg.topology.routing,
        arrival_stations=cfg.topology.arrival_stations,
    )


def limit_spec(cfg: ExperimentConfig) -> LimitSpec:
    """Reflected limit diffusion implied by the config."""
    drift = drift_function(cfg.family, cfg.topology)
    cov = build_covariance(limit_params(cfg))
    return LimitSpec(initial=np.asarray(cfg.limit_initial, dtype=float),
                     drift=drift, noise=cov)


@dataclass
class SweepResult:
    """Raw sweep output: scaled marginals per level plus limit marginals.

    marginals[n] has shape (replications_kept, len(eval_times), K); exploded[n]
    counts replications that hit the event budget and were dropped;
    plot_paths[n] holds full scaled paths of the first few replications when
    the config asks for plot data.
    """

    config: ExperimentConfig
    marginals: dict
    exploded: dict
    limit_marginals: np.ndarray
    covariance: np.ndarray
    drift_at_origin: np.ndarray
    plot_paths: dict = field(default_factory=dict)


def run_level(cfg: ExperimentConfig, n: int, engine: Optional[str] = None,
              replications: Optional[int] = None,
              progress: Optional[Callable[[int, int], None]] = None,
              keep_paths: int = 0) -> tuple:
    """All replications of one scaling level.

    Returns (samples, exploded, paths): samples has shape
    (kept, len(eval_times), K) holding the diffusion-scaled queue at the
    scaled eval times; paths holds full scaled GridPaths of the first
    keep_paths non-exploding replications.
    """
    engine = cfg.engine if engine is None else engine
    run = _ENGINES[engine]
    tag = ENGINE_TAGS[engine]
    R = cfg.replications if replications is None else int(replications)
    K = cfg.topology.size

    if cfg.convention == "conventional":
        horizon = n * cfg.horizon
        query = np.asarray(cfg.eval_times) * n
        scales = ([spec.mean if spec is not None else 1.0 for spec in cfg.arrival_specs],
                  [spec.mean for spec in cfg.service_specs])
    else:
        horizon = cfg.horizon
        query = np.asarray(cfg.eval_times)
        scales = (None, None)
    lam, mu = effective_rates(cfg.family, n, cfg.convention,
                              arrival_scale=scales[0], service_scale=scales[1])
    rn = math.sqrt(n)

    out = np.empty((R, len(query), K))
    kept = 0
    exploded = 0
    paths = []
    for r in range(R):
        sim = SimConfig(
            topology=cfg.topology, arrival_rates=lam, service_rates=mu,
            arrival_specs=cfg.arrival_specs, service_specs=cfg.service_specs,
            initial_queue=cfg.initial_queue, horizon=horizon,
            seed=replication_seed(cfg.seed, tag, n, r), max_events=cfg.max_events,
        )
        try:
            traj = run(sim)
        except ExplosionError:
            exploded += 1
            if exploded > EXPLOSION_BUDGET * R:
                raise RuntimeError(
                    f"level {n}: {exploded} of {r + 1} replications hit the event budget "
                    f"(more than {100 * EXPLOSION_BUDGET:g}%); aborting the sweep")
            continue
        out[kept] = traj.queue_at(query) / rn
        if kept < keep_paths:
            paths.append(scaled_queue_path(traj, n, cfg.convention, num_points=256))
        kept += 1
        if progress is not None:
            progress(r + 1, R)
    return out[:kept], exploded, paths


def run_scaling_sweep(cfg: ExperimentConfig,
                      progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Simulate every level and draw matching limit marginals."""
    spec = limit_spec(cfg)
    params = limit_params(cfg)
    cov = build_covariance(params)
    marginals = {}
    exploded = {}
    plot = {}
    for n in cfg.levels:
        if progress is not None:
            progress(f"level n={n}: {cfg.replications} replications ({cfg.engine})")
        marginals[n], exploded[n], paths = run_level(cfg, n, keep_paths=cfg.plot_paths)
        if paths:
            plot[n] = paths
    if progress is not None:
        progress(f"limit: {cfg.limit_paths} paths at dt={cfg.limit_dt:g}")
    limit = sample_reflected_marginals(
        spec, cfg.topology.routing, cfg.eval_times, horizon=max(cfg.eval_times),
        dt=cfg.limit_dt, n_paths=cfg.limit_paths,
        seed=replication_seed(cfg.seed, LIMIT_TAG, 0, 0),
    )
    drift0 = spec.drift_at(np.zeros((1, cfg.topology.size)))[0]
    return SweepResult(config=cfg, marginals=marginals, exploded=exploded,
                       limit_marginals=limit, covariance=cov.matrix,
                       drift_at_origin=drift0, plot_paths=plot)


# ---------------------------------------------------------------------------
# two-sample Kolmogorov-Smirnov


def ks_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    """sup_t |F_x(t) - F_y(t)| over the pooled sample points."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([x, y])
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fy = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample rejection threshold at level alpha."""
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(kolmogi(alpha)) * math.sqrt((n + m) / (n * m))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ReportRow:
    """One (n, t, station) cell; station is 0-based here, 1-based in the CSV."""

    n: int
    t: float
    station: int
    mean: float
    var: float
    ks: float
    ks_critical_1pct: float
    mean_ci99: float  # 99% confidence radius of the mean


def _empirical_cov(block: np.ndarray) -> np.ndarray:
    # block is (R, K); a 1-sample block has no covariance estimate
    if block.shape[0] < 2:
        return np.zeros((block.shape[1], block.shape[1]))
    C = np.cov(block, rowvar=False).reshape(block.shape[1], block.shape[1])
    return (C + C.T) / 2.0


@dataclass
class ComparisonReport:
    """Per-(n, t, station) summary statistics against the limit marginals.

    covariances maps (n, t) to the empirical covariance matrix of X^n(t);
    limit_cov holds the limit-sample covariance per eval time.  Both are
    exactly symmetric.
    """

    rows: list
    covariances: dict
    limit_mean: np.ndarray   # (len(eval_times), K)
    limit_var: np.ndarray
    limit_cov: np.ndarray    # (len(eval_times), K, K)
    result: SweepResult


def build_report(result: SweepResult) -> ComparisonReport:
    cfg = result.config
    K = cfg.topology.size
    limit = result.limit_marginals
    want_cov = "covariance" in cfg.statistics
    rows = []
    covariances = {}
    for n in cfg.levels:
        samples = result.marginals[n]
        for ti, t in enumerate(cfg.eval_times):
            if want_cov:
                covariances[(n, t)] = _empirical_cov(samples[:, ti, :])
            for i in range(K):
                sim = samples[:, ti, i]
                ref = limit[:, ti, i]
                var = float(np.var(sim, ddof=1)) if sim.size > 1 else 0.0
                rows.append(ReportRow(
                    n=n, t=t, station=i,
                    mean=float(np.mean(sim)), var=var,
                    ks=ks_two_sample(sim, ref),
                    ks_critical_1pct=ks_critical(sim.size, ref.size, alpha=0.01),
                    mean_ci99=2.5758293035489004 * math.sqrt(var / sim.size),
                ))
    return ComparisonReport(
        rows=rows,
        covariances=covariances,
        limit_mean=limit.mean(axis=0),
        limit_var=limit.var(axis=0, ddof=1),
        limit_cov=np.stack([_empirical_cov(limit[:, ti, :])
                            for ti in range(limit.shape[1])]),
        result=result,
    )


def _g17(v: float) -> str:
    return "%.17g" % float(v)


def emit_report(report: ComparisonReport, out_dir: Optional[str] = None) -> dict:
    """Write results.csv, manifest.json, and optional plot_data.csv.

    Returns {name: path}.  Stations are 1-based in the files.  Output is a
    pure function of the config: no timestamps, sorted keys, fixed float
    formatting, so a rerun reproduces the bytes exactly.
    """
    from . import __version__

    cfg = report.result.config
    out_dir = cfg.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)

    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,t,station,mean,var,ks,ks_critical_1pct\n")
        for r in report.rows:
            fh.write(f"{r.n},{_g17(r.t)},{r.station + 1},{_g17(r.mean)},{_g17(r.var)},"
                     f"{_g17(r.ks)},{_g17(r.ks_critical_1pct)}\n")

    manifest = {
        "version": __version__,
        "config": cfg.raw,
        "seed_rule": _SEED_RULE,
        "base_seed": cfg.seed,
        "engine": cfg.engine,
        "levels": list(cfg.levels),
        "eval_times": list(cfg.eval_times),
        "statistics": list(cfg.statistics),
        "replications": cfg.replications,
        "exploded": {str(n): int(report.result.exploded[n]) for n in cfg.levels},
        "spectral_radius": spectral_radius(cfg.topology.routing),
        "drift_at_origin": [float(v) for v in report.result.drift_at_origin],
        "limit_covariance": [[float(v) for v in row] for row in report.result.covariance],
        "limit_mean": [[float(v) for v in row] for row in report.limit_mean],
        "limit_paths": cfg.limit_paths,
        "limit_dt": cfg.limit_dt,
        "format": {
            "results.csv": "n,t,station,mean,var,ks,ks_critical_1pct; "
                           "stations 1-based; floats as %.17g",
            "plot_data.csv": "n,path,t,x_1..x_K; stations 1-based",
        },
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files = {"results.csv": csv_path, "manifest.json": manifest_path}

    if report.result.plot_paths:
        K = cfg.topology.size
        plot_path = os.path.join(out_dir, "plot_data.csv")
        with open(plot_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n,path,t," + ",".join(f"x_{i + 1}" for i in range(K)) + "\n")
            for n in cfg.levels:
                for p, gp in enumerate(report.result.plot_paths.get(n, [])):
                    for k in range(len(gp.grid)):
                        row = [gp.grid[k], *gp.values[k]]
                        fh.write(f"{n},{p}," + ",".join(_g17(v) for v in row) + "\n")
        files["plot_data.csv"] = plot_path
    return files
