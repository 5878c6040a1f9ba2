"""Acceptance gate: every shipped claim checked at full scale.

Run with `pytest tests/test_acceptance.py -v -s`; each test prints one
PASS/FAIL line for its criterion.  The whole gate is Monte Carlo heavy
and takes roughly 15-20 minutes on one core.
"""

import math
import time

import numpy as np

from heavyq.harness import (
    ENGINE_TAGS,
    LIMIT_TAG,
    build_report,
    emit_report,
    ks_critical,
    ks_two_sample,
    limit_spec,
    parse_config,
    replication_seed,
    run_level,
    run_scaling_sweep,
    validate_config,
)
from heavyq.limits import sample_reflected_marginals
from heavyq.network import AffineRate, ConstantRate, NetworkTopology
from heavyq.primitives import RenewalSpec
from heavyq.simulator import SimConfig, simulate_direct, simulate_uniformized
from heavyq.skorohod import solve_sp, solve_sp_1d
from helpers import P_CYCLIC_2, P_CYCLIC_3, P_SINGLE, P_SINGLE_FEEDBACK, P_TANDEM, brownian_path
from oracles import birth_death_generator, ctmc_marginal, empirical_pmf, total_variation

EXP = RenewalSpec.exponential()
RBM_MEAN = 2.0 / math.sqrt(math.pi)          # E|N(0,2)| at t=1
ERLANG_MEAN = math.sqrt(3.0 / math.pi)       # E|N(0,1.5)| at t=1


def _report(num, name, ok, detail):
    print(f"\ncriterion {num} ({name}): {'PASS' if ok else 'FAIL'}  [{detail}]")
    assert ok, f"criterion {num} ({name}): {detail}"


def _station_doc(service, seed, levels, replications, service_perturbation=None):
    rates = {
        "arrival_base": [{"kind": "constant", "value": 1.0}],
        "service_base": [{"kind": "constant", "value": 1.0}],
    }
    if service_perturbation is not None:
        rates["service_perturbation"] = [service_perturbation]
    return {
        "topology": {"routing": [[0.0]], "arrival_stations": [1]},
        "rates": rates,
        "primitives": {
            "arrival": [{"distribution": "exponential", "mean": 1.0}],
            "service": [service],
        },
        "scaling": {"convention": "conventional", "levels": list(levels)},
        "experiment": {"horizon": 1.0, "replications": replications,
                       "seed": seed, "eval_times": [1.0]},
        "output": {"limit_dt": 1e-4, "limit_paths": 20000},
    }


def _tandem_doc(seed, replications):
    return {
        "topology": {"routing": [[0.0, 1.0], [0.0, 0.0]], "arrival_stations": [1]},
        "rates": {
            "arrival_base": [{"kind": "constant", "value": 1.0},
                             {"kind": "constant", "value": 0.0}],
            "service_base": [{"kind": "constant", "value": 1.0},
                             {"kind": "constant", "value": 1.0}],
        },
        "primitives": {
            "arrival": [{"distribution": "exponential", "mean": 1.0}, None],
            "service": [{"distribution": "exponential", "mean": 1.0},
                        {"distribution": "exponential", "mean": 1.0}],
        },
        "scaling": {"convention": "conventional", "levels": [1600]},
        "experiment": {"horizon": 1.0, "replications": replications,
                       "seed": seed, "eval_times": [1.0]},
        "output": {"limit_dt": 1e-4, "limit_paths": 20000},
    }


def test_criterion_1_skorohod_map():
    start = time.perf_counter()
    cases = [(P_SINGLE, 1), (P_SINGLE_FEEDBACK, 1), (P_TANDEM, 2),
             (P_CYCLIC_2, 2), (P_CYCLIC_3, 3)]
    rng = np.random.default_rng(1001)
    worst_recon = worst_comp = worst_closed = 0.0
    min_increment = np.inf
    seed = 10_000
    for P, dim in cases:
        R = np.eye(dim) - np.asarray(P).T
        for _ in range(200):
            psi = brownian_path(seed, dim=dim,
                                scale=0.5 + 1.5 * rng.random(),
                                drift=-1.0 + 1.5 * rng.random())
            seed += 1
            sol = solve_sp(psi, P)
            recon = psi.values + sol.eta.values @ R.T
            worst_recon = max(worst_recon, float(np.max(np.abs(sol.phi.values - recon))))
            d_eta = np.diff(sol.eta.values, axis=0)
            min_increment = min(min_increment, float(np.min(d_eta)))
            worst_comp = max(worst_comp, float(np.max(
                np.sum(sol.phi.values[1:] * d_eta, axis=0), initial=0.0)))
            if P is P_SINGLE:
                ref = solve_sp_1d(psi)
                worst_closed = max(worst_closed, float(np.max(
                    np.abs(sol.phi.values - ref.phi.values))))
    elapsed = time.perf_counter() - start
    ok = (worst_recon <= 1e-9 and min_increment >= 0.0 and worst_comp <= 1e-8
          and worst_closed <= 1e-12 and elapsed < 60.0)
    _report(1, "Skorohod map", ok,
            f"recon {worst_recon:.2e}, min d_eta {min_increment:.1e}, "
            f"compl {worst_comp:.2e}, closed-form gap {worst_closed:.2e}, {elapsed:.0f}s")


def test_criterion_2_simulator_identities():
    start = time.perf_counter()
    checked = 0
    for seed in range(3):
        cases = []
        topo1 = NetworkTopology(P_SINGLE_FEEDBACK, frozenset({0}))
        cases.append(SimConfig(topo1, [ConstantRate(0.3)], [ConstantRate(1.0)],
                               [EXP], [RenewalSpec.erlang(2)], [2], 30.0, seed=seed))
        topo2 = NetworkTopology(np.array([[0.0, 0.7], [0.3, 0.0]]), frozenset({0}))
        cases.append(SimConfig(
            topo2, [ConstantRate(0.5), ConstantRate(0.0)],
            [AffineRate(0.2, [0.3, 0.0], cap=1.5), ConstantRate(0.9)],
            [EXP, None], [EXP, RenewalSpec.uniform(0.5, 1.5)], [0, 1], 30.0, seed=seed))
        topo3 = NetworkTopology(P_CYCLIC_3, frozenset({0, 1}))
        cases.append(SimConfig(
            topo3, [ConstantRate(0.4), ConstantRate(0.2), ConstantRate(0.0)],
            [ConstantRate(1.0), ConstantRate(0.8), ConstantRate(1.2)],
            [EXP, RenewalSpec.lognormal(0.0, 0.5), None],
            [EXP, EXP, RenewalSpec.erlang(3)], [0, 0, 3], 30.0, seed=seed))
        for cfg in cases:
            for run in (simulate_direct, simulate_uniformized):
                traj = run(cfg)
                expected = (cfg.initial_queue[None, :] + traj.arrivals
                            + traj.internal - traj.departures)
                assert traj.queues.dtype == np.int64
                assert np.array_equal(traj.queues, expected)
                assert np.all(traj.queues >= 0)
                d_reg = np.diff(traj.regulator, axis=0)
                assert np.min(d_reg) >= 0.0
                assert np.all(traj.queues[:-1][d_reg > 0.0] == 0)
                checked += traj.event_count
    elapsed = time.perf_counter() - start
    _report(2, "simulator identities", checked > 0,
            f"exact on {checked} events across 18 trajectories, {elapsed:.0f}s")


def test_criterion_3_markov_oracle():
    start = time.perf_counter()
    reps, states, horizon = 100_000, 200, 5.0
    topo = NetworkTopology(P_SINGLE, frozenset({0}))
    samples = {}
    for name, run in (("direct", simulate_direct), ("uniformized", simulate_uniformized)):
        out = np.empty(reps, dtype=np.int64)
        for r in range(reps):
            cfg = SimConfig(topo, [ConstantRate(0.5)],
                            [AffineRate(0.2, [0.3], cap=1.5)],
                            [EXP], [EXP], [0], horizon,
                            seed=replication_seed(3, ENGINE_TAGS[name], 1, r))
            out[r] = run(cfg).queues[-1, 0]
        samples[name] = out
    G = birth_death_generator(lambda k: 0.5, lambda k: min(0.2 + 0.3 * k, 1.5), states)
    reference = ctmc_marginal(G, 0, horizon)
    tv = {name: total_variation(empirical_pmf(s, states), reference)
          for name, s in samples.items()}
    ks = ks_two_sample(samples["direct"][:10_000], samples["uniformized"][:10_000])
    crit = ks_critical(10_000, 10_000, alpha=0.01)
    elapsed = time.perf_counter() - start
    ok = max(tv.values()) <= 0.02 and ks < crit and elapsed < 300.0
    _report(3, "Markovian oracle", ok,
            f"TV direct {tv['direct']:.4f}, uniformized {tv['uniformized']:.4f} (<= 0.02), "
            f"cross-engine KS {ks:.4f} < {crit:.4f}, {elapsed:.0f}s")


def test_criterion_4_mm1_heavy_traffic():
    start = time.perf_counter()
    doc = _station_doc({"distribution": "exponential", "mean": 1.0},
                       seed=4, levels=[100, 400, 1600], replications=20_000)
    cfg = parse_config(doc)
    report = build_report(run_scaling_sweep(cfg))
    rows = {row.n: row for row in report.rows}
    mean_err = abs(rows[1600].mean - RBM_MEAN) / RBM_MEAN
    ks_seq = [rows[n].ks for n in (100, 400, 1600)]
    crit = rows[1600].ks_critical_1pct
    inversions = sum(ks_seq[i + 1] > ks_seq[i] for i in range(2))
    elapsed = time.perf_counter() - start
    ok = (mean_err <= 0.03 and ks_seq[-1] <= 1.5 * crit and inversions <= 1
          and elapsed < 900.0)
    _report(4, "heavy-traffic M/M/1", ok,
            f"mean err {100 * mean_err:.2f}% (<= 3%), KS {ks_seq[0]:.4f}/"
            f"{ks_seq[1]:.4f}/{ks_seq[2]:.4f} vs 1.5x crit {1.5 * crit:.4f}, "
            f"{inversions} inversions, {elapsed:.0f}s")


def test_criterion_5_tandem_covariance():
    start = time.perf_counter()
    cfg = parse_config(_tandem_doc(seed=5, replications=10_000))
    result = run_scaling_sweep(cfg)
    assert np.array_equal(result.covariance, [[2.0, -1.0], [-1.0, 2.0]])
    report = build_report(result)
    sim_cov = report.covariances[(1600, 1.0)]
    limit_cov = report.limit_cov[0]
    frob = (np.linalg.norm(sim_cov - limit_cov, "fro")
            / np.linalg.norm(limit_cov, "fro"))
    elapsed = time.perf_counter() - start
    ok = frob <= 0.10 and elapsed < 1200.0
    _report(5, "tandem covariance", ok,
            f"Frobenius err {100 * frob:.2f}% (<= 10%), "
            f"sim cov {np.round(sim_cov, 3).tolist()}, "
            f"limit cov {np.round(limit_cov, 3).tolist()}, {elapsed:.0f}s")


def test_criterion_6_state_dependent_drift():
    start = time.perf_counter()
    doc = _station_doc({"distribution": "exponential", "mean": 1.0},
                       seed=6, levels=[1600], replications=10_000,
                       service_perturbation={"kind": "affine", "slopes": [1.0]})
    cfg = parse_config(doc)
    samples, exploded, _ = run_level(cfg, 1600)
    sim_mean = float(samples[:, 0, 0].mean())
    spec = limit_spec(cfg)
    P = cfg.topology.routing
    ref = {}
    for k, dt in enumerate((1e-5, 5e-6)):
        marg = sample_reflected_marginals(
            spec, P, [1.0], horizon=1.0, dt=dt, n_paths=20_000,
            seed=replication_seed(6, LIMIT_TAG, 0, k))
        ref[dt] = float(marg[:, 0, 0].mean())
    self_err = abs(ref[1e-5] - ref[5e-6]) / ref[1e-5]
    sim_err = abs(sim_mean - ref[1e-5]) / ref[1e-5]
    elapsed = time.perf_counter() - start
    ok = (exploded == 0 and self_err <= 0.02 and sim_err <= 0.05
          and elapsed < 900.0)
    _report(6, "state-dependent drift", ok,
            f"sim mean {sim_mean:.4f} vs integrator {ref[1e-5]:.4f}: "
            f"err {100 * sim_err:.2f}% (<= 5%), integrator self-consistency "
            f"{100 * self_err:.2f}% (<= 2%), {elapsed:.0f}s")


def test_criterion_7_erlang_service():
    start = time.perf_counter()
    doc = _station_doc({"distribution": "erlang", "shape": 2, "mean": 1.0},
                       seed=7, levels=[100, 400, 1600], replications=20_000)
    cfg = parse_config(doc)
    result = run_scaling_sweep(cfg)
    assert np.array_equal(result.covariance, [[1.5]])
    report = build_report(result)
    rows = {row.n: row for row in report.rows}
    mean_err = abs(rows[1600].mean - ERLANG_MEAN) / ERLANG_MEAN
    ks_seq = [rows[n].ks for n in (100, 400, 1600)]
    crit = rows[1600].ks_critical_1pct
    inversions = sum(ks_seq[i + 1] > ks_seq[i] for i in range(2))
    elapsed = time.perf_counter() - start
    ok = (mean_err <= 0.05 and ks_seq[-1] <= 1.5 * crit and inversions <= 1
          and elapsed < 900.0)
    _report(7, "Erlang-2 service", ok,
            f"mean err {100 * mean_err:.2f}% (<= 5%), KS {ks_seq[0]:.4f}/"
            f"{ks_seq[1]:.4f}/{ks_seq[2]:.4f} vs 1.5x crit {1.5 * crit:.4f}, "
            f"{inversions} inversions, {elapsed:.0f}s")


def test_criterion_8_determinism_and_validation(tmp_path):
    start = time.perf_counter()
    base = _station_doc({"distribution": "exponential", "mean": 1.0},
                        seed=8, levels=[4, 16], replications=120)
    base["output"] = {"limit_dt": 1e-3, "limit_paths": 300}
    outputs = []
    for sub in ("a", "b"):
        report = build_report(run_scaling_sweep(parse_config(base)))
        files = emit_report(report, out_dir=str(tmp_path / sub))
        outputs.append({name: open(path, "rb").read()
                        for name, path in files.items()})
    identical = outputs[0] == outputs[1] and len(outputs[0]) >= 2

    negatives = {}
    doc = _tandem_doc(seed=8, replications=100)
    doc["topology"]["routing"] = [[0.6, 0.6], [0.0, 0.0]]
    negatives["substochasticity"] = doc
    doc = _station_doc({"distribution": "exponential", "mean": 1.0},
                       seed=8, levels=[4], replications=100)
    doc["topology"]["routing"] = [[1.0]]
    negatives["(A1)"] = doc
    doc = _station_doc({"distribution": "exponential", "mean": 1.0},
                       seed=8, levels=[4], replications=100)
    doc["rates"]["arrival_base"] = [{"kind": "constant", "value": 0.6}]
    negatives["(A3)"] = doc
    doc = _station_doc({"distribution": "exponential", "mean": 1.0},
                       seed=8, levels=[4], replications=100,
                       service_perturbation={"kind": "affine", "slopes": [2.0]})
    doc["experiment"]["declared_lipschitz"] = 0.5
    negatives["(A4)"] = doc
    labeled = 0
    for label, bad in negatives.items():
        _, violations = validate_config(bad)
        if label in [v.condition for v in violations]:
            labeled += 1
    elapsed = time.perf_counter() - start
    ok = identical and labeled == len(negatives)
    _report(8, "determinism and validation", ok,
            f"reruns byte-identical: {identical}, "
            f"{labeled}/{len(negatives)} negative configs correctly labeled, {elapsed:.0f}s")
