"""Config parsing, validation labels, seeds, sweeps, and report files."""

import copy
import json
import math

import numpy as np
import pytest

from heavyq.harness import (
    ExperimentConfig,
    build_report,
    emit_report,
    ks_critical,
    ks_two_sample,
    limit_params,
    parse_config,
    replication_seed,
    run_level,
    run_scaling_sweep,
    validate_config,
)
from heavyq.limits import build_covariance


def _mm1_doc(**overrides):
    doc = {
        "topology": {"routing": [[0.0]], "arrival_stations": [1]},
        "rates": {
            "arrival_base": [{"kind": "constant", "value": 1.0}],
            "service_base": [{"kind": "constant", "value": 1.0}],
        },
        "primitives": {
            "arrival": [{"distribution": "exponential", "mean": 1.0}],
            "service": [{"distribution": "exponential", "mean": 1.0}],
        },
        "scaling": {"convention": "conventional", "levels": [4, 16]},
        "experiment": {"horizon": 1.0, "replications": 120, "seed": 3,
                       "eval_times": [0.5, 1.0]},
        "output": {"limit_dt": 1e-3, "limit_paths": 300},
    }
    doc.update(copy.deepcopy(overrides))
    return doc


def _tandem_doc():
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
        "scaling": {"convention": "conventional", "levels": [25]},
        "experiment": {"horizon": 1.0, "replications": 150, "seed": 5},
        "output": {"limit_dt": 1e-3, "limit_paths": 200},
    }


# ---------------------------------------------------------------------------
# parsing


def test_parse_reads_one_based_arrival_stations():
    cfg = parse_config(_tandem_doc())
    assert cfg.topology.arrival_stations == frozenset({0})
    assert cfg.topology.size == 2
    assert cfg.convention == "conventional"
    assert cfg.levels == (25,)


def test_parse_defaults():
    doc = _mm1_doc()
    del doc["experiment"]["eval_times"]
    del doc["output"]
    cfg = parse_config(doc)
    assert cfg.eval_times == (0.5, 1.0)
    assert cfg.statistics == ("mean", "covariance", "ks")
    assert cfg.engine == "direct"
    assert cfg.limit_dt == 1e-3
    assert cfg.limit_paths == 20000
    assert cfg.out_dir == "out"
    assert cfg.plot_paths == 0
    assert cfg.declared_lipschitz is None


def test_parse_structural_errors():
    doc = _mm1_doc()
    del doc["rates"]
    with pytest.raises(ValueError):
        parse_config(doc)
    with pytest.raises(ValueError):
        parse_config(_mm1_doc(topology={"routing": [[0.0]], "arrival_stations": [2]}))
    with pytest.raises(ValueError):
        parse_config(_mm1_doc(topology={"routing": [[0.0]], "arrival_stations": [0]}))
    doc = _mm1_doc()
    doc["experiment"]["replications"] = 50
    with pytest.raises(ValueError, match=">= 100"):
        parse_config(doc)
    doc = _mm1_doc()
    doc["experiment"]["eval_times"] = [2.0]
    with pytest.raises(ValueError):
        parse_config(doc)
    doc = _mm1_doc()
    doc["scaling"]["levels"] = [16, 4]
    with pytest.raises(ValueError):
        parse_config(doc)
    doc = _mm1_doc()
    doc["experiment"]["statistics"] = ["median"]
    with pytest.raises(ValueError):
        parse_config(doc)
    doc = _mm1_doc()
    doc["experiment"]["engine"] = "exact"
    with pytest.raises(ValueError):
        parse_config(doc)
    doc = _mm1_doc()
    doc["primitives"]["service"] = [None]
    with pytest.raises(ValueError):
        parse_config(doc)
    doc = _mm1_doc()
    doc["primitives"]["arrival"] = [None]
    with pytest.raises(ValueError, match="receives arrivals"):
        parse_config(doc)


# ---------------------------------------------------------------------------
# validation labels


def test_validate_accepts_a_clean_config():
    cfg, violations = validate_config(_tandem_doc())
    assert cfg is not None
    assert violations == []


def test_validate_flags_substochasticity():
    doc = _mm1_doc(topology={"routing": [[0.6, 0.6], [0.0, 0.0]],
                             "arrival_stations": [1]})
    doc["rates"] = {
        "arrival_base": [{"kind": "constant", "value": 1.0}] * 2,
        "service_base": [{"kind": "constant", "value": 1.0}] * 2,
    }
    doc["primitives"] = {
        "arrival": [{"distribution": "exponential", "mean": 1.0}] * 2,
        "service": [{"distribution": "exponential", "mean": 1.0}] * 2,
    }
    cfg, violations = validate_config(doc)
    assert cfg is None
    assert [v.condition for v in violations] == ["substochasticity"]


def test_validate_flags_unit_spectral_radius():
    doc = _mm1_doc(topology={"routing": [[1.0]], "arrival_stations": [1]})
    cfg, violations = validate_config(doc)
    assert cfg is None
    assert [v.condition for v in violations] == ["(A1)"]


def test_validate_flags_balance():
    doc = _mm1_doc()
    doc["rates"]["arrival_base"] = [{"kind": "constant", "value": 0.6}]
    cfg, violations = validate_config(doc)
    assert cfg is not None
    assert "(A3)" in [v.condition for v in violations]


def test_validate_flags_growth_certificate():
    doc = _mm1_doc()
    doc["rates"]["arrival_base"] = [{"kind": "constant", "value": 1.0,
                                     "growth_bound": 0.25}]
    doc["rates"]["service_base"] = [{"kind": "constant", "value": 1.0,
                                     "growth_bound": 0.25}]
    _, violations = validate_config(doc)
    assert "(A2)" in [v.condition for v in violations]


def test_validate_flags_declared_lipschitz():
    doc = _mm1_doc()
    doc["rates"]["service_perturbation"] = [{"kind": "affine", "slopes": [2.0]}]
    doc["experiment"]["declared_lipschitz"] = 0.5
    _, violations = validate_config(doc)
    assert "(A4)" in [v.condition for v in violations]
    doc["experiment"]["declared_lipschitz"] = 2.5
    _, violations = validate_config(doc)
    assert violations == []


def test_validate_flags_arrivals_outside_the_arrival_set():
    doc = _tandem_doc()
    doc["rates"]["arrival_base"][1] = {"kind": "constant", "value": 1.0}
    _, violations = validate_config(doc)
    assert "model" in [v.condition for v in violations]


# ---------------------------------------------------------------------------
# seeds


def test_replication_seeds_are_disjoint():
    base = replication_seed(0, 0, 100, 0)
    words = {tuple(replication_seed(*key).generate_state(4))
             for key in ((0, 0, 100, 0), (0, 1, 100, 0), (0, 2, 100, 0),
                         (0, 0, 100, 1), (0, 0, 25, 0), (1, 0, 100, 0))}
    assert len(words) == 6
    assert tuple(base.generate_state(4)) in words
    again = replication_seed(0, 0, 100, 0)
    assert np.array_equal(base.generate_state(4), again.generate_state(4))


# ---------------------------------------------------------------------------
# KS machinery


def test_ks_two_sample_extremes():
    x = np.zeros(50)
    assert ks_two_sample(x, x) == 0.0
    assert ks_two_sample(x, np.ones(50)) == 1.0
    with pytest.raises(ValueError):
        ks_two_sample(x, np.empty(0))


def test_ks_critical_value():
    assert abs(ks_critical(10_000, 10_000, alpha=0.01) - 0.0231) < 1e-4
    assert ks_critical(100, 100) > ks_critical(10_000, 10_000)
    with pytest.raises(ValueError):
        ks_critical(0, 10)
    with pytest.raises(ValueError):
        ks_critical(10, 10, alpha=1.5)


def test_ks_holds_its_level_on_uniform_samples():
    crit = ks_critical(10_000, 10_000, alpha=0.01)
    rng = np.random.default_rng(314)
    accepted = sum(
        ks_two_sample(rng.random(10_000), rng.random(10_000)) < crit
        for _ in range(100))
    assert accepted >= 95


# ---------------------------------------------------------------------------
# limit parameters


def test_limit_covariance_is_convention_invariant():
    # one critical M/M/1 at rate 1/2, written in both conventions
    absorbed = _mm1_doc()
    absorbed["scaling"]["convention"] = "rate-absorbed"
    absorbed["rates"]["arrival_base"] = [{"kind": "constant", "value": 0.5}]
    absorbed["rates"]["service_base"] = [{"kind": "constant", "value": 0.5}]
    conventional = _mm1_doc()
    conventional["rates"]["arrival_base"] = [{"kind": "constant", "value": 0.5}]
    conventional["rates"]["service_base"] = [{"kind": "constant", "value": 0.5}]
    for key in ("arrival", "service"):
        conventional["primitives"][key] = [{"distribution": "exponential", "mean": 2.0}]
    cov_a = build_covariance(limit_params(parse_config(absorbed))).matrix
    cov_c = build_covariance(limit_params(parse_config(conventional))).matrix
    assert np.max(np.abs(cov_a - cov_c)) <= 1e-12
    assert cov_a[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_limit_params_of_the_unit_tandem():
    params = limit_params(parse_config(_tandem_doc()))
    assert np.array_equal(build_covariance(params).matrix, [[2.0, -1.0], [-1.0, 2.0]])
    assert params.arrival_speed0[1] == 0.0


# ---------------------------------------------------------------------------
# sweeps and reports


def test_zero_activity_network_reports_zero_statistics():
    doc = {
        "topology": {"routing": [[0.0]], "arrival_stations": []},
        "rates": {
            "arrival_base": [{"kind": "constant", "value": 0.0}],
            "service_base": [{"kind": "constant", "value": 0.0}],
        },
        "primitives": {
            "arrival": [None],
            "service": [{"distribution": "exponential", "mean": 1.0}],
        },
        "scaling": {"convention": "conventional", "levels": [4]},
        "experiment": {"horizon": 2.0, "replications": 100, "seed": 1},
        "output": {"limit_dt": 1e-3, "limit_paths": 100},
    }
    cfg, violations = validate_config(doc)
    assert violations == []
    report = build_report(run_scaling_sweep(cfg))
    for row in report.rows:
        assert row.mean == 0.0
        assert row.var == 0.0
        assert row.ks == 0.0
    assert np.all(report.limit_mean == 0.0)


def test_sweep_rows_and_files(tmp_path):
    cfg = parse_config(_mm1_doc(output={"limit_dt": 1e-3, "limit_paths": 300,
                                        "plot_paths": 2}))
    result = run_scaling_sweep(cfg)
    report = build_report(result)
    # one row per (level, eval time, station)
    assert len(report.rows) == 2 * 2 * 1
    for row in report.rows:
        assert row.n in (4, 16)
        assert row.var >= 0.0
        assert 0.0 <= row.ks <= 1.0
        assert row.ks_critical_1pct == ks_critical(
            result.marginals[row.n].shape[0], cfg.limit_paths, alpha=0.01)
    for key, cov in report.covariances.items():
        assert np.array_equal(cov, cov.T)
    assert report.limit_cov.shape == (2, 1, 1)

    files = emit_report(report, out_dir=str(tmp_path / "out"))
    results = (tmp_path / "out" / "results.csv").read_text().strip().split("\n")
    assert results[0] == "n,t,station,mean,var,ks,ks_critical_1pct"
    assert len(results) == 1 + len(report.rows)
    assert all(line.split(",")[2] == "1" for line in results[1:])

    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["seed_rule"].startswith("SeedSequence")
    assert manifest["levels"] == [4, 16]
    assert manifest["spectral_radius"] == 0.0
    assert manifest["limit_covariance"] == [[2.0]]
    assert manifest["drift_at_origin"] == [0.0]
    assert manifest["exploded"] == {"4": 0, "16": 0}
    from heavyq import __version__
    assert manifest["version"] == __version__

    plot = (tmp_path / "out" / "plot_data.csv").read_text().strip().split("\n")
    assert plot[0] == "n,path,t,x_1"
    assert len(plot) == 1 + 2 * 2 * 257  # levels x paths x grid points
    assert {line.split(",")[1] for line in plot[1:]} == {"0", "1"}


def test_reruns_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg = parse_config(_mm1_doc())
        report = build_report(run_scaling_sweep(cfg))
        files = emit_report(report, out_dir=str(tmp_path / name))
        outputs.append({k: open(v, "rb").read() for k, v in files.items()})
    assert outputs[0] == outputs[1]


def test_run_level_engine_tags_give_disjoint_streams():
    cfg = parse_config(_mm1_doc())
    direct, _, _ = run_level(cfg, 16, engine="direct", replications=100)
    uniformized, _, _ = run_level(cfg, 16, engine="uniformized", replications=100)
    assert direct.shape == uniformized.shape == (100, 2, 1)
    assert not np.array_equal(direct, uniformized)
    again, _, _ = run_level(cfg, 16, engine="direct", replications=100)
    assert np.array_equal(direct, again)


def test_run_level_aborts_when_too_many_replications_explode():
    doc = _mm1_doc()
    doc["scaling"]["convention"] = "rate-absorbed"
    doc["rates"]["arrival_base"] = [{"kind": "constant", "value": 2.0}]
    doc["experiment"]["max_events"] = 30
    cfg = parse_config(doc)
    with pytest.raises(RuntimeError, match="event budget"):
        run_level(cfg, 16, replications=200)
