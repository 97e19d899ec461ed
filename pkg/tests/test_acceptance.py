"""Acceptance criteria, one test each (criterion 1 has two). Every test records a PASS/FAIL line.

Slow: the whole module takes about 7 minutes on one core.
"""

import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from hypothesis import strategies as st

from gradcheck import numeric_gradients, relative_error, tiny_problem
from oran_pcl.cli import main
from oran_pcl.experiment import cmd_compare, cmd_train, execute_run, format_accuracy_table, prepare
from oran_pcl.forecast import accuracy, lstm, seasonal_naive
from oran_pcl.kpi import DEFAULT_MAPPING, aggregate_cubes
from oran_pcl.rapp import LoopConfig
from oran_pcl.scenario import load_scenario, parse_scenario
from oran_pcl.sim import LoopComponents, prb_coefficients, run_dynamic, run_static
from oran_pcl.traffic import QCI_INDEX, GeneratorConfig, generate_synthetic_dataset
from protocol_checks import (
    a1_descriptors,
    check_composition,
    check_e2_sequence,
    check_o2_sequence,
    check_round_trip,
    composition_cases,
    e2_messages,
    o2_directives,
    run_property,
    ves_events,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
TIME_BUDGET_S = 300.0
RATIO_MAX = 0.6
LSTM_MIN_ACC = 80.0
NAIVE_SLACK = 5.0
GRAD_TOL = 1e-4


def _default(tmp_path, **update):
    s = load_scenario(SCENARIOS / "default.json", output_dir=str(tmp_path))
    return s.model_copy(update=update) if update else s


def test_criterion_1_default_compare(tmp_path, verdict):
    scenario = _default(tmp_path)
    t0 = time.perf_counter()
    result = cmd_compare(scenario, tmp_path)
    elapsed = time.perf_counter() - t0
    s_no = result.totals["static"]["total"]["non_optimal"]
    d_no = result.totals["dynamic"]["total"]["non_optimal"]
    ratio = result.totals["ratio"]
    ok = verdict(
        "1a",
        elapsed < TIME_BUDGET_S and ratio <= RATIO_MAX,
        f"default compare took {elapsed:.1f}s (< {TIME_BUDGET_S:.0f}s); static={s_no} dynamic={d_no} ratio={ratio:.3f} (<= {RATIO_MAX})",
    )
    assert ok


def test_criterion_1_direction_over_seeds(tmp_path, verdict):
    ratios = {}
    for seed in range(1, 11):
        scenario = _default(tmp_path / str(seed), seed=seed)
        prep = prepare(scenario)
        s = execute_run(scenario, tmp_path / str(seed), "static", prep).totals()["total"]["non_optimal"]
        d = execute_run(scenario, tmp_path / str(seed), "dynamic", prep).totals()["total"]["non_optimal"]
        ratios[seed] = (s, d)
    worse = [k for k, (s, d) in ratios.items() if not d < s]
    detail = " ".join(f"{k}:{d}/{s}" for k, (s, d) in ratios.items())
    ok = verdict("1b", not worse, f"dynamic < static for seeds 1..10 (dynamic/static: {detail})")
    assert ok, f"direction fails for seeds {worse}"


def test_criterion_2_forecaster_table(tmp_path, verdict):
    result = cmd_train(_default(tmp_path), tmp_path)
    print(format_accuracy_table(result.table))
    acc = {r["model"]: r["test_accuracy_pct"] for r in result.table if r["channel"] == "active_ues"}
    vs_naive = acc["lstm"] >= acc["seasonal_naive"] - NAIVE_SLACK
    absolute = acc["lstm"] >= LSTM_MIN_ACC
    summary = f"active_ues test accuracy lstm={acc['lstm']:.2f}% arima={acc['arima']:.2f}% naive={acc['seasonal_naive']:.2f}%"
    verdict("2a", vs_naive, f"{summary}; lstm >= naive - {NAIVE_SLACK:.0f}")
    verdict("2b", absolute, f"lstm {acc['lstm']:.2f}% >= {LSTM_MIN_ACC:.0f}%")
    # reported, not gating
    print(f"[INFO] lstm >= arima on seed 42: {acc['lstm'] >= acc['arima']}")
    print(f"[INFO] noise-free mean as predictor: {_noise_free_ceiling(tmp_path):.2f}% test accuracy on active_ues")
    assert vs_naive and absolute


def _noise_free_ceiling(tmp_path):
    """Accuracy of a predictor that knows the exact noise-free level; no forecaster can expect more."""
    scenario = _default(tmp_path)
    prep = prepare(scenario)
    # same seed, so cell loads match; only the noise draw is zeroed
    clean = generate_synthetic_dataset(replace(scenario.generator_config(), sigma=0.0))
    levels = aggregate_cubes(clean, scenario.mapping, scenario.allocator).active_ues
    scores = []
    for (s, c), noisy in zip(np.ndindex(levels.shape[0], levels.shape[2]), prep.series("active_ues")):
        level = levels[s, :, c]
        scores.append(accuracy(level[prep.n_train :], noisy[prep.n_train :], noisy, scenario.tolerance_frac).accuracy_pct)
    return float(np.mean(scores))


def test_criterion_3_gradient_oracle(verdict):
    errors = []
    for seed in range(100):
        activation = "relu" if seed % 2 == 0 else "tanh"
        params, X, Y = tiny_problem(seed, activation, layers=1 + seed % 2, units=2 + seed % 3, horizon=1 + seed % 2)
        errors.append(relative_error(lstm.lstm_gradients(params, X, Y, activation), numeric_gradients(params, X, Y, activation)))
    worst = max(errors)
    ok = verdict("3", worst <= GRAD_TOL, f"100 tiny models, worst relative error {worst:.2e} (<= {GRAD_TOL:.0e})")
    assert ok


def test_criterion_4_zero_noise(tmp_path, verdict):
    scenario = load_scenario(SCENARIOS / "zero_noise.json", output_dir=str(tmp_path))
    table = cmd_train(scenario, tmp_path).table
    naive = next(r for r in table if r["channel"] == "active_ues" and r["model"] == "seasonal_naive")
    report = execute_run(scenario, tmp_path, "dynamic")
    t = report.totals()
    per_entry = t["total"]["non_optimal"] / len(report.metrics)
    per_series_hour = t["total"]["non_optimal"] / t["hours"] / (len(report.metrics) // t["hours"])
    ok = verdict(
        "4",
        naive["test_min_pct"] == 100.0 and naive["train_accuracy_pct"] == 100.0 and per_entry < 1.0,
        f"naive accuracy min {naive['test_min_pct']:.1f}% (== 100); dynamic non_optimal {t['total']['non_optimal']}"
        f" over {len(report.metrics)} slice-cell-hours = {per_series_hour:.3f} per hour (< 1)",
    )
    assert ok


def _brute_force(dataset, n_train, limit_of):
    """Recount every (hour, slice, cell) UE by UE from the raw bearer series."""
    out = {}
    for pos in range(n_train, dataset.hours):
        hour = int(dataset.hour_index[pos])
        for c, cell in enumerate(dataset.cells):
            for sid, members in DEFAULT_MAPPING.slices.items():
                demand = 0.0
                for bearer in members:
                    demand += float(dataset.active_ues[pos, c, QCI_INDEX[bearer]])
                actual = int(math.floor(demand + 0.5))
                limit = limit_of(sid, c, pos)
                under = sum(1 for ue in range(actual) if ue >= limit)
                over = sum(1 for slot in range(limit) if slot >= actual)
                out[(hour, sid, cell)] = (actual, limit, under, over, under + over)
    return out


def _slice_demand(dataset, sid, c, pos):
    return sum(float(dataset.active_ues[pos, c, QCI_INDEX[b]]) for b in DEFAULT_MAPPING.slices[sid])


def _ceil(x):
    return max(0, math.ceil(x - 1e-9 * max(1.0, abs(x))))


def test_criterion_5_metric_oracle(verdict):
    mismatches, entries = [], 0
    for i in range(20):
        rng = np.random.default_rng(500 + i)
        cfg = GeneratorConfig(
            n_enb=int(rng.integers(1, 3)),
            cells_per_enb=int(rng.integers(1, 4)),
            days=int(rng.integers(3, 7)),
            seed=int(rng.integers(0, 10**6)),
            sigma=float(rng.uniform(0, 0.2)),
            weekend_dip=float(rng.uniform(0, 0.3)),
        )
        dataset = generate_synthetic_dataset(cfg)
        n_train = 24 * int(rng.integers(1, cfg.days - 1)) + int(rng.integers(0, 24))
        train, test = dataset.slice_hours(0, n_train), dataset.slice_hours(n_train, dataset.hours)
        allocator = str(rng.choice(["volume", "ue"]))
        cubes = aggregate_cubes(train, allocator=allocator)
        if i % 2 == 0:
            explicit = {"A": int(rng.integers(0, 40))} if rng.random() < 0.5 else None
            report = run_static(train, test, explicit, allocator=allocator)

            def limit_of(sid, c, pos, explicit=explicit):
                if explicit and sid in explicit:
                    return explicit[sid]
                return _ceil(sum(_slice_demand(dataset, sid, c, p) for p in range(n_train)) / n_train)

        else:
            margin = float(rng.uniform(0, 0.3))
            models = {
                (sid, cell): seasonal_naive(cubes.active_ues[s, :, c], 24)
                for s, sid in enumerate(cubes.slice_ids)
                for c, cell in enumerate(cubes.cells)
            }
            config = LoopConfig(prb_coefficients(cubes), margin=margin)
            report = run_dynamic(train, test, LoopComponents(models, config, "demand"), allocator=allocator)

            def limit_of(sid, c, pos, margin=margin):
                return _ceil(_slice_demand(dataset, sid, c, pos - 24) * (1 + margin))

        expected = _brute_force(dataset, n_train, limit_of)
        got = {
            (m.hour, m.slice_id, m.cell): (m.actual_ues, m.limit_ues, m.under_served, m.over_served, m.non_optimal)
            for m in report.metrics
        }
        entries += len(expected)
        if got != expected:
            mismatches.append(i)
    ok = verdict("5", not mismatches, f"20 random scenarios, {entries} slice-cell-hours vs brute force; mismatching scenarios: {mismatches}")
    assert ok


def test_criterion_6_protocol_properties(verdict):
    counts = {
        "a1": run_property(check_round_trip, a1_descriptors(), 2500),
        "e2": run_property(check_round_trip, e2_messages(), 2500),
        "o2": run_property(check_round_trip, o2_directives(), 2500),
        "ves": run_property(check_round_trip, ves_events(), 2500),
    }
    trips = sum(counts.values())
    sequences = run_property(check_e2_sequence, st.lists(e2_messages(), min_size=1, max_size=40), 1000)
    compositions = run_property(check_composition, composition_cases(), 1000)
    cloud = run_property(check_o2_sequence, st.lists(o2_directives(), min_size=1, max_size=30), 500)
    ok = verdict(
        "6",
        trips >= 10_000 and compositions >= 1000,
        f"{trips} lossless round-trips {counts}; {sequences} E2 apply sequences conserve quota and versions;"
        f" {compositions} compositions hit target; {cloud} O2 sequences match reference",
    )
    assert ok


def _small_lstm_config(tmp_path):
    doc = {
        "seed": 7,
        "dataset": {"generator": {"n_enb": 1, "cells_per_enb": 2, "days": 10}},
        "forecaster": {
            "kind": "lstm",
            "lstm": {"units": 8, "epochs": 10, "learning_rate": 0.01},
            "arima_orders": [{"p": 1, "s": 24}, {"p": 2, "s": 24}],
        },
    }
    parse_scenario(doc)
    path = tmp_path / "small.json"
    path.write_text(json.dumps(doc))
    return path


def test_criterion_7_determinism(tmp_path, verdict):
    cfg = _small_lstm_config(tmp_path)
    commands = (["generate"], ["train"], ["run", "--mode", "static"], ["run", "--mode", "dynamic"], ["compare"])
    for name in ("a", "b"):
        for cmd in commands:
            assert main([*cmd, "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    differing = [str(f) for f in files_a if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    n_models = sum(1 for f in files_a if f.parts[0] == "models")
    ok = verdict(
        "7",
        files_a == files_b and not differing,
        f"generate/train/run/compare twice: {len(files_a)} files ({n_models} model files) byte-identical; differing: {differing}",
    )
    assert ok
