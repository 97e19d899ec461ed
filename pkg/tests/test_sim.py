import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oran_pcl.control import NodeSliceConfig, SliceParams
from oran_pcl.errors import ContractError, SimulationError
from oran_pcl.forecast import seasonal_naive
from oran_pcl.kpi import DEFAULT_MAPPING, aggregate_cubes
from oran_pcl.rapp import LoopConfig
from oran_pcl.sim import (
    HourDemand,
    LoopComponents,
    RunReport,
    ServiceMetrics,
    compute_service_metrics,
    prb_coefficients,
    read_report_csv,
    round_half_up,
    run_dynamic,
    run_static,
    static_limits,
    step_hour,
)
from oran_pcl.traffic import CellId, split_train_test


def brute_force_metrics(actual, limit):
    # count UE by UE instead of using max()
    under = sum(1 for ue in range(actual) if ue >= limit)
    over = sum(1 for slot in range(limit) if slot >= actual)
    return under, over, under + over


@pytest.mark.parametrize("actual,limit,expected", [(10, 10, (0, 0, 0)), (15, 10, (5, 0, 5)), (4, 10, (0, 6, 6))])
def test_metric_examples(actual, limit, expected):
    assert compute_service_metrics(actual, limit) == expected


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 300), st.integers(0, 300))
def test_metrics_match_brute_force(actual, limit):
    assert compute_service_metrics(actual, limit) == brute_force_metrics(actual, limit)


def test_metrics_reject_negative():
    with pytest.raises(ContractError):
        compute_service_metrics(-1, 3)


@pytest.mark.parametrize("x,expected", [(0.5, 1), (1.49, 1), (2.5, 3), (0.0, 0), (7.999, 8)])
def test_round_half_up(x, expected):
    assert round_half_up(x) == expected


@pytest.fixture(scope="module")
def split(small_dataset):
    return split_train_test(small_dataset, 5 / 7)


def _node(dataset, ues, quota):
    cells = dataset.cells
    sids = tuple(DEFAULT_MAPPING.slice_ids)
    params = {(c, s): SliceParams(ues, quota if ues else 0.0) for c in cells for s in sids}
    return NodeSliceConfig(sids, cells, params)


def test_generous_limits_leave_nobody_unserved(small_dataset):
    demand = HourDemand.from_dataset(small_dataset, 30)
    quota = 100.0 / len(DEFAULT_MAPPING.slice_ids)
    metrics, events = step_hour(demand.hour, _node(small_dataset, 10_000, quota), demand)
    assert all(m.under_served == 0 for m in metrics)
    assert all(m.served_ues == pytest.approx(m.demand_ues) for m in metrics)
    assert len(events) == len(small_dataset.cells)


def test_zero_limit_starves_slice(small_dataset):
    demand = HourDemand.from_dataset(small_dataset, 30)
    metrics, events = step_hour(demand.hour, _node(small_dataset, 0, 0.0), demand)
    for m in metrics:
        assert m.served_ues == 0 and m.served_prb_pct == 0
        assert m.under_served == m.actual_ues
    for ev in events:
        for members in DEFAULT_MAPPING.slices.values():
            for bearer in members:
                assert ev.measurement_fields[f"active_ues_qci{bearer.qci}"] == 0
                assert ev.measurement_fields[f"volume_gb_qci{bearer.qci}"] == 0


def test_step_hour_contract_errors(small_dataset):
    demand = HourDemand.from_dataset(small_dataset, 3)
    with pytest.raises(SimulationError):
        step_hour(demand.hour + 1, _node(small_dataset, 1, 1.0), demand)
    other = NodeSliceConfig(tuple(DEFAULT_MAPPING.slice_ids), (CellId(7, 7),), {})
    with pytest.raises(SimulationError):
        step_hour(demand.hour, other, demand)


def test_static_limit_at_max_demand_only_overserves(split):
    train, test = split
    peak = int(math.ceil(aggregate_cubes(test).active_ues.max())) + 1
    report = run_static(train, test, {s: peak for s in DEFAULT_MAPPING.slice_ids})
    assert all(m.under_served == 0 for m in report.metrics)
    assert report.totals()["total"]["over"] == sum(peak - m.actual_ues for m in report.metrics)


def test_static_run_matches_direct_oracle(split):
    # non-optimal count recomputed straight from the demand cubes
    train, test = split
    report = run_static(train, test)
    tr, te = aggregate_cubes(train), aggregate_cubes(test)
    expected = 0
    for s in range(len(tr.slice_ids)):
        for c in range(len(tr.cells)):
            limit = math.ceil(float(np.mean(tr.active_ues[s, :, c])) - 1e-9)
            for h in range(te.active_ues.shape[1]):
                expected += abs(round_half_up(te.active_ues[s, h, c]) - limit)
    assert report.totals()["total"]["non_optimal"] == expected
    assert len(report.metrics) == test.hours * len(tr.slice_ids) * len(tr.cells)


def test_prb_feasible_every_hour(split):
    train, test = split
    report = run_static(train, test)
    by_cell = {}
    for m in report.metrics:
        assert m.served_prb_pct <= m.prb_quota_pct + 1e-9
        by_cell.setdefault((m.hour, m.cell), 0.0)
        by_cell[(m.hour, m.cell)] += m.prb_quota_pct
    assert max(by_cell.values()) <= 100.0 + 1e-9


def test_totals_are_sums_of_entries(split):
    train, test = split
    report = run_static(train, test)
    t = report.totals()
    rows = read_report_csv(report.to_csv())
    assert t["total"]["non_optimal"] == sum(r["non_optimal"] for r in rows)
    for sid, agg in t["slices"].items():
        assert agg["under"] == sum(r["under"] for r in rows if r["slice"] == sid)
        assert agg["under"] + agg["over"] == agg["non_optimal"]
    assert t["hours"] == test.hours and t["first_hour"] == test.start_hour


def _naive_components(train, season=24):
    cubes = aggregate_cubes(train)
    models = {
        (sid, cell): seasonal_naive(cubes.active_ues[s, :, c], season)
        for s, sid in enumerate(cubes.slice_ids)
        for c, cell in enumerate(cubes.cells)
    }
    return LoopComponents(models, LoopConfig(prb_coefficients(cubes)))


def test_dynamic_replay_is_deterministic(split):
    train, test = split
    a = run_dynamic(train, test, _naive_components(train))
    b = run_dynamic(train, test, _naive_components(train))
    assert a.to_csv() == b.to_csv() and a.audit_csv() == b.audit_csv()
    assert a.totals_json() == b.totals_json()
    assert a.stale_rejections == 0 and a.dead_letters == 0 and not a.fallback_hours


def test_dynamic_beats_static_on_periodic_data(periodic_dataset):
    train, test = split_train_test(periodic_dataset, 0.7)
    components = _naive_components(train)
    components = LoopComponents(components.models, components.config, "demand")
    dyn = run_dynamic(train, test, components).totals()["total"]
    sta = run_static(train, test).totals()["total"]
    assert dyn["under"] == 0
    assert dyn["non_optimal"] < sta["non_optimal"]


def test_dynamic_requires_every_model(split):
    train, test = split
    comp = _naive_components(train)
    partial = dict(list(comp.models.items())[1:])
    with pytest.raises(ContractError):
        run_dynamic(train, test, LoopComponents(partial, comp.config))


def test_short_history_falls_back_to_static(small_dataset):
    # a two-day season cannot be forecast from one day of history
    train, test = small_dataset.slice_hours(0, 24), small_dataset.slice_hours(24, 48)
    comp = _naive_components(train)
    comp = LoopComponents({k: seasonal_naive(None, 48) for k in comp.models}, comp.config)
    report = run_dynamic(train, test, comp)
    assert len(report.fallback_hours) == 24
    static = run_static(train, test)
    assert report.totals()["total"] == static.totals()["total"]


def test_report_files(tmp_path, split):
    train, test = split
    files = run_static(train, test).write(tmp_path)
    assert sorted(files) == ["static_audit.csv", "static_report.csv", "static_totals.json"]
    header = next(csv.reader(io.StringIO((tmp_path / "static_report.csv").read_text())))
    assert header == ["hour", "slice", "enb", "cell", "actual", "limit", "under", "over", "non_optimal"]
    assert json.loads((tmp_path / "static_totals.json").read_text())["mode"] == "static"


def test_static_limits_explicit_and_mean(split):
    train, _ = split
    cubes = aggregate_cubes(train)
    coeff = prb_coefficients(cubes)
    lim = static_limits(cubes, coeff, 0, {"A": 3})
    for (sid, cell), v in lim.items():
        if sid == "A":
            assert v.max_active_ues == 3
        else:
            s, c = cubes.slice_ids.index(sid), cubes.cells.index(cell)
            assert v.max_active_ues == math.ceil(cubes.active_ues[s, :, c].mean() - 1e-9)
    with pytest.raises(ContractError):
        static_limits(cubes, coeff, 0, {"A": -1})


def test_service_metrics_of():
    m = ServiceMetrics.of(1, "A", CellId(0, 0), 15, 10)
    assert (m.under_served, m.over_served, m.non_optimal) == (5, 0, 5)
    assert RunReport("static", [m]).totals()["total"] == {"under": 5, "over": 0, "non_optimal": 5}
