"""Slice-aware cell simulation, service metrics, and static/dynamic run drivers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .atomic import atomic_write_text
from .control import (
    E2NodeAgent,
    Inbox,
    NearRtRic,
    NodeSliceConfig,
    OCloud,
    a1_publish,
    decode_frame,
    publish,
)
from .errors import ContractError, LoopError, SimulationError
from .forecast import ForecastModel
from .kpi import ALLOCATORS, DEFAULT_MAPPING, Collector, SliceCubes, SliceMapping, VesEvent, aggregate_cubes, samples_to_dataset
from .rapp import (
    AdaptiveLimit,
    LoopConfig,
    SliceState,
    closed_loop_step,
    cloud_directives,
    compute_adaptive_limit,
    derive_prb_quota,
    descriptors_for,
    estimate_prb_per_ue,
    rescale_quotas,
    state_after,
)
from .traffic import QCIS, CellId, Dataset

REPORT_HEADER = ("hour", "slice", "enb", "cell", "actual", "limit", "under", "over", "non_optimal")
AUDIT_HEADER = ("hour", "slice", "enb", "cell", "demand_ues", "served_ues", "prb_quota_pct", "served_prb_pct", "source")
FEEDBACK = ("served", "demand")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_service_metrics(actual_ues: int, limit_ues: int) -> tuple[int, int, int]:
    if actual_ues < 0 or limit_ues < 0:
        raise ContractError(f"actual ({actual_ues}) and limit ({limit_ues}) must be >= 0")
    under = max(actual_ues - limit_ues, 0)
    over = max(limit_ues - actual_ues, 0)
    return under, over, under + over


@dataclass(frozen=True)
class ServiceMetrics:
    hour: int
    slice_id: str
    cell: CellId
    actual_ues: int
    limit_ues: int
    under_served: int
    over_served: int
    non_optimal: int
    # audit fields, not part of the metric identity
    demand_ues: float = 0.0
    served_ues: float = 0.0
    prb_quota_pct: float = 0.0
    served_prb_pct: float = 0.0

    @classmethod
    def of(cls, hour, slice_id, cell, actual, limit, **audit) -> "ServiceMetrics":
        return cls(hour, slice_id, cell, actual, limit, *compute_service_metrics(actual, limit), **audit)


@dataclass(frozen=True, eq=False)
class HourDemand:
    """Raw per-bearer demand of every cell for one hour."""

    hour: int
    cells: tuple[CellId, ...]
    active_ues: np.ndarray  # (cells, 4)
    volume_gb: np.ndarray  # (cells, 4)
    dl_prb_util_pct: np.ndarray  # (cells,)

    @classmethod
    def from_dataset(cls, dataset: Dataset, position: int) -> "HourDemand":
        return cls(
            int(dataset.hour_index[position]),
            dataset.cells,
            dataset.active_ues[position],
            dataset.volume_gb[position],
            dataset.dl_prb_util_pct[position],
        )


def step_hour(
    hour: int,
    node_config: NodeSliceConfig,
    demand: HourDemand,
    mapping: SliceMapping = DEFAULT_MAPPING,
    allocator: str = "volume",
) -> tuple[list[ServiceMetrics], list[VesEvent]]:
    """Serve one hour of demand under ``node_config``.

    Admitted UEs are capped by the slice limit and PRBs by the slice quota.
    VES events report the served KPIs, split back to bearers in the demand mix.
    """
    if demand.hour != hour:
        raise SimulationError(f"demand is for hour {demand.hour}, stepping hour {hour}")
    missing_slices = set(node_config.slice_ids) - set(mapping.slices)
    if missing_slices:
        raise SimulationError(f"no demand mapping for slices {sorted(missing_slices)}")
    cpos = {c: i for i, c in enumerate(demand.cells)}
    missing_cells = [c for c in node_config.cells if c not in cpos]
    if missing_cells:
        raise SimulationError(f"hour {hour}: no demand for cells {[c.name for c in missing_cells]}")
    shares = ALLOCATORS[allocator](demand.active_ues, demand.volume_gb, demand.dl_prb_util_pct)
    m = mapping.membership()
    order = mapping.slice_ids
    metrics: list[ServiceMetrics] = []
    events: list[VesEvent] = []
    for cell in node_config.cells:
        c = cpos[cell]
        ues_q = np.asarray(demand.active_ues[c], dtype=float)
        vol_q = np.asarray(demand.volume_gb[c], dtype=float)
        ue_frac = np.ones(len(QCIS))
        vol_frac = np.ones(len(QCIS))
        served_prb_total = 0.0
        for sid in node_config.slice_ids:
            row = m[order.index(sid)]
            d_ues = float(row @ ues_q)
            d_prb = float(row @ shares[c])
            params = node_config.get(cell, sid)
            served_ues = min(d_ues, float(params.max_active_ues))
            served_prb = min(d_prb, params.prb_quota_pct)
            f_ues = served_ues / d_ues if d_ues > 0 else 1.0
            f_prb = served_prb / d_prb if d_prb > 0 else 1.0
            ue_frac = np.where(row > 0, f_ues, ue_frac)
            vol_frac = np.where(row > 0, min(f_ues, f_prb), vol_frac)
            served_prb_total += served_prb
            metrics.append(
                ServiceMetrics.of(
                    hour,
                    sid,
                    cell,
                    round_half_up(d_ues),
                    params.max_active_ues,
                    demand_ues=d_ues,
                    served_ues=served_ues,
                    prb_quota_pct=params.prb_quota_pct,
                    served_prb_pct=served_prb,
                )
            )
        fields = {}
        for q, qci in enumerate(QCIS):
            fields[f"active_ues_qci{qci.qci}"] = float(ues_q[q] * ue_frac[q])
        for q, qci in enumerate(QCIS):
            fields[f"volume_gb_qci{qci.qci}"] = float(vol_q[q] * vol_frac[q])
        fields["dl_prb_util_pct"] = float(min(served_prb_total, 100.0))
        events.append(VesEvent(cell.name, hour, fields))
    return metrics, events


# -- reports ------------------------------------------------------------------


@dataclass
class RunReport:
    mode: str
    metrics: list[ServiceMetrics] = field(default_factory=list)
    fallback_hours: list[int] = field(default_factory=list)
    stale_rejections: int = 0
    dead_letters: int = 0

    def totals(self) -> dict:
        per_slice: dict[str, dict[str, int]] = {}
        for m in self.metrics:
            t = per_slice.setdefault(m.slice_id, {"under": 0, "over": 0, "non_optimal": 0})
            t["under"] += m.under_served
            t["over"] += m.over_served
            t["non_optimal"] += m.non_optimal
        grand = {k: sum(t[k] for t in per_slice.values()) for k in ("under", "over", "non_optimal")}
        hours = sorted({m.hour for m in self.metrics})
        return {
            "mode": self.mode,
            "hours": len(hours),
            "first_hour": hours[0] if hours else None,
            "last_hour": hours[-1] if hours else None,
            "slices": {k: per_slice[k] for k in sorted(per_slice)},
            "total": grand,
            "fallback_hours": len(self.fallback_hours),
            "stale_rejections": self.stale_rejections,
            "dead_letters": self.dead_letters,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for m in self.metrics:
            w.writerow(
                (m.hour, m.slice_id, m.cell.enb_index, m.cell.cell_index, m.actual_ues, m.limit_ues, m.under_served, m.over_served, m.non_optimal)
            )
        return buf.getvalue()

    def audit_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        fallback = set(self.fallback_hours)
        for m in self.metrics:
            source = "static" if self.mode == "static" or m.hour in fallback else "forecast"
            w.writerow(
                (m.hour, m.slice_id, m.cell.enb_index, m.cell.cell_index, repr(m.demand_ues), repr(m.served_ues), repr(m.prb_quota_pct), repr(m.served_prb_pct), source)
            )
        return buf.getvalue()

    def totals_json(self) -> str:
        return json.dumps(self.totals(), indent=2, sort_keys=True) + "\n"

    def write(self, directory, prefix: str | None = None) -> dict[str, str]:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.mode
        files = {
            f"{prefix}_report.csv": self.to_csv(),
            f"{prefix}_totals.json": self.totals_json(),
            f"{prefix}_audit.csv": self.audit_csv(),
        }
        for name, text in files.items():
            atomic_write_text(directory / name, text)
        return files


def read_report_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: (v if k == "slice" else int(v)) for k, v in r.items()} for r in rows]


# -- run drivers ----------------------------------------------------------------


def prb_coefficients(train: SliceCubes) -> dict[tuple[str, CellId], float]:
    return {
        (sid, cell): estimate_prb_per_ue(train.prb_share_pct[s, :, c], train.active_ues[s, :, c])
        for s, sid in enumerate(train.slice_ids)
        for c, cell in enumerate(train.cells)
    }


def static_limits(
    train: SliceCubes,
    prb_per_ue: Mapping[tuple[str, CellId], float],
    hour: int,
    explicit: Mapping[str, int] | None = None,
    cell_cap_pct: float = 100.0,
) -> dict[tuple[str, CellId], AdaptiveLimit]:
    """Constant per-(slice, cell) limits: explicit per-slice values or ceil(training mean)."""
    explicit = explicit or {}
    out = {}
    for c, cell in enumerate(train.cells):
        ues = {}
        for s, sid in enumerate(train.slice_ids):
            if sid in explicit:
                if explicit[sid] < 0:
                    raise ContractError(f"static limit for slice {sid!r} must be >= 0")
                ues[sid] = int(explicit[sid])
            else:
                ues[sid] = compute_adaptive_limit(float(np.mean(train.active_ues[s, :, c])))
        quotas = rescale_quotas(
            {sid: derive_prb_quota(u, prb_per_ue[(sid, cell)], cell_cap_pct) for sid, u in ues.items()}, cell_cap_pct
        )
        for sid in train.slice_ids:
            out[(sid, cell)] = AdaptiveLimit(sid, cell, hour, ues[sid], quotas[sid])
    return out


@dataclass
class LoopComponents:
    models: Mapping[tuple[str, CellId], ForecastModel]
    config: LoopConfig
    feedback: str = "served"

    def __post_init__(self):
        if self.feedback not in FEEDBACK:
            raise ContractError(f"feedback must be one of {FEEDBACK}")


class _Harness:
    """Owns every component and drains their inboxes in a fixed order each hour."""

    def __init__(self, train: Dataset, test: Dataset, mapping: SliceMapping, allocator: str, capacity: int):
        if train.cells != test.cells:
            raise ContractError("train and test datasets cover different cells")
        if train.start_hour + train.hours != test.start_hour:
            raise ContractError("test period must follow the training period directly")
        self.train, self.test = train, test
        self.mapping, self.allocator = mapping, allocator
        self.train_cubes = aggregate_cubes(train, mapping, allocator)
        self.test_cubes = aggregate_cubes(test, mapping, allocator)
        self.cells = train.cells
        self.slice_ids = tuple(mapping.slice_ids)
        self.ric = NearRtRic(Inbox(capacity))
        self.node = E2NodeAgent(NodeSliceConfig.empty(self.slice_ids, self.cells), Inbox(capacity))
        self.cloud = OCloud(inbox=Inbox(capacity))
        self.o1 = Inbox(capacity)
        self.collector = Collector()
        self.current = {(s, c): SliceState(s, c) for s in self.slice_ids for c in self.cells}

    def deliver(self, descriptors, directives):
        for d in descriptors:
            a1_publish(d, self.ric.inbox)
            key = (d.slice_id, d.cells[0])
            self.current[key] = state_after(self.current[key], d)
        for d in directives:
            publish(d, self.cloud.inbox)
        self.ric.process(self.node.config, self.node.inbox)
        self.node.process()
        self.cloud.process()

    def serve(self, position: int) -> list[ServiceMetrics]:
        demand = HourDemand.from_dataset(self.test, position)
        metrics, events = step_hour(demand.hour, self.node.config, demand, self.mapping, self.allocator)
        for ev in events:
            publish(ev, self.o1)
        while (frame := self.o1.get()) is not None:
            self.collector.ingest(decode_frame(frame))
        return metrics

    def observed_cubes(self, hour: int) -> SliceCubes:
        rows = [s for c in self.cells for s in self.collector.rows.get((hour, c), [])]
        if len(rows) != len(self.cells) * len(QCIS):
            raise SimulationError(f"hour {hour}: collector holds {len(rows)} rows")
        return aggregate_cubes(samples_to_dataset(rows), self.mapping, self.allocator)

    def report(self, mode, metrics, fallback=()):
        stale = len(self.node.stale)
        return RunReport(mode, metrics, list(fallback), stale, len(self.collector.dead_letters))


def run_static(
    train: Dataset,
    test: Dataset,
    static: Mapping[str, int] | None = None,
    mapping: SliceMapping = DEFAULT_MAPPING,
    allocator: str = "volume",
    loop_config: LoopConfig | None = None,
    capacity: int = 1024,
) -> RunReport:
    h = _Harness(train, test, mapping, allocator, capacity)
    coeff = loop_config.prb_per_ue if loop_config else prb_coefficients(h.train_cubes)
    cfg = loop_config or LoopConfig(coeff)
    limits = static_limits(h.train_cubes, coeff, test.start_hour, static, cfg.cell_cap_pct)
    means = {k: float(lim.max_active_ues) for k, lim in limits.items()}
    h.deliver(descriptors_for(limits, h.current, cfg.plmn_id), cloud_directives(test.start_hour, means, cfg))
    metrics = []
    for i in range(test.hours):
        metrics.extend(h.serve(i))
    return h.report("static", metrics)


def run_dynamic(
    train: Dataset,
    test: Dataset,
    components: LoopComponents,
    static: Mapping[str, int] | None = None,
    mapping: SliceMapping = DEFAULT_MAPPING,
    allocator: str = "volume",
    capacity: int = 1024,
) -> RunReport:
    """Replay the closed loop hour by hour over the test period.

    History starts as the aggregated training data and grows by what the
    collector observes. Hours where the loop cannot forecast use static limits.
    """
    h = _Harness(train, test, mapping, allocator, capacity)
    for sid in h.slice_ids:
        for cell in h.cells:
            if (sid, cell) not in components.models:
                raise ContractError(f"no trained model for slice {sid!r} at {cell}")
    cfg = components.config
    fallback_limits = static_limits(h.train_cubes, cfg.prb_per_ue, test.start_hour, static, cfg.cell_cap_pct)
    total = train.hours + test.hours
    n_s, n_c = len(h.slice_ids), len(h.cells)
    hist = {name: np.zeros((n_s, total, n_c)) for name in ("active_ues", "volume_gb", "prb_share_pct")}
    for name, arr in hist.items():
        arr[:, : train.hours] = getattr(h.train_cubes, name)
    hours = np.arange(train.start_hour, train.start_hour + total)

    metrics, fallback = [], []
    for i in range(test.hours):
        hour = test.start_hour + i
        end = train.hours + i
        history = SliceCubes(list(h.slice_ids), h.cells, hours[:end], *(hist[n][:, :end] for n in ("active_ues", "volume_gb", "prb_share_pct")))
        try:
            descriptors, directives = closed_loop_step(hour, history, components.models, cfg, h.current)
        except LoopError:
            fallback.append(hour)
            limits = {k: AdaptiveLimit(k[0], k[1], hour, v.max_active_ues, v.prb_quota_pct) for k, v in fallback_limits.items()}
            means = {k: float(v.max_active_ues) for k, v in limits.items()}
            descriptors = descriptors_for(limits, h.current, cfg.plmn_id)
            directives = cloud_directives(hour, means, cfg)
        h.deliver(descriptors, directives)
        metrics.extend(h.serve(i))
        source = h.observed_cubes(hour) if components.feedback == "served" else h.test_cubes
        col = 0 if components.feedback == "served" else i
        for name, arr in hist.items():
            arr[:, end] = getattr(source, name)[:, col]
    return h.report("dynamic", metrics, fallback)
