"""SMO-side data collection: VES events in, per-slice KPI series out."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, ContractError, IngestionError
from .traffic import QCI_INDEX, QCIS, BearerClass, CellId, Dataset, KpiSample

VES_KEYS = tuple(
    [f"active_ues_qci{q.qci}" for q in QCIS] + [f"volume_gb_qci{q.qci}" for q in QCIS] + ["dl_prb_util_pct"]
)


@dataclass(frozen=True)
class VesEvent:
    source_name: str
    start_epoch_hour: int
    measurement_fields: Mapping[str, float]

    def to_json(self) -> dict:
        return {
            "event": {
                "commonEventHeader": {"sourceName": self.source_name, "startEpochHour": self.start_epoch_hour},
                "measurementFields": dict(self.measurement_fields),
            }
        }

    @classmethod
    def from_json(cls, doc) -> "VesEvent":
        try:
            event = doc["event"]
            header = event["commonEventHeader"]
            fields = event["measurementFields"]
            return cls(str(header["sourceName"]), int(header["startEpochHour"]), dict(fields))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"malformed VES event: {exc}", doc) from None


@dataclass(frozen=True)
class SliceMapping:
    slices: Mapping[str, frozenset[BearerClass]]

    def __post_init__(self):
        seen: dict[BearerClass, str] = {}
        for sid, members in self.slices.items():
            if not members:
                raise ConfigError(f"slice {sid!r} has no bearer classes")
            for q in members:
                if q in seen:
                    raise ConfigError(f"{q.name} assigned to both {seen[q]!r} and {sid!r}")
                seen[q] = sid
        if set(seen) != set(QCIS):
            missing = sorted(q.name for q in set(QCIS) - set(seen))
            raise ConfigError(f"bearer classes not mapped to any slice: {', '.join(missing)}")

    @classmethod
    def from_qcis(cls, qcis_by_slice: Mapping[str, Iterable[int]]) -> "SliceMapping":
        return cls({sid: frozenset(BearerClass.from_qci(q) for q in qs) for sid, qs in qcis_by_slice.items()})

    @property
    def slice_ids(self) -> list[str]:
        return sorted(self.slices)

    def membership(self) -> np.ndarray:
        """(n_slices, 4) 0/1 matrix in ``slice_ids`` x ``QCIS`` order."""
        m = np.zeros((len(self.slices), len(QCIS)))
        for s, sid in enumerate(self.slice_ids):
            for q in self.slices[sid]:
                m[s, QCI_INDEX[q]] = 1.0
        return m


DEFAULT_MAPPING = SliceMapping(
    {"A": frozenset({BearerClass.QCI1, BearerClass.QCI9}), "B": frozenset({BearerClass.QCI2, BearerClass.QCI5})}
)


@dataclass(frozen=True, eq=False)
class SliceSeries:
    slice_id: str
    cell: CellId
    hour: np.ndarray
    active_ues: np.ndarray
    volume_gb: np.ndarray
    prb_share_pct: np.ndarray

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def __eq__(self, other):
        if not isinstance(other, SliceSeries):
            return NotImplemented
        return (
            self.slice_id == other.slice_id
            and self.cell == other.cell
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("hour", "active_ues", "volume_gb", "prb_share_pct")
            )
        )


CHANNELS = ("active_ues", "volume_gb", "prb_share_pct")


def event_from_samples(samples: list[KpiSample]) -> VesEvent:
    """Pack the four bearer rows of one (hour, cell) into a VES event."""
    fields = {}
    for s in samples:
        fields[f"active_ues_qci{s.qci.qci}"] = s.active_ues
        fields[f"volume_gb_qci{s.qci.qci}"] = s.volume_gb
    fields["dl_prb_util_pct"] = samples[0].dl_prb_util_pct
    ordered = {k: fields[k] for k in VES_KEYS if k in fields}
    return VesEvent(samples[0].cell.name, samples[0].hour, ordered)


def dataset_to_events(dataset: Dataset) -> Iterable[VesEvent]:
    for h in range(dataset.hours):
        for c, cell in enumerate(dataset.cells):
            fields = {}
            for q, qci in enumerate(QCIS):
                fields[f"active_ues_qci{qci.qci}"] = float(dataset.active_ues[h, c, q])
            for q, qci in enumerate(QCIS):
                fields[f"volume_gb_qci{qci.qci}"] = float(dataset.volume_gb[h, c, q])
            fields["dl_prb_util_pct"] = float(dataset.dl_prb_util_pct[h, c])
            yield VesEvent(cell.name, int(dataset.hour_index[h]), fields)


def _field(event, key):
    try:
        value = event.measurement_fields[key]
    except KeyError:
        raise IngestionError(f"{event.source_name}: missing measurement field {key!r}", event) from None
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise IngestionError(f"{event.source_name}: field {key!r} is not numeric", event) from None
    if not math.isfinite(value):
        raise IngestionError(f"{event.source_name}: field {key!r} is not finite", event)
    return value


def ingest_ves_event(event: VesEvent) -> list[KpiSample]:
    """Convert one event to four bearer rows; values pass through unchanged."""
    try:
        cell = CellId.parse(event.source_name)
    except (ValueError, TypeError):
        raise IngestionError(f"malformed sourceName {event.source_name!r}", event) from None
    prb = _field(event, "dl_prb_util_pct")
    if not 0.0 <= prb <= 100.0:
        raise IngestionError(f"{event.source_name}: dl_prb_util_pct {prb} outside [0, 100]", event)
    rows = []
    for qci in QCIS:
        ues = _field(event, f"active_ues_qci{qci.qci}")
        vol = _field(event, f"volume_gb_qci{qci.qci}")
        if ues < 0 or vol < 0:
            raise IngestionError(f"{event.source_name}: negative counter for {qci.name}", event)
        rows.append(KpiSample(event.start_epoch_hour, cell, qci, ues, vol, prb))
    return rows


class Collector:
    """Single-owner VES consumer that accumulates rows and dead-letters bad events."""

    def __init__(self):
        self.rows: dict[tuple[int, CellId], list[KpiSample]] = {}
        self.dead_letters: deque = deque()

    def ingest(self, event: VesEvent) -> bool:
        try:
            rows = ingest_ves_event(event)
        except IngestionError as exc:
            self.dead_letters.append(exc)
            return False
        self.rows[(event.start_epoch_hour, rows[0].cell)] = rows
        return True

    def ingest_line(self, line: str) -> bool:
        try:
            event = VesEvent.from_json(json.loads(line))
        except (IngestionError, json.JSONDecodeError) as exc:
            self.dead_letters.append(exc if isinstance(exc, IngestionError) else IngestionError(str(exc), line))
            return False
        return self.ingest(event)

    def samples(self) -> list[KpiSample]:
        out = []
        for key in sorted(self.rows):
            out.extend(self.rows[key])
        return out

    def to_dataset(self) -> Dataset:
        return samples_to_dataset(self.samples())


def samples_to_dataset(samples: list[KpiSample]) -> Dataset:
    if not samples:
        raise ContractError("no samples")
    hours = sorted({s.hour for s in samples})
    cells = tuple(sorted({s.cell for s in samples}))
    if hours != list(range(hours[0], hours[0] + len(hours))):
        raise ContractError("samples do not form a gapless hour sequence")
    hpos = {h: i for i, h in enumerate(hours)}
    cpos = {c: i for i, c in enumerate(cells)}
    ues = np.full((len(hours), len(cells), len(QCIS)), np.nan)
    vol = np.full_like(ues, np.nan)
    prb = np.full((len(hours), len(cells)), np.nan)
    for s in samples:
        h, c, q = hpos[s.hour], cpos[s.cell], QCI_INDEX[s.qci]
        ues[h, c, q] = s.active_ues
        vol[h, c, q] = s.volume_gb
        prb[h, c] = s.dl_prb_util_pct
    if np.isnan(ues).any():
        raise ContractError("samples do not cover every (hour, cell, qci)")
    return Dataset(hours[0], cells, ues, vol, prb, None)


def volume_share(volume, prb):
    """Volume-proportional attribution with a uniform fallback at zero volume.

    ``volume`` has the bearer axis last; ``prb`` broadcasts against it minus that axis.
    """
    volume = np.asarray(volume, dtype=float)
    prb = np.asarray(prb, dtype=float)
    total = volume.sum(axis=-1, keepdims=True)
    n = volume.shape[-1]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, prb[..., None] * volume / safe, prb[..., None] / n)


# allocator(ues, volume, prb) -> per-bearer PRB share
ALLOCATORS: dict[str, Callable] = {
    "volume": lambda ues, volume, prb: volume_share(volume, prb),
    "ue": lambda ues, volume, prb: volume_share(ues, prb),
}


def per_bearer_prb_share(samples_at_hour: list[KpiSample]) -> dict[BearerClass, float]:
    if len(samples_at_hour) != len(QCIS):
        raise ContractError(f"expected {len(QCIS)} samples, got {len(samples_at_hour)}")
    qcis = [s.qci for s in samples_at_hour]
    if len(set(qcis)) != len(qcis):
        raise ContractError("duplicate QCI in per-hour samples")
    if len({(s.hour, s.cell) for s in samples_at_hour}) != 1:
        raise ContractError("samples do not share hour and cell")
    ordered = sorted(samples_at_hour, key=lambda s: QCI_INDEX[s.qci])
    shares = volume_share([s.volume_gb for s in ordered], ordered[0].dl_prb_util_pct)
    return {s.qci: float(v) for s, v in zip(ordered, shares)}


@dataclass(frozen=True, eq=False)
class SliceCubes:
    """Per-slice aggregates as (n_slices, hours, cells) arrays."""

    slice_ids: list[str]
    cells: tuple[CellId, ...]
    hour: np.ndarray
    active_ues: np.ndarray
    volume_gb: np.ndarray
    prb_share_pct: np.ndarray

    def series(self) -> list[SliceSeries]:
        out = []
        for s, sid in enumerate(self.slice_ids):
            for c, cell in enumerate(self.cells):
                out.append(
                    SliceSeries(
                        sid,
                        cell,
                        self.hour.copy(),
                        self.active_ues[s, :, c].copy(),
                        self.volume_gb[s, :, c].copy(),
                        self.prb_share_pct[s, :, c].copy(),
                    )
                )
        return out

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)


def aggregate_cubes(dataset: Dataset, mapping: SliceMapping = DEFAULT_MAPPING, allocator: str = "volume") -> SliceCubes:
    try:
        allocate = ALLOCATORS[allocator]
    except KeyError:
        raise ConfigError(f"unknown PRB allocator {allocator!r}") from None
    shares = allocate(dataset.active_ues, dataset.volume_gb, dataset.dl_prb_util_pct)
    m = mapping.membership()
    # sum over bearer axis per slice -> (slices, hours, cells)
    agg = lambda cube: np.einsum("sq,hcq->shc", m, cube)
    return SliceCubes(
        mapping.slice_ids,
        dataset.cells,
        dataset.hour_index.copy(),
        agg(dataset.active_ues),
        agg(dataset.volume_gb),
        agg(shares),
    )


def tag_and_aggregate(dataset: Dataset, mapping: SliceMapping = DEFAULT_MAPPING, allocator: str = "volume") -> list[SliceSeries]:
    return aggregate_cubes(dataset, mapping, allocator).series()
