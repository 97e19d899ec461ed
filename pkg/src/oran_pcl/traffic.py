"""KPI dataset schema, seeded synthetic traffic, CSV I/O and chronological splits.

A dataset is held as dense hour x cell x bearer cubes rather than a list of
row objects; ``Dataset.samples()`` yields the row view when one is needed.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ParseError, RangeError


class BearerClass(enum.Enum):
    QCI1 = 1
    QCI2 = 2
    QCI5 = 5
    QCI9 = 9

    @property
    def qci(self) -> int:
        return self.value

    @property
    def service_label(self) -> str:
        return _SERVICE_LABELS[self]

    @classmethod
    def from_qci(cls, qci: int) -> "BearerClass":
        try:
            return cls(int(qci))
        except ValueError:
            raise ValueError(f"unknown QCI {qci!r}") from None


_SERVICE_LABELS = {
    BearerClass.QCI1: "conversational voice",
    BearerClass.QCI2: "live video streaming",
    BearerClass.QCI5: "IMS signalling",
    BearerClass.QCI9: "buffered video streaming",
}

# column order of the bearer axis in every cube
QCIS: tuple[BearerClass, ...] = (BearerClass.QCI1, BearerClass.QCI2, BearerClass.QCI5, BearerClass.QCI9)
QCI_INDEX = {q: i for i, q in enumerate(QCIS)}

_CELL_RE = re.compile(r"^enb(\d+)-cell(\d+)$")


@dataclass(frozen=True, order=True)
class CellId:
    enb_index: int
    cell_index: int

    @property
    def name(self) -> str:
        return f"enb{self.enb_index}-cell{self.cell_index}"

    @classmethod
    def parse(cls, text: str) -> "CellId":
        m = _CELL_RE.match(text)
        if not m:
            raise ValueError(f"malformed cell name {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class KpiSample:
    hour: int
    cell: CellId
    qci: BearerClass
    active_ues: float
    volume_gb: float
    dl_prb_util_pct: float


@dataclass(frozen=True)
class QciProfile:
    """Per-bearer traffic shape: level, two diurnal harmonics and per-UE load."""

    qci: BearerClass
    base_ues: float
    daily_amp: float
    daily_peak_hour: float
    half_daily_amp: float
    half_daily_peak_hour: float
    gb_per_ue: float
    prb_pct_per_ue: float

    def diurnal(self, hour_of_day):
        h = np.asarray(hour_of_day, dtype=float)
        shape = (
            1.0
            + self.daily_amp * np.cos(2 * np.pi * (h - self.daily_peak_hour) / 24.0)
            + self.half_daily_amp * np.cos(4 * np.pi * (h - self.half_daily_peak_hour) / 24.0)
        )
        return np.maximum(shape, 0.02)


DEFAULT_PROFILES: tuple[QciProfile, ...] = (
    QciProfile(BearerClass.QCI1, 6.0, 0.55, 18.0, 0.20, 11.0, 0.004, 0.40),
    QciProfile(BearerClass.QCI2, 3.0, 0.60, 20.0, 0.15, 14.0, 0.120, 2.00),
    QciProfile(BearerClass.QCI5, 12.0, 0.35, 15.0, 0.10, 9.0, 0.0003, 0.05),
    QciProfile(BearerClass.QCI9, 20.0, 0.60, 21.0, 0.20, 13.0, 0.090, 1.20),
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_enb: int = 2
    cells_per_enb: int = 3
    days: int = 31
    seed: int = 42
    sigma: float = 0.05
    weekend_dip: float = 0.1
    per_qci_profile: tuple[QciProfile, ...] = DEFAULT_PROFILES
    cell_load_range: tuple[float, float] = (0.6, 1.4)

    def validate(self):
        if self.n_enb < 1 or self.cells_per_enb < 1:
            raise ConfigError("n_enb and cells_per_enb must be >= 1")
        if self.days < 2:
            raise ConfigError("days must be >= 2")
        if self.seed is None:
            raise ConfigError("seed is required")
        if not 0 <= self.sigma < 1:
            raise ConfigError("sigma must lie in [0, 1)")
        if not 0 <= self.weekend_dip < 1:
            raise ConfigError("weekend_dip must lie in [0, 1)")
        lo, hi = self.cell_load_range
        if not 0 < lo <= hi:
            raise ConfigError("cell_load_range must satisfy 0 < low <= high")
        if sorted(p.qci.qci for p in self.per_qci_profile) != [q.qci for q in QCIS]:
            raise ConfigError("per_qci_profile must define each of QCI1, QCI2, QCI5, QCI9 once")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Gapless hourly KPI cubes.

    ``active_ues`` and ``volume_gb`` are (hours, cells, 4) in ``QCIS`` order;
    ``dl_prb_util_pct`` is (hours, cells) since it is a cell-level counter.
    """

    start_hour: int
    cells: tuple[CellId, ...]
    active_ues: np.ndarray
    volume_gb: np.ndarray
    dl_prb_util_pct: np.ndarray
    seed: int | None = None
    hour_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hour_index", self.start_hour + np.arange(self.active_ues.shape[0]))
        for arr in (self.active_ues, self.volume_gb, self.dl_prb_util_pct):
            arr.setflags(write=False)

    @property
    def hours(self) -> int:
        return int(self.active_ues.shape[0])

    @property
    def n_samples(self) -> int:
        return self.hours * len(self.cells) * len(QCIS)

    def __len__(self):
        return self.n_samples

    def samples(self) -> Iterator[KpiSample]:
        for h in range(self.hours):
            for c, cell in enumerate(self.cells):
                for q, qci in enumerate(QCIS):
                    yield KpiSample(
                        int(self.hour_index[h]),
                        cell,
                        qci,
                        float(self.active_ues[h, c, q]),
                        float(self.volume_gb[h, c, q]),
                        float(self.dl_prb_util_pct[h, c]),
                    )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.start_hour == other.start_hour
            and self.cells == other.cells
            and np.array_equal(self.active_ues, other.active_ues)
            and np.array_equal(self.volume_gb, other.volume_gb)
            and np.array_equal(self.dl_prb_util_pct, other.dl_prb_util_pct)
        )

    def to_bytes(self) -> bytes:
        head = f"{self.start_hour}|{','.join(c.name for c in self.cells)}|".encode()
        return head + self.active_ues.tobytes() + self.volume_gb.tobytes() + self.dl_prb_util_pct.tobytes()

    def slice_hours(self, start: int, stop: int) -> "Dataset":
        """Sub-dataset over positional hours [start, stop)."""
        return Dataset(
            self.start_hour + start,
            self.cells,
            np.array(self.active_ues[start:stop]),
            np.array(self.volume_gb[start:stop]),
            np.array(self.dl_prb_util_pct[start:stop]),
            self.seed,
        )

    @staticmethod
    def concat(first: "Dataset", second: "Dataset") -> "Dataset":
        if first.cells != second.cells or first.start_hour + first.hours != second.start_hour:
            raise ValueError("datasets are not contiguous over the same cells")
        return Dataset(
            first.start_hour,
            first.cells,
            np.concatenate([first.active_ues, second.active_ues]),
            np.concatenate([first.volume_gb, second.volume_gb]),
            np.concatenate([first.dl_prb_util_pct, second.dl_prb_util_pct]),
            first.seed,
        )


def generate_synthetic_dataset(config: GeneratorConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    cells = tuple(CellId(e, c) for e in range(config.n_enb) for c in range(config.cells_per_enb))
    n_cells = len(cells)
    hours = config.days * 24
    hour = np.arange(hours)
    weekly = np.where((hour // 24) % 7 >= 5, 1.0 - config.weekend_dip, 1.0)
    profiles = {p.qci: p for p in config.per_qci_profile}

    load = rng.uniform(*config.cell_load_range, size=n_cells)
    noise = rng.uniform(-config.sigma, config.sigma, size=(hours, n_cells, len(QCIS)))
    if config.sigma == 0:
        noise[:] = 0.0

    ues = np.empty((hours, n_cells, len(QCIS)))
    gb_per_ue = np.empty(len(QCIS))
    prb_per_ue = np.empty(len(QCIS))
    for q, qci in enumerate(QCIS):
        prof = profiles[qci]
        # evaluated on hour-of-day so equal phases give bit-identical values
        level = prof.base_ues * prof.diurnal(hour % 24) * weekly
        ues[:, :, q] = level[:, None] * load[None, :]
        gb_per_ue[q] = prof.gb_per_ue
        prb_per_ue[q] = prof.prb_pct_per_ue
    ues *= 1.0 + noise
    np.maximum(ues, 0.0, out=ues)
    volume = ues * gb_per_ue
    prb = np.clip((ues * prb_per_ue).sum(axis=2), 0.0, 100.0)
    return Dataset(0, cells, ues, volume, prb, config.seed)


CSV_HEADER = ("hour", "enb", "cell", "qci", "active_ues", "volume_gb", "dl_prb_util_pct")


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for s in dataset.samples():
            fh.write(
                f"{s.hour},{s.cell.enb_index},{s.cell.cell_index},{s.qci.qci},"
                f"{s.active_ues!r},{s.volume_gb!r},{s.dl_prb_util_pct!r}\n"
            )


def _num(text, row, column, kind=float):
    try:
        value = kind(text)
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric {column} {text!r}", row) from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"non-finite {column} {text!r}", row)
    return value


def load_dataset(path) -> Dataset:
    path = Path(path)
    records = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)}", 1)
        if tuple(header) != CSV_HEADER:
            raise ParseError(f"header must be exactly {','.join(CSV_HEADER)}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line_no)
            hour = _num(row[0], line_no, "hour", int)
            enb = _num(row[1], line_no, "enb", int)
            cell = _num(row[2], line_no, "cell", int)
            qci_raw = _num(row[3], line_no, "qci", int)
            try:
                qci = BearerClass.from_qci(qci_raw)
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
            ues = _num(row[4], line_no, "active_ues")
            vol = _num(row[5], line_no, "volume_gb")
            prb = _num(row[6], line_no, "dl_prb_util_pct")
            if enb < 0 or cell < 0:
                raise RangeError("enb and cell indices must be >= 0", line_no)
            if ues < 0 or vol < 0:
                raise RangeError("active_ues and volume_gb must be >= 0", line_no)
            if not 0.0 <= prb <= 100.0:
                raise RangeError(f"dl_prb_util_pct {prb} outside [0, 100]", line_no)
            key = (hour, CellId(enb, cell), qci)
            if key in records:
                raise ParseError(f"duplicate row for hour {hour} {key[1]} {qci.name}", line_no)
            records[key] = (ues, vol, prb, line_no)
    if not records:
        raise ParseError("no data rows", 2)

    hours_seen = sorted({k[0] for k in records})
    cells = tuple(sorted({k[1] for k in records}))
    start = hours_seen[0]
    for prev, cur in zip(hours_seen, hours_seen[1:]):
        if cur != prev + 1:
            first_line = min(v[3] for k, v in records.items() if k[0] == cur)
            raise ParseError(f"hour gap between {prev} and {cur}", first_line)
    n_hours = len(hours_seen)
    cell_pos = {c: i for i, c in enumerate(cells)}
    ues = np.full((n_hours, len(cells), len(QCIS)), np.nan)
    vol = np.full_like(ues, np.nan)
    prb = np.full((n_hours, len(cells)), np.nan)
    for (hour, cell, qci), (u, v, p, line_no) in records.items():
        h, c = hour - start, cell_pos[cell]
        ues[h, c, QCI_INDEX[qci]] = u
        vol[h, c, QCI_INDEX[qci]] = v
        if np.isnan(prb[h, c]):
            prb[h, c] = p
        elif prb[h, c] != p:
            raise ParseError(f"dl_prb_util_pct differs between bearers of {cell} at hour {hour}", line_no)
    if np.isnan(ues).any():
        h, c, q = np.argwhere(np.isnan(ues))[0]
        raise ParseError(f"missing row for hour {start + h} {cells[c]} {QCIS[q].name}")
    return Dataset(start, cells, ues, vol, prb, None)


def split_train_test(dataset: Dataset, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Chronological split at hour floor(hours * train_fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    boundary = math.floor(dataset.hours * train_fraction)
    if boundary == 0 or boundary == dataset.hours:
        raise ConfigError(f"split of {dataset.hours} hours at {train_fraction} leaves an empty side")
    return dataset.slice_hours(0, boundary), dataset.slice_hours(boundary, dataset.hours)
