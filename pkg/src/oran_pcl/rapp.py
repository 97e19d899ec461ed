"""Predictive closed-loop rApp: forecasts in, slice limits, A1 descriptors and O2 directives out."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ContractError, LoopError
from .forecast import ForecastModel, predict_lstm_batch, predict_next
from .kpi import SliceCubes
from .traffic import CellId

DEFAULT_PLMN = "40486"


class Parameter(str, enum.Enum):
    MAX_ACTIVE_UES = "MAX_ACTIVE_UES"
    PRB_QUOTA_PCT = "PRB_QUOTA_PCT"


class Direction(str, enum.Enum):
    SCALE_UP = "SCALE_UP"
    SCALE_DOWN = "SCALE_DOWN"
    HOLD = "HOLD"


class Priority(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class SliceState:
    slice_id: str
    cell: CellId
    max_active_ues: int = 0
    prb_quota_pct: float = 0.0


@dataclass(frozen=True)
class AdaptiveLimit:
    slice_id: str
    cell: CellId
    hour: int
    max_active_ues: int
    prb_quota_pct: float

    def __post_init__(self):
        check_slice_params(self.max_active_ues, self.prb_quota_pct)


def check_slice_params(max_active_ues, prb_quota_pct):
    if max_active_ues < 0:
        raise ContractError(f"max_active_ues {max_active_ues} < 0")
    if not 0.0 <= prb_quota_pct <= 100.0:
        raise ContractError(f"prb_quota_pct {prb_quota_pct} outside [0, 100]")
    if max_active_ues == 0 and prb_quota_pct != 0.0:
        raise ContractError("a slice admitting no UEs cannot hold a PRB quota")


@dataclass(frozen=True)
class LayerDescriptor:
    parameter: Parameter
    value: float
    direction: Direction
    layer: str = "MAC_SCHEDULER"

    def __post_init__(self):
        if self.layer != "MAC_SCHEDULER":
            raise ContractError(f"unsupported layer {self.layer!r}")
        if self.parameter is Parameter.MAX_ACTIVE_UES:
            if self.value < 0 or self.value != int(self.value):
                raise ContractError(f"MAX_ACTIVE_UES must be a non-negative integer, got {self.value}")
        elif not 0.0 <= self.value <= 100.0:
            raise ContractError(f"PRB_QUOTA_PCT {self.value} outside [0, 100]")


@dataclass(frozen=True)
class RanSliceDescriptor:
    slice_id: str
    plmn_id: str
    layer_descriptors: tuple[LayerDescriptor, ...]
    timestamp_hour: int
    cells: tuple[CellId, ...] | None = None

    def __post_init__(self):
        if not self.layer_descriptors:
            raise ContractError("a slice descriptor needs at least one layer descriptor")
        if not (self.plmn_id.isdigit() and len(self.plmn_id) in (5, 6)):
            raise ContractError(f"PLMN id must be 5 or 6 digits, got {self.plmn_id!r}")

    @property
    def is_hold(self) -> bool:
        return all(d.direction is Direction.HOLD for d in self.layer_descriptors)


@dataclass(frozen=True)
class CloudScalingDirective:
    slice_id: str
    target_vm_count: int
    target_cpu_units: int
    target_mem_units: int
    activate: bool
    timestamp_hour: int

    def __post_init__(self):
        if min(self.target_vm_count, self.target_cpu_units, self.target_mem_units) < 0:
            raise ContractError("cloud targets must be >= 0")
        if not self.activate and (self.target_vm_count or self.target_cpu_units or self.target_mem_units):
            raise ContractError("a deactivation directive must zero every target")


def _ceil(x: float) -> int:
    # absorbs float noise such as 10.0 * 1.1 = 11.000000000000002
    return max(0, math.ceil(x - 1e-9 * max(1.0, abs(x))))


def compute_adaptive_limit(forecast_ues: float, margin: float = 0.0) -> int:
    if forecast_ues < 0 or margin < 0 or not math.isfinite(forecast_ues) or not math.isfinite(margin):
        raise ContractError(f"forecast ({forecast_ues}) and margin ({margin}) must be finite and >= 0")
    return _ceil(forecast_ues * (1.0 + margin))


def derive_prb_quota(limit_ues: int, prb_per_ue_pct: float, cell_cap_pct: float = 100.0) -> float:
    if not prb_per_ue_pct > 0:
        raise ContractError(f"PRB-per-UE coefficient must be > 0, got {prb_per_ue_pct}")
    if not 0.0 < cell_cap_pct <= 100.0:
        raise ContractError(f"cell cap must lie in (0, 100], got {cell_cap_pct}")
    if limit_ues < 0:
        raise ContractError(f"limit {limit_ues} < 0")
    return float(min(limit_ues * prb_per_ue_pct, cell_cap_pct))


def estimate_prb_per_ue(prb_share_pct, active_ues, fallback: float = 1.0) -> float:
    """Mean PRB share per active UE over hours that carried UEs."""
    prb = np.asarray(prb_share_pct, dtype=float)
    ues = np.asarray(active_ues, dtype=float)
    busy = ues > 0
    if not busy.any():
        return fallback
    value = float(np.mean(prb[busy] / ues[busy]))
    return value if value > 0 else fallback


def rescale_quotas(quotas: Mapping[str, float], cap: float = 100.0) -> dict[str, float]:
    """Scale every quota by cap / sum when the sum exceeds cap."""
    total = sum(quotas.values())
    if total <= cap:
        return dict(quotas)
    factor = cap / total
    return {k: min(v * factor, cap) for k, v in quotas.items()}


def build_slice_descriptor(slice_id: str, plmn_id: str, current: SliceState, target: AdaptiveLimit) -> RanSliceDescriptor:
    if current.slice_id != slice_id or target.slice_id != slice_id:
        raise ContractError(f"descriptor for {slice_id!r} built from {current.slice_id!r} -> {target.slice_id!r}")
    if current.cell != target.cell:
        raise ContractError(f"current state is for {current.cell}, target for {target.cell}")
    layers = []
    for param, old, new in (
        (Parameter.MAX_ACTIVE_UES, current.max_active_ues, target.max_active_ues),
        (Parameter.PRB_QUOTA_PCT, current.prb_quota_pct, target.prb_quota_pct),
    ):
        if new > old:
            layers.append(LayerDescriptor(param, new, Direction.SCALE_UP))
        elif new < old:
            layers.append(LayerDescriptor(param, new, Direction.SCALE_DOWN))
    if not layers:
        layers.append(LayerDescriptor(Parameter.MAX_ACTIVE_UES, target.max_active_ues, Direction.HOLD))
    return RanSliceDescriptor(slice_id, plmn_id, tuple(layers), target.hour, (target.cell,))


def infer_cloud_scaling(
    slice_id: str,
    forecast_ues: float,
    vm_per_ue_block: int = 10,
    priority: Priority | str = Priority.HIGH,
    *,
    margin: float = 0.0,
    cpu_per_vm: int = 4,
    mem_per_vm: int = 8,
    hour: int = 0,
) -> CloudScalingDirective:
    if vm_per_ue_block < 1:
        raise ContractError("vm_per_ue_block must be >= 1")
    priority = Priority(priority)
    limit = compute_adaptive_limit(forecast_ues, margin)
    if priority is Priority.LOW and limit == 0:
        return CloudScalingDirective(slice_id, 0, 0, 0, False, hour)
    vms = -(-limit // vm_per_ue_block)
    return CloudScalingDirective(slice_id, vms, vms * cpu_per_vm, vms * mem_per_vm, True, hour)


@dataclass(frozen=True)
class LoopConfig:
    prb_per_ue: Mapping[tuple[str, CellId], float]
    margin: float = 0.0
    plmn_id: str = DEFAULT_PLMN
    cell_cap_pct: float = 100.0
    vm_per_ue_block: int = 10
    cpu_per_vm: int = 4
    mem_per_vm: int = 8
    priorities: Mapping[str, str] = field(default_factory=dict)


def _history_window(history: SliceCubes, hour: int, need: int):
    if history.hour.size == 0 or int(history.hour[-1]) != hour - 1:
        last = None if history.hour.size == 0 else int(history.hour[-1])
        raise LoopError(f"history must end at hour {hour - 1}, ends at {last}")
    if history.hour.size < need:
        raise LoopError(f"hour {hour}: {history.hour.size} hours of history, models need {need}")


def forecast_demand(hour: int, history: SliceCubes, models: Mapping[tuple[str, CellId], ForecastModel]) -> dict:
    """Predict active UEs at ``hour`` for every modelled (slice, cell)."""
    if not models:
        raise LoopError("no forecast models")
    need = max(m.required_window for m in models.values())
    _history_window(history, hour, need)
    s_pos = {s: i for i, s in enumerate(history.slice_ids)}
    c_pos = {c: i for i, c in enumerate(history.cells)}
    keys = sorted(models, key=lambda k: (k[0], k[1]))
    for sid, cell in keys:
        if sid not in s_pos or cell not in c_pos:
            raise LoopError(f"history has no series for slice {sid!r} at {cell}")
    series = {k: history.active_ues[s_pos[k[0]], :, c_pos[k[1]]] for k in keys}
    out = {}
    lstm_keys = [k for k in keys if models[k].kind == "lstm"]
    if lstm_keys and len({models[k].lstm_config for k in lstm_keys}) == 1:
        w = models[lstm_keys[0]].lstm_config.input_window
        windows = np.stack([series[k][-w:] for k in lstm_keys])[:, None, :]
        preds = predict_lstm_batch([models[k] for k in lstm_keys], windows)
        for k, p in zip(lstm_keys, preds[:, 0, 0]):
            out[k] = float(p)
    for k in keys:
        if k not in out:
            m = models[k]
            window = series[k][-m.required_window :] if m.kind == "lstm" else series[k]
            out[k] = float(predict_next(m, window)[0])
    return out


def plan_limits(hour: int, forecasts: Mapping[tuple[str, CellId], float], config: LoopConfig) -> dict:
    """Turn forecasts into per-(slice, cell) limits with per-cell quota conservation."""
    raw = {}
    for (sid, cell), f in forecasts.items():
        ues = compute_adaptive_limit(f, config.margin)
        try:
            coeff = config.prb_per_ue[(sid, cell)]
        except KeyError:
            raise LoopError(f"no PRB-per-UE coefficient for slice {sid!r} at {cell}") from None
        raw[(sid, cell)] = (ues, derive_prb_quota(ues, coeff, config.cell_cap_pct))
    limits = {}
    for cell in sorted({c for _, c in raw}):
        quotas = rescale_quotas({sid: q for (sid, c), (_, q) in raw.items() if c == cell}, config.cell_cap_pct)
        for sid, q in quotas.items():
            limits[(sid, cell)] = AdaptiveLimit(sid, cell, hour, raw[(sid, cell)][0], q)
    return limits


def order_for_delivery(descriptors: list[RanSliceDescriptor]) -> list[RanSliceDescriptor]:
    """Quota releases first so sequential application never oversubscribes a cell."""

    def key(d):
        releases = any(
            ld.parameter is Parameter.PRB_QUOTA_PCT and ld.direction is Direction.SCALE_DOWN for ld in d.layer_descriptors
        )
        cells = tuple(d.cells or ())
        return (cells, 0 if releases else 1, d.slice_id)

    return sorted(descriptors, key=key)


def descriptors_for(limits: Mapping, current: Mapping[tuple[str, CellId], SliceState], plmn_id: str) -> list:
    out = []
    for key in sorted(limits, key=lambda k: (k[1], k[0])):
        sid, cell = key
        state = current.get(key, SliceState(sid, cell))
        out.append(build_slice_descriptor(sid, plmn_id, state, limits[key]))
    return order_for_delivery(out)


def cloud_directives(hour: int, forecasts: Mapping, config: LoopConfig) -> list[CloudScalingDirective]:
    per_slice: dict[str, float] = {}
    for (sid, _cell), f in forecasts.items():
        per_slice[sid] = per_slice.get(sid, 0.0) + f
    return [
        infer_cloud_scaling(
            sid,
            per_slice[sid],
            config.vm_per_ue_block,
            config.priorities.get(sid, Priority.HIGH),
            margin=config.margin,
            cpu_per_vm=config.cpu_per_vm,
            mem_per_vm=config.mem_per_vm,
            hour=hour,
        )
        for sid in sorted(per_slice)
    ]


def closed_loop_step(
    hour: int,
    slice_series_history: SliceCubes,
    models: Mapping[tuple[str, CellId], ForecastModel],
    config: LoopConfig,
    current: Mapping[tuple[str, CellId], SliceState] | None = None,
) -> tuple[list[RanSliceDescriptor], list[CloudScalingDirective]]:
    """One rApp decision for ``hour``. Pure: every input, including current state, is passed in."""
    forecasts = forecast_demand(hour, slice_series_history, models)
    limits = plan_limits(hour, forecasts, config)
    descriptors = descriptors_for(limits, current or {}, config.plmn_id)
    return descriptors, cloud_directives(hour, forecasts, config)


def state_after(current: SliceState, descriptor: RanSliceDescriptor) -> SliceState:
    """Apply a descriptor's directions to a state (the rApp's own view)."""
    state = current
    for ld in descriptor.layer_descriptors:
        if ld.direction is Direction.HOLD:
            continue
        if ld.parameter is Parameter.MAX_ACTIVE_UES:
            state = replace(state, max_active_ues=int(ld.value))
        else:
            state = replace(state, prb_quota_pct=float(ld.value))
    return state
