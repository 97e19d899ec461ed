"""Scenario configuration: one JSON document validated with pydantic."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .forecast import ArimaOrder, LstmConfig
from .kpi import SliceMapping
from .rapp import LoopConfig, Priority
from .traffic import DEFAULT_PROFILES, GeneratorConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorSection(_Strict):
    n_enb: int = Field(2, ge=1)
    cells_per_enb: int = Field(3, ge=1)
    days: int = Field(31, ge=2)
    sigma: float = Field(0.05, ge=0.0, lt=1.0)
    weekend_dip: float = Field(0.1, ge=0.0, lt=1.0)
    cell_load_range: tuple[float, float] = (0.6, 1.4)


class DatasetSection(_Strict):
    generator: Optional[GeneratorSection] = None
    csv: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.generator is None) == (self.csv is None):
            raise ValueError("exactly one of 'generator' or 'csv' must be given")
        return self


class LstmSection(_Strict):
    layers: int = Field(2, ge=1)
    units: int = Field(150, ge=1)
    activation: Literal["relu", "tanh"] = "relu"
    batch_size: int = Field(24, ge=1)
    epochs: int = Field(120, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    input_window: int = Field(24, ge=1)
    horizon: int = Field(1, ge=1)
    precision: Literal["float64", "float32"] = "float64"


class OrderSection(_Strict):
    p: int = Field(0, ge=0)
    d: int = Field(0, ge=0)
    q: int = Field(0, ge=0)
    P: int = Field(0, ge=0)
    D: int = Field(0, ge=0)
    Q: int = Field(0, ge=0)
    s: int = Field(24, ge=2)


class ForecasterSection(_Strict):
    kind: Literal["lstm", "arima", "seasonal_naive"] = "lstm"
    lstm: LstmSection = LstmSection()
    # null means the default grid
    arima_orders: Optional[list[OrderSection]] = None
    season: int = Field(24, ge=1)
    channels: list[Literal["active_ues", "volume_gb", "prb_share_pct"]] = ["active_ues", "volume_gb", "prb_share_pct"]
    baselines: bool = True


class CloudSection(_Strict):
    vm_per_ue_block: int = Field(10, ge=1)
    cpu_per_vm: int = Field(4, ge=0)
    mem_per_vm: int = Field(8, ge=0)
    priorities: dict[str, Literal["high", "low"]] = {}


class ScenarioConfig(_Strict):
    seed: int = 42
    dataset: DatasetSection = DatasetSection(generator=GeneratorSection())
    slices: dict[str, list[int]] = {"A": [1, 9], "B": [2, 5]}
    allocator: Literal["volume", "ue"] = "volume"
    forecaster: ForecasterSection = ForecasterSection()
    margin: float = Field(0.0, ge=0.0)
    static_limits: Optional[dict[str, int]] = None
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    output_dir: str = "out"
    feedback: Literal["served", "demand"] = "served"
    plmn_id: str = Field("40486", pattern=r"^\d{5,6}$")
    cell_cap_pct: float = Field(100.0, gt=0.0, le=100.0)
    tolerance_frac: float = Field(0.01, ge=0.0)
    cloud: CloudSection = CloudSection()

    @model_validator(mode="after")
    def _cross_checks(self):
        try:
            SliceMapping.from_qcis(self.slices)
        except (ConfigError, ValueError) as exc:
            raise ValueError(f"slices: {exc}") from None
        for name, table in (("static_limits", self.static_limits or {}), ("cloud.priorities", self.cloud.priorities)):
            unknown = sorted(set(table) - set(self.slices))
            if unknown:
                raise ValueError(f"{name}: unknown slices {unknown}")
        if any(v < 0 for v in (self.static_limits or {}).values()):
            raise ValueError("static_limits: values must be >= 0")
        if self.forecaster.arima_orders is not None:
            for o in self.forecaster.arima_orders:
                try:
                    ArimaOrder(**o.model_dump())
                except ConfigError as exc:
                    raise ValueError(f"forecaster.arima_orders: {exc}") from None
        return self

    # -- derived runtime objects --

    @property
    def mapping(self) -> SliceMapping:
        return SliceMapping.from_qcis(self.slices)

    def generator_config(self) -> GeneratorConfig:
        g = self.dataset.generator
        if g is None:
            raise ConfigError("scenario reads its dataset from CSV")
        return GeneratorConfig(
            n_enb=g.n_enb,
            cells_per_enb=g.cells_per_enb,
            days=g.days,
            seed=self.seed,
            sigma=g.sigma,
            weekend_dip=g.weekend_dip,
            per_qci_profile=DEFAULT_PROFILES,
            cell_load_range=tuple(g.cell_load_range),
        )

    def lstm_config(self) -> LstmConfig:
        return LstmConfig(**self.forecaster.lstm.model_dump(), seed=self.seed)

    def arima_orders(self) -> list[ArimaOrder] | None:
        if self.forecaster.arima_orders is None:
            return None
        return [ArimaOrder(**o.model_dump()) for o in self.forecaster.arima_orders]

    def loop_config(self, prb_per_ue) -> LoopConfig:
        return LoopConfig(
            prb_per_ue=prb_per_ue,
            margin=self.margin,
            plmn_id=self.plmn_id,
            cell_cap_pct=self.cell_cap_pct,
            vm_per_ue_block=self.cloud.vm_per_ue_block,
            cpu_per_vm=self.cloud.cpu_per_vm,
            mem_per_vm=self.cloud.mem_per_vm,
            priorities={k: Priority(v) for k, v in self.cloud.priorities.items()},
        )

    def canonical_json(self) -> str:
        # where outputs land does not change what is computed
        doc = self.model_dump(mode="json", exclude={"output_dir"})
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_scenario(doc: dict, source: str = "<config>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_errors(exc)}") from None


def load_scenario(path, seed: int | None = None, output_dir: str | None = None) -> ScenarioConfig:
    """Read and validate a scenario file; ``seed`` and ``output_dir`` override it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if seed is not None:
        doc["seed"] = seed
    if output_dir is not None:
        doc["output_dir"] = output_dir
    scenario = parse_scenario(doc, str(path))
    # relative CSV paths resolve against the config file
    if scenario.dataset.csv is not None and not Path(scenario.dataset.csv).is_absolute():
        csv_path = str((path.parent / scenario.dataset.csv).resolve())
        scenario = scenario.model_copy(update={"dataset": DatasetSection(csv=csv_path)})
    return scenario
