"""HTTP face of the package: VES collector, A1 policy endpoint and experiment commands."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__, experiment
from .control import Inbox, a1_from_json, a1_publish, a1_to_json, decode_frame
from .errors import BackpressureError, ConfigError, IngestionError, PclError, ProtocolError
from .kpi import Collector, VesEvent
from .scenario import ScenarioConfig, parse_scenario


class _Wire(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CommonEventHeader(_Wire):
    sourceName: str
    startEpochHour: int


class VesBody(_Wire):
    commonEventHeader: CommonEventHeader
    measurementFields: dict[str, float]


class VesEnvelope(_Wire):
    event: VesBody


class IngestResponse(BaseModel):
    accepted: bool
    samples: int
    dead_letters: int
    error: Optional[str] = None


class LayerDescriptorModel(_Wire):
    layer: Literal["MAC_SCHEDULER"] = "MAC_SCHEDULER"
    parameter: Literal["MAX_ACTIVE_UES", "PRB_QUOTA_PCT"]
    value: float
    direction: Literal["SCALE_UP", "SCALE_DOWN", "HOLD"]


class A1Policy(_Wire):
    policyType: Literal["pcl-slice-v1"] = "pcl-slice-v1"
    sliceId: str
    plmnId: str
    timestampHour: int
    layerDescriptors: list[LayerDescriptorModel] = Field(min_length=1)
    cellIds: Optional[list[str]] = None


class Receipt(BaseModel):
    schema_name: str
    digest: str
    queued: int


class CommandRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: dict = Field(default_factory=dict)
    mode: Optional[Literal["static", "dynamic"]] = None


class CommandResponse(BaseModel):
    command: str
    output_dir: str
    summary: dict


class Health(BaseModel):
    status: str
    version: str


def create_app(defaults: ScenarioConfig | None = None, inbox_capacity: int = 1024) -> FastAPI:
    app = FastAPI(title="oran-pcl", version=__version__)
    app.state.collector = Collector()
    app.state.ric_inbox = Inbox(inbox_capacity)
    app.state.defaults = defaults or ScenarioConfig()

    @app.get("/health", response_model=Health)
    def health():
        return Health(status="ok", version=__version__)

    @app.post("/ves/events", response_model=IngestResponse)
    def ves_event(body: VesEnvelope):
        collector: Collector = app.state.collector
        try:
            event = VesEvent.from_json(body.model_dump())
        except IngestionError as exc:
            collector.dead_letters.append(exc)
            return IngestResponse(accepted=False, samples=0, dead_letters=len(collector.dead_letters), error=str(exc))
        ok = collector.ingest(event)
        error = None if ok else str(collector.dead_letters[-1])
        return IngestResponse(
            accepted=ok, samples=4 * len(collector.rows), dead_letters=len(collector.dead_letters), error=error
        )

    @app.post("/a1/policies", response_model=Receipt, status_code=202)
    def post_policy(policy: A1Policy):
        try:
            descriptor = a1_from_json(policy.model_dump(exclude_none=True))
            receipt = a1_publish(descriptor, app.state.ric_inbox)
        except ProtocolError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        except BackpressureError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from None
        return Receipt(schema_name=receipt.schema, digest=receipt.digest, queued=receipt.position)

    @app.get("/a1/policies", response_model=list[A1Policy])
    def drain_policies():
        """Hand every queued policy to the caller (the Near-RT RIC side) in FIFO order."""
        out = []
        inbox: Inbox = app.state.ric_inbox
        while (frame := inbox.get()) is not None:
            out.append(A1Policy.model_validate(a1_to_json(decode_frame(frame))))
        return out

    @app.post("/experiments/{command}", response_model=CommandResponse)
    def run_command(command: Literal["generate", "train", "run", "compare"], request: CommandRequest):
        doc = app.state.defaults.model_dump(mode="json")
        doc.update(request.config)
        try:
            scenario = parse_scenario(doc, "request")
            out = Path(scenario.output_dir)
            summary = _execute(command, scenario, out, request.mode)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        except PclError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from None
        return CommandResponse(command=command, output_dir=str(out), summary=summary)

    return app


def _execute(command: str, scenario: ScenarioConfig, out: Path, mode: str | None) -> dict:
    if command == "generate":
        return {"dataset": str(experiment.cmd_generate(scenario, out))}
    if command == "train":
        table = experiment.cmd_train(scenario, out).table
        return {"accuracy": [{k: v for k, v in row.items() if k != "series"} for row in table]}
    if command == "run":
        if mode is None:
            raise ConfigError("run needs a mode (static or dynamic)")
        return experiment.cmd_run(scenario, out, mode).totals()
    return experiment.cmd_compare(scenario, out).totals


def serve(host: str, port: int, defaults: ScenarioConfig | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(defaults), host=host, port=port, log_level="info")
