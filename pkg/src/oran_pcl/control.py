"""A1 policy delivery, xApp translation, E2 application and O2 cloud scaling.

Every message crosses a component boundary as a newline-delimited JSON
frame ``{"schema": "<name>-v1", "payload": {...}}``. The in-process
:class:`Inbox` and the TCP loopback transport carry identical frames.
"""

from __future__ import annotations

import hashlib
import json
import socket
import socketserver
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import BackpressureError, ContractError, PclError, ProtocolError, TranslationError
from .kpi import VesEvent
from .rapp import (
    CloudScalingDirective,
    Direction,
    LayerDescriptor,
    Parameter,
    RanSliceDescriptor,
    check_slice_params,
)
from .traffic import CellId

A1_POLICY_TYPE = "pcl-slice-v1"
SCHEMAS = ("a1-policy-v1", "e2-control-v1", "o2-scaling-v1", "ves-event-v1")

# tolerance for the per-cell quota sum after proportional rescaling
QUOTA_EPS = 1e-9


# -- codecs -------------------------------------------------------------------


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def digest(doc) -> str:
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()


def _require(doc, key, kind, where):
    try:
        value = doc[key]
    except (KeyError, TypeError):
        raise ProtocolError(f"{where}: missing field {key!r}") from None
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ProtocolError(f"{where}: field {key!r} must be an integer")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ProtocolError(f"{where}: field {key!r} must be a number")
    if kind is str and not isinstance(value, str):
        raise ProtocolError(f"{where}: field {key!r} must be a string")
    if kind is bool and not isinstance(value, bool):
        raise ProtocolError(f"{where}: field {key!r} must be a boolean")
    return value


def a1_to_json(d: RanSliceDescriptor) -> dict:
    doc = {
        "policyType": A1_POLICY_TYPE,
        "sliceId": d.slice_id,
        "plmnId": d.plmn_id,
        "timestampHour": d.timestamp_hour,
        "layerDescriptors": [
            {
                "layer": ld.layer,
                "parameter": ld.parameter.value,
                "value": int(ld.value) if ld.parameter is Parameter.MAX_ACTIVE_UES else float(ld.value),
                "direction": ld.direction.value,
            }
            for ld in d.layer_descriptors
        ],
    }
    if d.cells is not None:
        doc["cellIds"] = [c.name for c in d.cells]
    return doc


def a1_from_json(doc) -> RanSliceDescriptor:
    where = "A1 policy"
    if _require(doc, "policyType", str, where) != A1_POLICY_TYPE:
        raise ProtocolError(f"{where}: unsupported policyType {doc['policyType']!r}")
    layers = []
    for entry in _require(doc, "layerDescriptors", list, where):
        try:
            param = Parameter(_require(entry, "parameter", str, where))
            direction = Direction(_require(entry, "direction", str, where))
            value = _require(entry, "value", float, where)
            if param is Parameter.MAX_ACTIVE_UES:
                value = int(value)
            else:
                value = float(value)
            layers.append(LayerDescriptor(param, value, direction, _require(entry, "layer", str, where)))
        except (ValueError, ContractError) as exc:
            raise ProtocolError(f"{where}: {exc}") from None
    cells = None
    if "cellIds" in doc:
        try:
            cells = tuple(CellId.parse(c) for c in doc["cellIds"])
        except (ValueError, TypeError) as exc:
            raise ProtocolError(f"{where}: {exc}") from None
    try:
        return RanSliceDescriptor(
            _require(doc, "sliceId", str, where),
            _require(doc, "plmnId", str, where),
            tuple(layers),
            _require(doc, "timestampHour", int, where),
            cells,
        )
    except ContractError as exc:
        raise ProtocolError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class E2ControlMessage:
    slice_id: str
    cell: CellId
    max_active_ues: int
    prb_quota_pct: float
    sequence_no: int
    timestamp_hour: int
    event: str = "SET_SLICE_PARAMS"

    def __post_init__(self):
        if self.event != "SET_SLICE_PARAMS":
            raise ProtocolError(f"unsupported E2 event {self.event!r}")

    def to_json(self) -> dict:
        return {
            "event": self.event,
            "state": {
                "sliceId": self.slice_id,
                "cell": self.cell.name,
                "maxActiveUes": self.max_active_ues,
                "prbQuotaPct": float(self.prb_quota_pct),
            },
            "sequenceNo": self.sequence_no,
            "timestampHour": self.timestamp_hour,
        }

    @classmethod
    def from_json(cls, doc) -> "E2ControlMessage":
        where = "E2 control"
        state = _require(doc, "state", dict, where)
        try:
            cell = CellId.parse(_require(state, "cell", str, where))
        except ValueError as exc:
            raise ProtocolError(f"{where}: {exc}") from None
        return cls(
            _require(state, "sliceId", str, where),
            cell,
            _require(state, "maxActiveUes", int, where),
            float(_require(state, "prbQuotaPct", float, where)),
            _require(doc, "sequenceNo", int, where),
            _require(doc, "timestampHour", int, where),
            _require(doc, "event", str, where),
        )


def o2_to_json(d: CloudScalingDirective) -> dict:
    return {
        "sliceId": d.slice_id,
        "targetVmCount": d.target_vm_count,
        "targetCpuUnits": d.target_cpu_units,
        "targetMemUnits": d.target_mem_units,
        "activate": d.activate,
        "timestampHour": d.timestamp_hour,
    }


def o2_from_json(doc) -> CloudScalingDirective:
    where = "O2 directive"
    try:
        return CloudScalingDirective(
            _require(doc, "sliceId", str, where),
            _require(doc, "targetVmCount", int, where),
            _require(doc, "targetCpuUnits", int, where),
            _require(doc, "targetMemUnits", int, where),
            _require(doc, "activate", bool, where),
            _require(doc, "timestampHour", int, where),
        )
    except ContractError as exc:
        raise ProtocolError(f"{where}: {exc}") from None


_ENCODERS = {
    RanSliceDescriptor: ("a1-policy-v1", a1_to_json),
    E2ControlMessage: ("e2-control-v1", E2ControlMessage.to_json),
    CloudScalingDirective: ("o2-scaling-v1", o2_to_json),
    VesEvent: ("ves-event-v1", VesEvent.to_json),
}
_DECODERS = {
    "a1-policy-v1": a1_from_json,
    "e2-control-v1": E2ControlMessage.from_json,
    "o2-scaling-v1": o2_from_json,
    "ves-event-v1": VesEvent.from_json,
}


def encode_frame(message) -> str:
    """One line of JSON, without the trailing newline."""
    try:
        schema, encode = _ENCODERS[type(message)]
    except KeyError:
        raise ContractError(f"no wire schema for {type(message).__name__}") from None
    return _canonical({"schema": schema, "payload": encode(message)})


def decode_frame(line: str | bytes):
    try:
        doc = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"frame is not JSON: {exc}") from None
    schema = _require(doc, "schema", str, "frame")
    try:
        decode = _DECODERS[schema]
    except KeyError:
        raise ProtocolError(f"unknown frame schema {schema!r}") from None
    try:
        return decode(_require(doc, "payload", dict, "frame"))
    except PclError as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ProtocolError(str(exc)) from None


# -- transport ----------------------------------------------------------------


class Inbox:
    """Bounded FIFO of encoded frames owned by one consumer."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ContractError("inbox capacity must be >= 1")
        self.capacity = capacity
        self._frames: deque[str] = deque()
        self._lock = threading.Lock()

    def put(self, frame: str) -> None:
        with self._lock:
            if len(self._frames) >= self.capacity:
                raise BackpressureError(f"inbox full ({self.capacity} frames)")
            self._frames.append(frame)

    def get(self) -> str | None:
        with self._lock:
            return self._frames.popleft() if self._frames else None

    def drain(self) -> list:
        """Decode and remove every queued frame in arrival order."""
        out = []
        while (frame := self.get()) is not None:
            out.append(decode_frame(frame))
        return out

    def __len__(self):
        return len(self._frames)


@dataclass(frozen=True)
class DeliveryReceipt:
    schema: str
    digest: str
    position: int


def publish(message, inbox: Inbox) -> DeliveryReceipt:
    frame = encode_frame(message)
    inbox.put(frame)
    schema, encode = _ENCODERS[type(message)]
    return DeliveryReceipt(schema, digest(encode(message)), len(inbox))


def a1_publish(descriptor: RanSliceDescriptor, inbox: Inbox) -> DeliveryReceipt:
    return publish(descriptor, inbox)


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode().strip()
            if line:
                try:
                    decode_frame(line)
                except ProtocolError as exc:
                    self.server.rejected.append(exc)
                    continue
                self.server.inbox.put(line)


class FrameServer(socketserver.ThreadingTCPServer):
    """Loopback TCP listener that validates frames and queues them on an inbox."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, inbox: Inbox, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _FrameHandler)
        self.inbox = inbox
        self.rejected: list = []
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "FrameServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def send_frames(messages: Iterable, port: int, host: str = "127.0.0.1", timeout: float = 5.0) -> int:
    payload = "".join(encode_frame(m) + "\n" for m in messages).encode()
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(payload)
    return payload.count(b"\n")


# -- node state ---------------------------------------------------------------


@dataclass(frozen=True)
class SliceParams:
    max_active_ues: int = 0
    prb_quota_pct: float = 0.0


class StaleMessage(PclError):
    """Signal: an E2 message's sequence number is not newer than the node's version."""

    def __init__(self, msg: E2ControlMessage, version: int):
        super().__init__(f"{msg.cell}: sequence {msg.sequence_no} <= applied version {version}")
        self.msg = msg
        self.version = version


@dataclass(frozen=True)
class NodeSliceConfig:
    slice_ids: tuple[str, ...]
    cells: tuple[CellId, ...]
    params: Mapping[tuple[CellId, str], SliceParams] = field(default_factory=dict)
    versions: Mapping[CellId, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        object.__setattr__(self, "versions", MappingProxyType(dict(self.versions)))
        for cell in self.cells:
            total = sum(self.get(cell, s).prb_quota_pct for s in self.slice_ids)
            if total > 100.0 + QUOTA_EPS:
                raise ContractError(f"{cell}: quota sum {total} exceeds 100")

    @classmethod
    def empty(cls, slice_ids, cells) -> "NodeSliceConfig":
        return cls(tuple(slice_ids), tuple(cells))

    def get(self, cell: CellId, slice_id: str) -> SliceParams:
        return self.params.get((cell, slice_id), SliceParams())

    def version(self, cell: CellId) -> int:
        return self.versions.get(cell, 0)

    def quota_sum(self, cell: CellId) -> float:
        return sum(self.get(cell, s).prb_quota_pct for s in self.slice_ids)

    def __eq__(self, other):
        if not isinstance(other, NodeSliceConfig):
            return NotImplemented
        return (
            self.slice_ids == other.slice_ids
            and self.cells == other.cells
            and dict(self.params) == dict(other.params)
            and dict(self.versions) == dict(other.versions)
        )

    def __hash__(self):
        return hash((self.slice_ids, self.cells))


def xapp_translate(
    descriptor: RanSliceDescriptor,
    current: NodeSliceConfig,
    cells: Iterable[CellId] | None = None,
    next_sequence: dict[CellId, int] | None = None,
) -> list[E2ControlMessage]:
    """Expand a descriptor to one absolute SET_SLICE_PARAMS message per targeted cell.

    ``cells`` defaults to the descriptor's own scope, then to every node cell.
    ``next_sequence`` is the xApp's per-cell counter and is advanced in place;
    without it numbering continues from the node's applied version.
    """
    if descriptor.slice_id not in current.slice_ids:
        raise TranslationError(f"unknown slice {descriptor.slice_id!r}")
    if descriptor.is_hold:
        return []
    if cells is None:
        cells = descriptor.cells if descriptor.cells is not None else current.cells
    counters = next_sequence if next_sequence is not None else {}
    out = []
    for cell in cells:
        if cell not in current.cells:
            raise TranslationError(f"unknown cell {cell}")
        params = current.get(cell, descriptor.slice_id)
        ues, quota = params.max_active_ues, params.prb_quota_pct
        for ld in descriptor.layer_descriptors:
            if ld.direction is Direction.HOLD:
                continue
            if ld.parameter is Parameter.MAX_ACTIVE_UES:
                ues = int(ld.value)
            else:
                quota = float(ld.value)
        if ues == 0:
            quota = 0.0
        seq = counters.get(cell, current.version(cell) + 1)
        counters[cell] = seq + 1
        out.append(E2ControlMessage(descriptor.slice_id, cell, ues, quota, seq, descriptor.timestamp_hour))
    return out


def rescale_cell(quotas: Mapping[str, float], cap: float = 100.0) -> dict[str, float]:
    total = sum(quotas.values())
    if total <= cap:
        return dict(quotas)
    return {s: min(q * cap / total, cap) for s, q in quotas.items()}


def e2_apply(msg: E2ControlMessage, node: NodeSliceConfig) -> NodeSliceConfig:
    """Apply one control message. Raises :class:`StaleMessage` for old sequence numbers."""
    if msg.slice_id not in node.slice_ids:
        raise ProtocolError(f"unknown slice {msg.slice_id!r}")
    if msg.cell not in node.cells:
        raise ProtocolError(f"unknown cell {msg.cell}")
    try:
        check_slice_params(msg.max_active_ues, msg.prb_quota_pct)
    except ContractError as exc:
        raise ProtocolError(str(exc)) from None
    version = node.version(msg.cell)
    if msg.sequence_no <= version:
        raise StaleMessage(msg, version)
    params = dict(node.params)
    params[(msg.cell, msg.slice_id)] = SliceParams(msg.max_active_ues, msg.prb_quota_pct)
    quotas = {s: params.get((msg.cell, s), SliceParams()).prb_quota_pct for s in node.slice_ids}
    scaled = rescale_cell(quotas)
    if scaled != quotas:
        for s, q in scaled.items():
            old = params.get((msg.cell, s), SliceParams())
            params[(msg.cell, s)] = SliceParams(old.max_active_ues, q)
    versions = dict(node.versions)
    versions[msg.cell] = msg.sequence_no
    return replace(node, params=params, versions=versions)


# -- O-Cloud ------------------------------------------------------------------


@dataclass(frozen=True)
class SliceCloud:
    vm_count: int = 0
    cpu_units: int = 0
    mem_units: int = 0
    active: bool = False

    def __post_init__(self):
        if min(self.vm_count, self.cpu_units, self.mem_units) < 0:
            raise ContractError("cloud counts must be >= 0")
        if not self.active and (self.vm_count or self.cpu_units or self.mem_units):
            raise ContractError("an inactive slice holds no cloud resources")


@dataclass(frozen=True)
class CloudState:
    slices: Mapping[str, SliceCloud] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "slices", MappingProxyType(dict(self.slices)))

    def get(self, slice_id: str) -> SliceCloud:
        return self.slices.get(slice_id, SliceCloud())

    def __eq__(self, other):
        if not isinstance(other, CloudState):
            return NotImplemented
        return dict(self.slices) == dict(other.slices)

    def __hash__(self):
        return hash(tuple(sorted(self.slices.items())))


def o2_scale(directive: CloudScalingDirective, cloud: CloudState) -> CloudState:
    if directive.activate:
        entry = SliceCloud(directive.target_vm_count, directive.target_cpu_units, directive.target_mem_units, True)
    else:
        entry = SliceCloud()
    if cloud.get(directive.slice_id) == entry and directive.slice_id in cloud.slices:
        return cloud
    slices = dict(cloud.slices)
    slices[directive.slice_id] = entry
    return CloudState(slices)


# -- event-loop components ------------------------------------------------------


class NearRtRic:
    """Hosts the slicing xApp: A1 policies in, E2 control frames out."""

    def __init__(self, inbox: Inbox | None = None):
        self.inbox = inbox or Inbox()
        self.next_sequence: dict[CellId, int] = {}
        self.rejected: list[PclError] = []

    def process(self, node: NodeSliceConfig, e2_out: Inbox) -> int:
        """Translate every queued policy against the node's current config.

        Successive descriptors for the same cell see the targets of the
        earlier ones, matching what the node will hold once they are applied.
        """
        view = node
        sent = 0
        for frame in list(self._frames()):
            try:
                descriptor = decode_frame(frame)
                msgs = xapp_translate(descriptor, view, None, self.next_sequence)
            except (ProtocolError, TranslationError) as exc:
                self.rejected.append(exc)
                continue
            for msg in msgs:
                view = e2_apply(msg, view)
                publish(msg, e2_out)
                sent += 1
        return sent

    def _frames(self):
        while (frame := self.inbox.get()) is not None:
            yield frame


class E2NodeAgent:
    """E2 termination on the node: applies control frames in arrival order."""

    def __init__(self, config: NodeSliceConfig, inbox: Inbox | None = None):
        self.config = config
        self.inbox = inbox or Inbox()
        self.stale: list[StaleMessage] = []
        self.rejected: list[ProtocolError] = []

    def process(self) -> int:
        applied = 0
        while (frame := self.inbox.get()) is not None:
            try:
                self.config = e2_apply(decode_frame(frame), self.config)
                applied += 1
            except StaleMessage as exc:
                self.stale.append(exc)
            except ProtocolError as exc:
                self.rejected.append(exc)
        return applied


class OCloud:
    """O2 server side: applies scaling directives to the cloud state machine."""

    def __init__(self, state: CloudState | None = None, inbox: Inbox | None = None):
        self.state = state or CloudState()
        self.inbox = inbox or Inbox()
        self.history: list[CloudState] = []

    def process(self) -> int:
        n = 0
        while (frame := self.inbox.get()) is not None:
            self.state = o2_scale(decode_frame(frame), self.state)
            self.history.append(self.state)
            n += 1
        return n
