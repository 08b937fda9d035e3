"""Location-session procedure flows replayed as message-passing state
machines: a location server drives round-trip-time and downlink
time-difference sessions against simulated radio nodes over an in-memory
transport, producing an auditable message trace.

Message bodies are JSON-friendly dicts; the trace file is JSON lines with
a stable field order (seq, kind, from, to, timestamp, payload), which is
the contract for replay tooling.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .numerology import SPEED_OF_LIGHT
from .measurements import quantize_timing, TC_SECONDS
from .solvers import SolverOptions, rtt_solve, tdoa_solve

LPP_KINDS = {
    "LppRequestCapabilities",
    "LppProvideCapabilities",
    "LppRequestAssistanceData",
    "LppProvideAssistanceData",
    "LppRequestLocationInformation",
    "LppProvideLocationInformation",
}
NRPPA_KINDS = {
    "NrppaPositioningInformationRequest",
    "NrppaPositioningInformationResponse",
    "NrppaMeasurementRequest",
    "NrppaMeasurementResponse",
}
RRC_KINDS = {"RrcSrsConfig"}
MESSAGE_KINDS = LPP_KINDS | NRPPA_KINDS | RRC_KINDS

ABORT_KIND = "SessionAborted"

DEFAULT_TIMEOUT_S = 1.0
DEFAULT_LATENCY_S = 0.005


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Message:
    seq: int
    kind: str
    sender: str
    receiver: str
    timestamp: float
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "kind": self.kind,
                "from": self.sender,
                "to": self.receiver,
                "timestamp": self.timestamp,
                "payload": self.payload,
            },
            sort_keys=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "Message":
        d = json.loads(line)
        return cls(seq=d["seq"], kind=d["kind"], sender=d["from"],
                   receiver=d["to"], timestamp=d["timestamp"], payload=d["payload"])


def _role(node_id: str) -> str:
    return node_id.split(":")[0]


def check_routing(kind: str, sender: str, receiver: str):
    """Protocol-layer endpoint rules for every message."""
    roles = {_role(sender), _role(receiver)}
    if kind in LPP_KINDS:
        if roles != {"ue", "lmf"}:
            raise ProtocolError(f"{kind} must flow UE<->LMF, got {sender}->{receiver}")
    elif kind in NRPPA_KINDS:
        if roles != {"gnb", "lmf"}:
            raise ProtocolError(f"{kind} must flow gNB<->LMF, got {sender}->{receiver}")
    elif kind in RRC_KINDS:
        if not (_role(sender) == "gnb" and _role(receiver) == "ue"):
            raise ProtocolError(f"{kind} must flow gNB->UE, got {sender}->{receiver}")
    else:
        raise ProtocolError(f"unknown message kind {kind}")


class Transport:
    """In-memory message bus with fixed per-hop latency and timer events."""

    def __init__(self, latency_s: float = DEFAULT_LATENCY_S):
        self.latency_s = latency_s
        self.now = 0.0
        self._nodes: dict[str, "Node"] = {}
        self._queue: list = []
        self._seq = 0
        self.trace: list[dict] = []

    def register(self, node: "Node"):
        if node.node_id in self._nodes:
            raise ProtocolError(f"duplicate node id {node.node_id}")
        self._nodes[node.node_id] = node
        node.transport = self

    def send(self, kind: str, sender: str, receiver: str, payload: dict):
        check_routing(kind, sender, receiver)
        if receiver not in self._nodes:
            raise ProtocolError(f"unknown receiver {receiver}")
        self._seq += 1
        msg = Message(seq=self._seq, kind=kind, sender=sender, receiver=receiver,
                      timestamp=self.now, payload=payload)
        self.trace.append(json.loads(msg.to_json()))
        heapq.heappush(self._queue, (self.now + self.latency_s, self._seq, "msg", msg))
        return msg

    def schedule(self, delay_s: float, callback, tag: str = ""):
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay_s, self._seq, "timer", (callback, tag)))

    def record_abort(self, ue_id: str, reason: str):
        self.trace.append({
            "seq": None,
            "kind": ABORT_KIND,
            "from": None,
            "to": None,
            "timestamp": self.now,
            "payload": {"ue_id": ue_id, "reason": reason},
        })

    def run(self):
        while self._queue:
            t, _seq, what, item = heapq.heappop(self._queue)
            self.now = t
            if what == "timer":
                callback, _tag = item
                callback()
            else:
                self._nodes[item.receiver].handle(item)

    def dump_trace(self, path):
        with open(path, "w") as fh:
            for entry in self.trace:
                fh.write(json.dumps(entry, sort_keys=False) + "\n")


class Node:
    """Single-threaded state machine; reacts only to transport messages."""

    role = ""

    def __init__(self, node_id: str):
        if not node_id.startswith(self.role + ":"):
            raise ProtocolError(f"{type(self).__name__} id must start with {self.role!r}")
        self.node_id = node_id
        self.transport: Transport | None = None
        self.state = "idle"

    def send(self, kind, receiver, payload):
        self.transport.send(kind, self.node_id, receiver, payload)

    def handle(self, msg: Message):
        raise NotImplementedError


class Ue(Node):
    role = "ue"

    def __init__(self, node_id: str, hook=None, responsive: bool = True):
        super().__init__(node_id)
        self.hook = hook
        self.responsive = responsive
        self.srs_config: dict | None = None
        self.assistance: dict | None = None

    def handle(self, msg: Message):
        if not self.responsive:
            return
        if msg.kind == "RrcSrsConfig":
            self.srs_config = msg.payload
            self.state = "srs_configured"
        elif msg.kind == "LppProvideAssistanceData":
            self.assistance = msg.payload
            self.state = "assisted"
        elif msg.kind == "LppRequestLocationInformation":
            method = msg.payload["method"]
            trp_ids = msg.payload["trp_ids"]
            if method == "multi-rtt":
                values = [
                    {"trp_id": t, **self.hook.ue_rxtx(self.node_id, t)}
                    for t in trp_ids
                ]
                body = {"method": method, "ue_rxtx": values}
            elif method == "dl-tdoa":
                ref = msg.payload["ref_trp_id"]
                values = [
                    {"trp_id": t, "ref_trp_id": ref,
                     **self.hook.rstd(self.node_id, t, ref)}
                    for t in trp_ids if t != ref
                ]
                body = {"method": method, "ref_trp_id": ref, "rstd": values}
            else:
                raise ProtocolError(f"unsupported method {method}")
            self.send("LppProvideLocationInformation", msg.sender, body)
        else:
            raise ProtocolError(f"UE cannot handle {msg.kind}")


class Gnb(Node):
    role = "gnb"

    def __init__(self, node_id: str, trp_ids, hook=None):
        super().__init__(node_id)
        self.trp_ids = list(trp_ids)
        self.hook = hook

    def handle(self, msg: Message):
        if msg.kind == "NrppaPositioningInformationRequest":
            ue_id = msg.payload["ue_id"]
            srs = {"comb_size": 2, "n_symbols": 2, "comb_offset": 0}
            self.send("RrcSrsConfig", ue_id, {"ue_id": ue_id, "srs": srs})
            self.send("NrppaPositioningInformationResponse", msg.sender,
                      {"ue_id": ue_id, "srs": srs, "trp_ids": self.trp_ids})
            self.state = "configured"
        elif msg.kind == "NrppaMeasurementRequest":
            ue_id = msg.payload["ue_id"]
            values = [
                {"trp_id": t, **self.hook.gnb_rxtx(ue_id, t)}
                for t in self.trp_ids
            ]
            self.send("NrppaMeasurementResponse", msg.sender,
                      {"ue_id": ue_id, "gnb_rxtx": values})
        else:
            raise ProtocolError(f"gNB cannot handle {msg.kind}")


@dataclass
class SessionResult:
    ue_id: str
    status: str  # "fixed" or "aborted"
    fix: object | None = None
    error_m: float | None = None


class GeometricHook:
    """Ideal measurement provider: values from geometry, then quantized.

    Stands in for the full link simulation when exercising procedure flows.
    """

    def __init__(self, trp_positions: dict[int, np.ndarray], ue_positions: dict[str, np.ndarray],
                 k: int = 2, fr: str = "fr1", quantize: bool = True):
        self.trp_positions = {t: np.asarray(p, dtype=float) for t, p in trp_positions.items()}
        self.ue_positions = {u: np.asarray(p, dtype=float) for u, p in ue_positions.items()}
        self.k, self.fr, self.quantize = k, fr, quantize

    def _distance(self, ue_id, trp_id) -> float:
        return float(np.linalg.norm(self.ue_positions[ue_id] - self.trp_positions[trp_id]))

    def _report(self, seconds: float) -> dict:
        if self.quantize:
            rep = quantize_timing(seconds, self.k, self.fr)
            return {"value_tc": rep.value_tc, "k": rep.k, "fr": rep.fr}
        steps = seconds / TC_SECONDS
        return {"value_tc": steps, "k": self.k, "fr": self.fr}

    def ue_rxtx(self, ue_id, trp_id) -> dict:
        return self._report(self._distance(ue_id, trp_id) / SPEED_OF_LIGHT)

    def gnb_rxtx(self, ue_id, trp_id) -> dict:
        return self._report(self._distance(ue_id, trp_id) / SPEED_OF_LIGHT)

    def rstd(self, ue_id, trp_id, ref_trp_id) -> dict:
        dt = (self._distance(ue_id, trp_id) - self._distance(ue_id, ref_trp_id)) / SPEED_OF_LIGHT
        return self._report(dt)


class Lmf(Node):
    role = "lmf"

    def __init__(self, node_id: str, anchors: dict[int, np.ndarray],
                 prs_tree: dict | None = None,
                 solver_options: SolverOptions | None = None,
                 timeout_s: float = DEFAULT_TIMEOUT_S):
        super().__init__(node_id)
        self.anchors = {t: np.asarray(p, dtype=float) for t, p in anchors.items()}
        self.prs_tree = prs_tree or {}
        self.options = solver_options or SolverOptions()
        self.timeout_s = timeout_s
        self.sessions: dict[str, dict] = {}
        self.results: dict[str, SessionResult] = {}

    # -- session drivers

    def start_multi_rtt(self, ue_id: str, gnb_ids):
        self.sessions[ue_id] = {
            "method": "multi-rtt",
            "gnbs": list(gnb_ids),
            "pending_info": set(gnb_ids),
            "pending_meas": set(gnb_ids),
            "ue_rxtx": None,
            "gnb_rxtx": {},
            "trp_ids": [],
            "done": False,
        }
        for g in gnb_ids:
            self.send("NrppaPositioningInformationRequest", g, {"ue_id": ue_id})
        self.transport.schedule(self.timeout_s, lambda: self._timeout(ue_id), tag=ue_id)

    def start_dl_tdoa(self, ue_id: str, trp_ids, ref_trp_id: int):
        self.sessions[ue_id] = {
            "method": "dl-tdoa",
            "ref_trp_id": ref_trp_id,
            "trp_ids": list(trp_ids),
            "rstd": None,
            "done": False,
        }
        self.send("LppProvideAssistanceData", ue_id, {"prs_tree": self.prs_tree})
        self.send("LppRequestLocationInformation", ue_id,
                  {"method": "dl-tdoa", "trp_ids": list(trp_ids), "ref_trp_id": ref_trp_id})
        self.transport.schedule(self.timeout_s, lambda: self._timeout(ue_id), tag=ue_id)

    def _timeout(self, ue_id: str):
        s = self.sessions.get(ue_id)
        if s and not s["done"]:
            s["done"] = True
            self.transport.record_abort(ue_id, "timeout")
            self.results[ue_id] = SessionResult(ue_id=ue_id, status="aborted")

    # -- message handling

    def handle(self, msg: Message):
        if msg.kind == "NrppaPositioningInformationResponse":
            ue_id = msg.payload["ue_id"]
            s = self.sessions[ue_id]
            s["pending_info"].discard(msg.sender)
            s["trp_ids"].extend(msg.payload["trp_ids"])
            if not s["pending_info"]:
                # all radio nodes configured: provide assistance, ask the UE
                self.send("LppProvideAssistanceData", ue_id, {"prs_tree": self.prs_tree})
                self.send("LppRequestLocationInformation", ue_id,
                          {"method": "multi-rtt", "trp_ids": s["trp_ids"]})
        elif msg.kind == "LppProvideLocationInformation":
            ue_id = msg.sender
            s = self.sessions[ue_id]
            if s["done"]:
                return
            if s["method"] == "multi-rtt":
                s["ue_rxtx"] = msg.payload["ue_rxtx"]
                # UE report first, then collect the radio-node side
                for g in s["gnbs"]:
                    self.send("NrppaMeasurementRequest", g, {"ue_id": ue_id})
            else:
                s["rstd"] = msg.payload["rstd"]
                self._solve_dl_tdoa(ue_id)
        elif msg.kind == "NrppaMeasurementResponse":
            ue_id = msg.payload["ue_id"]
            s = self.sessions[ue_id]
            if s["done"]:
                return
            s["pending_meas"].discard(msg.sender)
            for entry in msg.payload["gnb_rxtx"]:
                s["gnb_rxtx"][entry["trp_id"]] = entry
            if not s["pending_meas"]:
                self._solve_multi_rtt(ue_id)
        elif msg.kind == "LppRequestAssistanceData":
            if "ue_id" not in msg.payload:
                raise ProtocolError("malformed assistance request")
            self.send("LppProvideAssistanceData", msg.sender, {"prs_tree": self.prs_tree})
        else:
            raise ProtocolError(f"LMF cannot handle {msg.kind}")

    # -- solving

    def _solve_multi_rtt(self, ue_id: str):
        s = self.sessions[ue_id]
        s["done"] = True
        fix = solve_multi_rtt_report(self.anchors, s["ue_rxtx"], s["gnb_rxtx"], self.options)
        self.results[ue_id] = SessionResult(ue_id=ue_id, status="fixed", fix=fix)

    def _solve_dl_tdoa(self, ue_id: str):
        s = self.sessions[ue_id]
        s["done"] = True
        fix = solve_dl_tdoa_report(self.anchors, s["rstd"], self.options)
        self.results[ue_id] = SessionResult(ue_id=ue_id, status="fixed", fix=fix)


def _seconds(entry: dict) -> float:
    return entry["value_tc"] * TC_SECONDS


def solve_multi_rtt_report(anchors: dict[int, np.ndarray], ue_rxtx, gnb_rxtx,
                           options: SolverOptions):
    """Round-trip solve from reported one-sided intervals (shared by the
    live session and offline replay, so both produce identical fixes)."""
    trp_order = sorted(anchors)
    index = {t: i for i, t in enumerate(trp_order)}
    positions = np.array([anchors[t] for t in trp_order])
    ranges = []
    ue_by_trp = {e["trp_id"]: e for e in ue_rxtx}
    for trp_id, gnb_entry in sorted(gnb_rxtx.items()):
        if trp_id not in ue_by_trp:
            continue
        total = _seconds(ue_by_trp[trp_id]) + _seconds(gnb_entry)
        ranges.append((index[trp_id], max(total, 0.0) * SPEED_OF_LIGHT / 2.0))
    return rtt_solve(positions, ranges, options)


def solve_dl_tdoa_report(anchors: dict[int, np.ndarray], rstd_entries,
                         options: SolverOptions):
    trp_order = sorted(anchors)
    index = {t: i for i, t in enumerate(trp_order)}
    positions = np.array([anchors[t] for t in trp_order])
    rows = [
        (index[e["trp_id"]], index[e["ref_trp_id"]], _seconds(e) * SPEED_OF_LIGHT)
        for e in rstd_entries
    ]
    return tdoa_solve(positions, rows, options)


def run_multi_rtt(lmf: Lmf, gnbs, ues, transport: Transport):
    """Drive one round-trip-time session per UE; returns (results, trace)."""
    for node in [lmf, *gnbs, *ues]:
        if node.transport is not transport:
            transport.register(node)
    for ue in ues:
        lmf.start_multi_rtt(ue.node_id, [g.node_id for g in gnbs])
    transport.run()
    return dict(lmf.results), list(transport.trace)


def run_dl_tdoa(lmf: Lmf, ues, transport: Transport, trp_ids, ref_trp_id):
    for node in [lmf, *ues]:
        if node.transport is not transport:
            transport.register(node)
    for ue in ues:
        lmf.start_dl_tdoa(ue.node_id, trp_ids, ref_trp_id)
    transport.run()
    return dict(lmf.results), list(transport.trace)


def request_assistance_on_demand(ue: Ue, lmf: Lmf, transport: Transport) -> dict:
    """UE-initiated assistance request; returns the delivered payload."""
    for node in (ue, lmf):
        if node.transport is not transport:
            transport.register(node)
    transport.send("LppRequestAssistanceData", ue.node_id, lmf.node_id,
                   {"ue_id": ue.node_id})
    transport.run()
    return ue.assistance


def load_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_solve(trace: list[dict], anchors: dict[int, np.ndarray],
                 options: SolverOptions) -> dict[str, object]:
    """Re-run the solver on measurement reports extracted from a trace.

    Produces exactly the live fixes: the same inputs feed the same solver.
    """
    fixes: dict[str, object] = {}
    ue_reports: dict[str, dict] = {}
    gnb_reports: dict[str, dict] = {}
    for entry in trace:
        if entry["kind"] == "LppProvideLocationInformation":
            ue_reports[entry["from"]] = entry["payload"]
        elif entry["kind"] == "NrppaMeasurementResponse":
            ue_id = entry["payload"]["ue_id"]
            store = gnb_reports.setdefault(ue_id, {})
            for item in entry["payload"]["gnb_rxtx"]:
                store[item["trp_id"]] = item
    for ue_id, payload in ue_reports.items():
        if payload["method"] == "multi-rtt":
            if ue_id in gnb_reports:
                fixes[ue_id] = solve_multi_rtt_report(
                    anchors, payload["ue_rxtx"], gnb_reports[ue_id], options)
        else:
            fixes[ue_id] = solve_dl_tdoa_report(anchors, payload["rstd"], options)
    return fixes
