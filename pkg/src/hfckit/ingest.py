"""Snapshot serialization, the technician change journal, and outage accounting.

Snapshots are canonical JSON (sorted keys, two-space indent, trailing
newline) so that save(load(f)) is byte-identical on canonical files. The
journal is newline-delimited JSON, one change event or outage record per
line. Outages are stored as merged intervals; the scalar downtime counter
of the element model is derived on demand for any query window.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    InvalidReplacement,
    InvertedInterval,
    NotApproved,
    SchemaError,
    UnknownElement,
    UnknownTarget,
    VersionUnsupported,
)
from .model import (
    Edge,
    Element,
    ElementClass,
    ElementId,
    GeoShape,
    Layer,
    LayerInterface,
    Rank,
    ShapeKind,
    Tombstone,
    Topology,
    validate_topology,
)

SCHEMA_VERSION = 1


class Action(str, Enum):
    REPLACE_COMPONENT = "ReplaceComponent"
    ADJUST_COMPONENT = "AdjustComponent"
    SWAP_END_DEVICE = "SwapEndDevice"
    RECORD_MEASUREMENT = "RecordMeasurement"


class EventStatus(str, Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"


@dataclass
class ChangeEvent:
    """A technician field action awaiting (or past) supervisor review."""

    event_id: str
    timestamp: float
    technician: str
    action: Action
    target: ElementId
    payload: dict = field(default_factory=dict)
    status: EventStatus = EventStatus.PENDING


@dataclass(frozen=True)
class OutageRecord:
    """One out-of-service interval for an element interface."""

    element: ElementId
    interface_id: int
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise InvertedInterval(
                f"outage start {self.start} must precede end {self.end}"
            )


class Journal:
    """Append-only event log plus merged per-interface outage intervals.

    Appends are serialized by contract (single writer); reads are safe at
    any time. With auto_approve set, appended Pending events are promoted
    to Approved, which is meant for test rigs rather than production use.
    """

    def __init__(self, auto_approve: bool = False):
        self.auto_approve = auto_approve
        self.events: list[ChangeEvent] = []
        self._outages: dict[tuple[ElementId, int], list[list[float]]] = {}

    def append_event(self, ev: ChangeEvent) -> ChangeEvent:
        if self.auto_approve and ev.status is EventStatus.PENDING:
            ev = replace_status(ev, EventStatus.APPROVED)
        self.events.append(ev)
        return ev

    def record_outage(self, rec: OutageRecord) -> None:
        key = (rec.element, rec.interface_id)
        ivals = self._outages.setdefault(key, [])
        s, e = rec.start, rec.end
        i = bisect.bisect_left(ivals, [s, e])
        # Absorb neighbors that touch or overlap [s, e].
        while i > 0 and ivals[i - 1][1] >= s:
            s = min(s, ivals[i - 1][0])
            e = max(e, ivals[i - 1][1])
            del ivals[i - 1]
            i -= 1
        while i < len(ivals) and ivals[i][0] <= e:
            e = max(e, ivals[i][1])
            del ivals[i]
        ivals.insert(i, [s, e])

    def outages_for(
        self, element: ElementId, interface_id: int
    ) -> tuple[tuple[float, float], ...]:
        return tuple(
            (s, e) for s, e in self._outages.get((element, interface_id), ())
        )

    def downtime(
        self,
        element: ElementId,
        interface_id: int,
        window: tuple[float, float],
    ) -> float:
        t0, t1 = window
        total = 0.0
        for s, e in self._outages.get((element, interface_id), ()):
            lo = max(s, t0)
            hi = min(e, t1)
            if hi > lo:
                total += hi - lo
        return total


def replace_status(ev: ChangeEvent, status: EventStatus) -> ChangeEvent:
    return ChangeEvent(
        event_id=ev.event_id,
        timestamp=ev.timestamp,
        technician=ev.technician,
        action=ev.action,
        target=ev.target,
        payload=ev.payload,
        status=status,
    )


def record_outage(journal: Journal, rec: OutageRecord) -> Journal:
    journal.record_outage(rec)
    return journal


def downtime_of(
    journal: Journal,
    element: ElementId,
    interface_id: int,
    window: tuple[float, float],
) -> float:
    """Total outage seconds for one interface intersected with the window."""
    return journal.downtime(element, interface_id, window)


# --------------------------------------------------------------------------
# Snapshot codec
# --------------------------------------------------------------------------

def _eid_doc(eid: ElementId) -> dict:
    return {
        "token": eid.token,
        "fiber_node": eid.fiber_node,
        "hub": eid.hub,
        "system": eid.system,
    }


def _iface_doc(iface: LayerInterface) -> dict:
    return {
        "interface_id": iface.interface_id,
        "layer": iface.layer.value,
        "interface_rank": iface.rank.value,
        "interface_category": iface.category,
        "interface_type": iface.iface_type,
        "lower_binding": iface.lower_binding,
        "attrs": dict(sorted(iface.attrs.items())),
        "downtime_counter_sec": iface.downtime_sec,
        "observed_sec": iface.observed_sec,
    }


def _element_doc(el: Element) -> dict:
    return {
        "element_id": _eid_doc(el.id),
        "name": el.name,
        "element_class": el.element_class.value,
        "shape": {
            "kind": el.shape.kind.value,
            "vertices": [list(v) for v in el.shape.vertices],
        },
        "layers_present": sorted(l.value for l in el.layers_present),
        "interfaces": [
            _iface_doc(i)
            for i in sorted(el.interfaces, key=lambda i: i.interface_id)
        ],
        "intended_paths": sorted([list(p) for p in el.intended_paths]),
    }


def _edge_doc(edge: Edge) -> dict:
    return {
        "a": _eid_doc(edge.a),
        "interface_a": edge.interface_a,
        "b": _eid_doc(edge.b),
        "interface_b": edge.interface_b,
        "layer": edge.layer.value,
    }


def save_snapshot(topo: Topology) -> bytes:
    """Serialize a snapshot to canonical JSON bytes."""
    doc = {
        "version": SCHEMA_VERSION,
        "system": topo.system,
        "hubs": list(topo.hubs),
        "fiber_nodes": list(topo.fiber_nodes),
        "grouping": {
            "fiber_node_to_hub": dict(sorted(topo.node_to_hub.items())),
            "hub_to_system": dict(sorted(topo.hub_to_system.items())),
        },
        "downstream_root": {
            node: _eid_doc(eid)
            for node, eid in sorted(topo.downstream_root.items())
        },
        "elements": [
            _element_doc(e)
            for e in sorted(topo.elements, key=lambda e: e.id.sort_key)
        ],
        "edges": [
            _edge_doc(e) for e in sorted(topo.edges, key=lambda e: e.sort_key)
        ],
        "tombstones": [
            {
                "element": _element_doc(t.element),
                "event_id": t.event_id,
                "timestamp": t.timestamp,
            }
            for t in topo.tombstones
        ],
    }
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


class _Dec:
    """Typed field access with schema-error paths."""

    @staticmethod
    def get(obj: Any, key: str, typ, path: str, optional: bool = False):
        if not isinstance(obj, dict):
            raise SchemaError("expected an object", path)
        if key not in obj:
            if optional:
                return None
            raise SchemaError(f"missing key {key!r}", path)
        val = obj[key]
        if val is None and optional:
            return None
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or isinstance(val, bool) and typ is not bool:
            raise SchemaError(
                f"{key!r} must be {getattr(typ, '__name__', typ)}", path
            )
        return val

    @staticmethod
    def enum(obj: Any, key: str, enum_cls, path: str):
        raw = _Dec.get(obj, key, str, path)
        try:
            return enum_cls(raw)
        except ValueError:
            raise SchemaError(
                f"{key!r} value {raw!r} not one of "
                f"{[e.value for e in enum_cls]}",
                path,
            ) from None


def _decode_eid(doc: Any, path: str) -> ElementId:
    token = _Dec.get(doc, "token", str, path)
    return ElementId(
        token=token,
        fiber_node=_Dec.get(doc, "fiber_node", str, path, optional=True),
        hub=_Dec.get(doc, "hub", str, path, optional=True),
        system=_Dec.get(doc, "system", str, path, optional=True),
    )


def _decode_iface(doc: Any, path: str) -> LayerInterface:
    attrs = _Dec.get(doc, "attrs", dict, path, optional=True) or {}
    return LayerInterface(
        interface_id=_Dec.get(doc, "interface_id", int, path),
        layer=_Dec.enum(doc, "layer", Layer, path),
        rank=_Dec.enum(doc, "interface_rank", Rank, path),
        category=_Dec.get(doc, "interface_category", str, path),
        iface_type=_Dec.get(doc, "interface_type", str, path),
        lower_binding=_Dec.get(doc, "lower_binding", int, path, optional=True),
        attrs=dict(attrs),
        downtime_sec=_Dec.get(doc, "downtime_counter_sec", float, path),
        observed_sec=_Dec.get(doc, "observed_sec", float, path),
    )


def decode_element(doc: Any, path: str = "$.element") -> Element:
    eid = _decode_eid(_Dec.get(doc, "element_id", dict, path), f"{path}.element_id")
    shape_doc = _Dec.get(doc, "shape", dict, path)
    kind = _Dec.enum(shape_doc, "kind", ShapeKind, f"{path}.shape")
    raw_verts = _Dec.get(shape_doc, "vertices", list, f"{path}.shape")
    verts = []
    for i, v in enumerate(raw_verts):
        if (
            not isinstance(v, list)
            or len(v) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)
        ):
            raise SchemaError(
                "vertex must be [lat, lon]", f"{path}.shape.vertices[{i}]"
            )
        verts.append((float(v[0]), float(v[1])))
    layers = frozenset(
        Layer(v) if v in Layer._value2member_map_ else _bad_layer(v, path)
        for v in _Dec.get(doc, "layers_present", list, path)
    )
    ifaces = [
        _decode_iface(d, f"{path}.interfaces[{i}]")
        for i, d in enumerate(_Dec.get(doc, "interfaces", list, path))
    ]
    paths = []
    for i, p in enumerate(_Dec.get(doc, "intended_paths", list, path)):
        if not isinstance(p, list) or len(p) != 2 or not all(isinstance(x, int) for x in p):
            raise SchemaError("pair must be [from, to]", f"{path}.intended_paths[{i}]")
        paths.append((p[0], p[1]))
    return Element(
        id=eid,
        element_class=_Dec.enum(doc, "element_class", ElementClass, path),
        name=_Dec.get(doc, "name", str, path),
        shape=GeoShape(kind, tuple(verts)),
        layers_present=layers,
        interfaces=ifaces,
        intended_paths=paths,
    )


def _bad_layer(v, path):
    raise SchemaError(f"unknown layer {v!r}", f"{path}.layers_present")


def load_snapshot(data: bytes) -> Topology:
    """Parse snapshot bytes into a Topology.

    Structural problems in the JSON raise SchemaError with the offending
    path; semantic invariant breaches load fine and are reported by
    validate_topology, matching the in-memory original.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    version = _Dec.get(doc, "version", int, "$")
    if version != SCHEMA_VERSION:
        raise VersionUnsupported(
            f"snapshot version {version}; this build reads version {SCHEMA_VERSION}"
        )
    system = _Dec.get(doc, "system", str, "$")
    hubs = _Dec.get(doc, "hubs", list, "$")
    grouping = _Dec.get(doc, "grouping", dict, "$")
    n2h = _Dec.get(grouping, "fiber_node_to_hub", dict, "$.grouping")
    h2s = _Dec.get(grouping, "hub_to_system", dict, "$.grouping")
    elements = [
        decode_element(d, f"$.elements[{i}]")
        for i, d in enumerate(_Dec.get(doc, "elements", list, "$"))
    ]
    edges = []
    for i, d in enumerate(_Dec.get(doc, "edges", list, "$")):
        path = f"$.edges[{i}]"
        edges.append(
            Edge(
                a=_decode_eid(_Dec.get(d, "a", dict, path), f"{path}.a"),
                interface_a=_Dec.get(d, "interface_a", int, path),
                b=_decode_eid(_Dec.get(d, "b", dict, path), f"{path}.b"),
                interface_b=_Dec.get(d, "interface_b", int, path),
                layer=_Dec.enum(d, "layer", Layer, path),
            )
        )
    roots = {}
    for node, d in _Dec.get(doc, "downstream_root", dict, "$").items():
        roots[node] = _decode_eid(d, f"$.downstream_root[{node}]")
    tombstones = []
    for i, d in enumerate(_Dec.get(doc, "tombstones", list, "$")):
        path = f"$.tombstones[{i}]"
        tombstones.append(
            Tombstone(
                element=decode_element(_Dec.get(d, "element", dict, path), f"{path}.element"),
                event_id=_Dec.get(d, "event_id", str, path),
                timestamp=_Dec.get(d, "timestamp", float, path),
            )
        )
    return Topology(
        elements,
        edges,
        system=system,
        hubs=[str(h) for h in hubs],
        node_to_hub={str(k): str(v) for k, v in n2h.items()},
        hub_to_system={str(k): str(v) for k, v in h2s.items()},
        downstream_root=roots,
        tombstones=tombstones,
    )


def read_snapshot(path: str | Path) -> Topology:
    return load_snapshot(Path(path).read_bytes())


def write_snapshot(topo: Topology, path: str | Path) -> None:
    Path(path).write_bytes(save_snapshot(topo))


# --------------------------------------------------------------------------
# Change events
# --------------------------------------------------------------------------

def apply_change_event(topo: Topology, ev: ChangeEvent) -> Topology:
    """Apply one approved change event, producing a new snapshot.

    The input snapshot is never modified. Replaced elements are kept as
    tombstones so accumulated downtime history stays attributable.
    """
    if ev.status is not EventStatus.APPROVED:
        raise NotApproved(f"event {ev.event_id} is {ev.status.value}")
    try:
        target = topo.resolve(ev.target)
    except UnknownElement as exc:
        raise UnknownTarget(str(exc)) from None

    if ev.action is Action.RECORD_MEASUREMENT:
        return topo

    if ev.action is Action.ADJUST_COMPONENT:
        return _adjust(topo, target, ev)

    if ev.action in (Action.REPLACE_COMPONENT, Action.SWAP_END_DEVICE):
        return _replace(topo, target, ev)

    raise ValueError(f"unhandled action {ev.action}")


def _rebuild(
    topo: Topology,
    elements: Iterable[Element],
    edges: Iterable[Edge],
    tombstones: Iterable[Tombstone],
    downstream_root: Mapping[str, ElementId] | None = None,
) -> Topology:
    return Topology(
        elements,
        edges,
        system=topo.system,
        hubs=topo.hubs,
        node_to_hub=topo.node_to_hub,
        hub_to_system=topo.hub_to_system,
        downstream_root=downstream_root or topo.downstream_root,
        tombstones=tombstones,
    )


def _adjust(topo: Topology, target: Element, ev: ChangeEvent) -> Topology:
    updated = target.copy()
    if "name" in ev.payload:
        updated.name = str(ev.payload["name"])
    attrs = ev.payload.get("attrs", {})
    iface_id = ev.payload.get("interface_id")
    if attrs:
        if iface_id is None:
            raise InvalidReplacement(
                "AdjustComponent with attrs requires an interface_id"
            )
        iface = updated.interface(int(iface_id))
        if iface is None:
            raise InvalidReplacement(
                f"{target.id.token} has no interface {iface_id}"
            )
        iface.attrs.update(attrs)
    elements = [updated if e.id == target.id else e for e in topo.elements]
    return _rebuild(topo, elements, topo.edges, topo.tombstones)


def _replace(topo: Topology, old: Element, ev: ChangeEvent) -> Topology:
    doc = ev.payload.get("element")
    if doc is None:
        raise InvalidReplacement(
            f"{ev.action.value} event {ev.event_id} has no replacement element"
        )
    new_el = decode_element(doc, "$.payload.element")

    if ev.action is Action.SWAP_END_DEVICE:
        if not (old.is_end_device and new_el.is_end_device):
            raise InvalidReplacement(
                "SwapEndDevice requires end-device classes on both sides"
            )

    raw_map = ev.payload.get("interface_map", {})
    iface_map = {int(k): int(v) for k, v in raw_map.items()}

    # Every edge landing on the old element must find a compatible
    # interface on the replacement.
    new_edges: list[Edge] = []
    for edge in topo.edges:
        if not edge.touches(old.id):
            new_edges.append(edge)
            continue
        old_if = edge.interface_on(old.id)
        new_if = iface_map.get(old_if, old_if)
        iface = new_el.interface(new_if)
        if iface is None or iface.layer is not edge.layer:
            raise InvalidReplacement(
                f"replacement {new_el.id.token} lacks a {edge.layer.value} "
                f"interface {new_if} required by an attached connection"
            )
        if edge.a == old.id:
            new_edges.append(
                Edge(new_el.id, new_if, edge.b, edge.interface_b, edge.layer)
            )
        else:
            new_edges.append(
                Edge(edge.a, edge.interface_a, new_el.id, new_if, edge.layer)
            )

    elements = [e for e in topo.elements if e.id != old.id]
    elements.append(new_el)
    roots = dict(topo.downstream_root)
    for node, eid in roots.items():
        if eid == old.id:
            roots[node] = new_el.id
    tombstones = list(topo.tombstones)
    tombstones.append(Tombstone(old.copy(), ev.event_id, ev.timestamp))

    candidate = _rebuild(topo, elements, new_edges, tombstones, roots)
    base_violations = set(validate_topology(topo))
    introduced = [
        v for v in validate_topology(candidate) if v not in base_violations
    ]
    if introduced:
        first = introduced[0]
        raise InvalidReplacement(
            f"replacement introduces {len(introduced)} violation(s), "
            f"first: {first.kind}: {first.detail}"
        )
    return candidate


# --------------------------------------------------------------------------
# Journal files
# --------------------------------------------------------------------------

def _event_doc(ev: ChangeEvent) -> dict:
    return {
        "kind": "change_event",
        "event_id": ev.event_id,
        "timestamp": ev.timestamp,
        "technician": ev.technician,
        "action": ev.action.value,
        "target": _eid_doc(ev.target),
        "payload": ev.payload,
        "status": ev.status.value,
    }


def _outage_doc(rec: OutageRecord) -> dict:
    return {
        "kind": "outage",
        "element": _eid_doc(rec.element),
        "interface_id": rec.interface_id,
        "start": rec.start,
        "end": rec.end,
    }


def journal_lines(journal: Journal) -> list[str]:
    lines = [
        json.dumps(_event_doc(ev), sort_keys=True) for ev in journal.events
    ]
    for (eid, iface_id), ivals in sorted(
        journal._outages.items(), key=lambda kv: (kv[0][0].sort_key, kv[0][1])
    ):
        for s, e in ivals:
            lines.append(
                json.dumps(
                    _outage_doc(OutageRecord(eid, iface_id, s, e)),
                    sort_keys=True,
                )
            )
    return lines


def save_journal(journal: Journal, path: str | Path) -> None:
    text = "".join(line + "\n" for line in journal_lines(journal))
    Path(path).write_text(text, encoding="utf-8")


def parse_journal_line(line: str, lineno: int = 0) -> ChangeEvent | OutageRecord:
    path = f"$.line[{lineno}]"
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", path) from None
    kind = _Dec.get(doc, "kind", str, path)
    if kind == "outage":
        return OutageRecord(
            element=_decode_eid(_Dec.get(doc, "element", dict, path), path),
            interface_id=_Dec.get(doc, "interface_id", int, path),
            start=_Dec.get(doc, "start", float, path),
            end=_Dec.get(doc, "end", float, path),
        )
    if kind == "change_event":
        return ChangeEvent(
            event_id=_Dec.get(doc, "event_id", str, path),
            timestamp=_Dec.get(doc, "timestamp", float, path),
            technician=_Dec.get(doc, "technician", str, path),
            action=_Dec.enum(doc, "action", Action, path),
            target=_decode_eid(_Dec.get(doc, "target", dict, path), path),
            payload=_Dec.get(doc, "payload", dict, path),
            status=_Dec.enum(doc, "status", EventStatus, path),
        )
    raise SchemaError(f"unknown record kind {kind!r}", path)


def load_journal(path: str | Path, auto_approve: bool = False) -> Journal:
    journal = Journal(auto_approve=auto_approve)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = parse_journal_line(line, lineno)
            if isinstance(rec, OutageRecord):
                journal.record_outage(rec)
            else:
                journal.append_event(rec)
    return journal
