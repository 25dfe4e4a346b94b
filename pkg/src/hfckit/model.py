"""Multi-layer HFC plant topology model.

Elements carry per-layer interfaces with cross-layer bindings. PHY
connectivity inside a fiber-node scope is a rooted tree oriented away from
the node; MAC and IP connectivity may be meshes and are kept as full edge
lists. Long names identify a device by the ordered element path from an
anchor, with an egress port index wherever the path branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    AmbiguousElement,
    AmbiguousPath,
    CrossDomain,
    LayerAbsent,
    MalformedLongName,
    NoPath,
    UnknownElement,
)


class Layer(str, Enum):
    PHY = "PHY"
    MAC = "MAC"
    IP = "IP"
    SVC = "SVC"


class ElementClass(str, Enum):
    FIBER_NODE = "FiberNode"
    AMPLIFIER = "Amplifier"
    TAP = "Tap"
    SPLITTER = "Splitter"
    CM = "CM"
    CMTS = "CMTS"
    EDGE_QAM = "EdgeQAM"
    SWITCH = "Switch"
    SERVER = "Server"
    TERMINAL = "Terminal"
    CABLE_SEGMENT = "CableSegment"
    CONDUIT = "Conduit"
    NETWORK = "Network"
    OTHER = "Other"


class Rank(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


class ShapeKind(str, Enum):
    POINT = "point"
    LINE = "line"
    POLYGON = "polygon"


# Subscriber-side devices: the population units for domain membership,
# group statistics and consumption accounting.
END_DEVICE_CLASSES = frozenset(
    {ElementClass.CM, ElementClass.SERVER, ElementClass.TERMINAL}
)

_ALL_LAYERS = frozenset(Layer)
_PHY_ONLY = frozenset({Layer.PHY})
_PHY_MAC = frozenset({Layer.PHY, Layer.MAC})
_PHY_MAC_IP = frozenset({Layer.PHY, Layer.MAC, Layer.IP})

# Which layers each element class may participate in. Passive coax plant is
# PHY-only; modems and switches add MAC; the CMTS routes at IP; hosts and
# terminals reach the service layer. Network/Other are unconstrained.
CLASS_LAYERS: Mapping[ElementClass, frozenset[Layer]] = {
    ElementClass.FIBER_NODE: _PHY_ONLY,
    ElementClass.AMPLIFIER: _PHY_ONLY,
    ElementClass.TAP: _PHY_ONLY,
    ElementClass.SPLITTER: _PHY_ONLY,
    ElementClass.CABLE_SEGMENT: _PHY_ONLY,
    ElementClass.CONDUIT: _PHY_ONLY,
    ElementClass.CM: _PHY_MAC,
    ElementClass.SWITCH: _PHY_MAC,
    ElementClass.EDGE_QAM: _PHY_MAC,
    ElementClass.CMTS: _PHY_MAC_IP,
    ElementClass.SERVER: _ALL_LAYERS,
    ElementClass.TERMINAL: _ALL_LAYERS,
    ElementClass.NETWORK: _ALL_LAYERS,
    ElementClass.OTHER: _ALL_LAYERS,
}

# Long-name token alphabet. '-' separates hops and '.' introduces a port
# index, so neither may appear inside an element token.
_TOKEN_CHARS = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789/"
)


def is_valid_token(token: str) -> bool:
    return bool(token) and all(c in _TOKEN_CHARS for c in token)


@dataclass(frozen=True)
class ElementId:
    """Scoped element identity: token unique within its fiber-node scope."""

    token: str
    fiber_node: str | None = None
    hub: str | None = None
    system: str | None = None

    @property
    def sort_key(self) -> tuple[str, str, str, str]:
        return (self.system or "", self.hub or "", self.fiber_node or "", self.token)

    def __str__(self) -> str:
        return self.token


@dataclass(frozen=True)
class GeoShape:
    """Geographic footprint: a point, a two-vertex line, or a polygon."""

    kind: ShapeKind
    vertices: tuple[tuple[float, float], ...]

    @classmethod
    def point(cls, lat: float, lon: float) -> "GeoShape":
        return cls(ShapeKind.POINT, ((lat, lon),))

    @classmethod
    def line(cls, a: tuple[float, float], b: tuple[float, float]) -> "GeoShape":
        return cls(ShapeKind.LINE, (a, b))

    @classmethod
    def polygon(cls, *vertices: tuple[float, float]) -> "GeoShape":
        return cls(ShapeKind.POLYGON, tuple(vertices))

    def arity_error(self) -> str | None:
        n = len(self.vertices)
        if self.kind is ShapeKind.POINT and n != 1:
            return f"point shape needs exactly 1 vertex, has {n}"
        if self.kind is ShapeKind.LINE and n != 2:
            return f"line shape needs exactly 2 vertices, has {n}"
        if self.kind is ShapeKind.POLYGON and n < 3:
            return f"polygon shape needs >= 3 vertices, has {n}"
        return None


@dataclass
class LayerInterface:
    """One interface of an element at one layer.

    `lower_binding` points at the interface_id of the same element one layer
    down (MAC -> PHY, IP -> MAC). `downtime_sec` is the cumulative scalar
    counter; windowed accounting lives in the outage journal.
    """

    interface_id: int
    layer: Layer
    rank: Rank = Rank.PRIMARY
    category: str = ""
    iface_type: str = ""
    lower_binding: int | None = None
    attrs: dict = field(default_factory=dict)
    downtime_sec: float = 0.0
    observed_sec: float = 0.0

    def copy(self) -> "LayerInterface":
        return LayerInterface(
            interface_id=self.interface_id,
            layer=self.layer,
            rank=self.rank,
            category=self.category,
            iface_type=self.iface_type,
            lower_binding=self.lower_binding,
            attrs=dict(self.attrs),
            downtime_sec=self.downtime_sec,
            observed_sec=self.observed_sec,
        )


@dataclass
class Element:
    """A network component with per-layer interfaces and intended paths."""

    id: ElementId
    element_class: ElementClass = ElementClass.OTHER
    name: str = ""
    shape: GeoShape = GeoShape.point(0.0, 0.0)
    layers_present: frozenset[Layer] = _PHY_ONLY
    interfaces: list[LayerInterface] = field(default_factory=list)
    intended_paths: list[tuple[int, int]] = field(default_factory=list)

    def interface(self, interface_id: int) -> LayerInterface | None:
        for iface in self.interfaces:
            if iface.interface_id == interface_id:
                return iface
        return None

    def interfaces_at(self, layer: Layer) -> Iterator[LayerInterface]:
        return (i for i in self.interfaces if i.layer is layer)

    @property
    def is_end_device(self) -> bool:
        return self.element_class in END_DEVICE_CLASSES

    def copy(self) -> "Element":
        return Element(
            id=self.id,
            element_class=self.element_class,
            name=self.name,
            shape=self.shape,
            layers_present=self.layers_present,
            interfaces=[i.copy() for i in self.interfaces],
            intended_paths=list(self.intended_paths),
        )


@dataclass(frozen=True)
class Edge:
    """A connection between two element interfaces at one layer."""

    a: ElementId
    interface_a: int
    b: ElementId
    interface_b: int
    layer: Layer

    @property
    def sort_key(self):
        return (
            self.layer.value,
            self.a.sort_key,
            self.interface_a,
            self.b.sort_key,
            self.interface_b,
        )

    def other(self, eid: ElementId) -> tuple[ElementId, int]:
        if eid == self.a:
            return self.b, self.interface_b
        if eid == self.b:
            return self.a, self.interface_a
        raise ValueError(f"{eid} is not an endpoint of this edge")

    def interface_on(self, eid: ElementId) -> int:
        if eid == self.a:
            return self.interface_a
        if eid == self.b:
            return self.interface_b
        raise ValueError(f"{eid} is not an endpoint of this edge")

    def touches(self, eid: ElementId) -> bool:
        return eid == self.a or eid == self.b


@dataclass(frozen=True)
class Tombstone:
    """A replaced element retained for reliability continuity."""

    element: "Element"
    event_id: str
    timestamp: float


@dataclass(frozen=True)
class Violation:
    """One structural invariant breach found by validate_topology."""

    kind: str
    elements: tuple[ElementId, ...]
    detail: str

    @property
    def sort_key(self):
        first = self.elements[0].sort_key if self.elements else ("", "", "", "")
        return (first, self.kind, self.detail)


@dataclass(frozen=True)
class Hop:
    token: str
    port: int | None = None

    def render(self) -> str:
        return self.token if self.port is None else f"{self.token}.{self.port}"


@dataclass(frozen=True, eq=False)
class LongName:
    """Anchored element path; equality ignores scope metadata on the anchor."""

    anchor: ElementId
    hops: tuple[Hop, ...]

    def render(self) -> str:
        return "-".join(h.render() for h in self.hops)

    @property
    def device_token(self) -> str:
        return self.hops[-1].token

    def __str__(self) -> str:
        return self.render()

    def __eq__(self, other) -> bool:
        if not isinstance(other, LongName):
            return NotImplemented
        return self.anchor.token == other.anchor.token and self.hops == other.hops

    def __hash__(self) -> int:
        return hash((self.anchor.token, self.hops))


@dataclass(frozen=True)
class PathStep:
    """One hop on a derived path with its egress edge and branch count."""

    element: Element
    edge_to_next: Edge | None
    egress_count: int


@dataclass
class PhyTree:
    """Oriented PHY tree of one fiber-node scope, rooted at the node anchor."""

    node: str
    root: ElementId
    parent: dict[ElementId, tuple[ElementId, Edge]]
    children: dict[ElementId, tuple[tuple[ElementId, Edge], ...]]
    depth: dict[ElementId, int]
    order: tuple[ElementId, ...]
    leaves: dict[ElementId, frozenset[ElementId]]
    unreachable: tuple[ElementId, ...]
    cycles: tuple[tuple[ElementId, ...], ...]

    def contains(self, eid: ElementId) -> bool:
        return eid in self.depth

    def ancestors(self, eid: ElementId) -> list[ElementId]:
        """Chain from eid up to the root, inclusive on both ends."""
        chain = [eid]
        while chain[-1] in self.parent:
            chain.append(self.parent[chain[-1]][0])
        return chain

    def edges(self) -> list[Edge]:
        """Tree edges in deterministic preorder."""
        out: list[Edge] = []
        for eid in self.order:
            for _, edge in self.children.get(eid, ()):
                out.append(edge)
        return out


class Topology:
    """Immutable snapshot of elements, edges, grouping and tree anchors.

    All read operations are pure; mutation happens by constructing a new
    snapshot (see ingest.apply_change_event). Per-scope tree and adjacency
    indexes are built lazily and cached, which is safe because instances
    are never modified after construction.
    """

    def __init__(
        self,
        elements: Iterable[Element],
        edges: Iterable[Edge] = (),
        *,
        system: str | None = None,
        hubs: Sequence[str] = (),
        node_to_hub: Mapping[str, str] | None = None,
        hub_to_system: Mapping[str, str] | None = None,
        downstream_root: Mapping[str, ElementId] | None = None,
        tombstones: Sequence[Tombstone] = (),
    ):
        self.elements: tuple[Element, ...] = tuple(elements)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.tombstones: tuple[Tombstone, ...] = tuple(tombstones)

        self._by_id: dict[ElementId, Element] = {}
        self._duplicates: list[ElementId] = []
        self._by_token: dict[str, list[ElementId]] = {}
        for el in self.elements:
            if el.id in self._by_id:
                self._duplicates.append(el.id)
                continue
            self._by_id[el.id] = el
            self._by_token.setdefault(el.id.token, []).append(el.id)

        systems = {e.id.system for e in self.elements if e.id.system}
        if system is not None:
            self.system = system
        elif len(systems) == 1:
            self.system = next(iter(systems))
        else:
            self.system = "S1"

        self.fiber_nodes: tuple[str, ...] = tuple(
            sorted(
                e.id.token
                for e in self.elements
                if e.element_class is ElementClass.FIBER_NODE
            )
        )

        n2h: dict[str, str] = {}
        h2s: dict[str, str] = {}
        for el in self.elements:
            if el.id.fiber_node and el.id.hub:
                n2h.setdefault(el.id.fiber_node, el.id.hub)
            if el.id.hub and el.id.system:
                h2s.setdefault(el.id.hub, el.id.system)
        if node_to_hub:
            n2h.update(node_to_hub)
        if hub_to_system:
            h2s.update(hub_to_system)
        self.node_to_hub: dict[str, str] = n2h
        self.hub_to_system: dict[str, str] = h2s
        hub_set = {e.id.hub for e in self.elements if e.id.hub}
        hub_set.update(hubs)
        hub_set.update(n2h.values())
        self.hubs: tuple[str, ...] = tuple(sorted(hub_set))

        roots: dict[str, ElementId] = {}
        for el in self.elements:
            if el.element_class is ElementClass.FIBER_NODE:
                roots.setdefault(el.id.token, el.id)
        if downstream_root:
            roots.update(downstream_root)
        self.downstream_root: dict[str, ElementId] = roots

        self._tree_cache: dict[str, PhyTree] = {}
        self._adj_cache: dict[Layer, dict[ElementId, list[tuple[ElementId, Edge]]]] = {}

    # --- resolution -----------------------------------------------------

    def resolve(self, ref: "Element | ElementId | str") -> Element:
        """Resolve an element, an id, or a bare token to an Element."""
        if isinstance(ref, Element):
            ref = ref.id
        if isinstance(ref, ElementId):
            el = self._by_id.get(ref)
            if el is None:
                raise UnknownElement(f"no element with id {ref.sort_key}")
            return el
        matches = self._by_token.get(ref, [])
        if not matches:
            raise UnknownElement(f"no element with token {ref!r}")
        if len(matches) > 1:
            raise AmbiguousElement(
                f"token {ref!r} matches {len(matches)} elements; pass a full ElementId"
            )
        return self._by_id[matches[0]]

    def eid(self, ref: "Element | ElementId | str") -> ElementId:
        return self.resolve(ref).id

    def __contains__(self, ref) -> bool:
        try:
            self.resolve(ref)
            return True
        except (UnknownElement, AmbiguousElement):
            return False

    def element_ids(self) -> list[ElementId]:
        return sorted(self._by_id, key=lambda e: e.sort_key)

    def scope_elements(self, node: str) -> list[Element]:
        """Elements grouped under one fiber node, in id order."""
        out = [e for e in self.elements if e.id.fiber_node == node]
        out.sort(key=lambda e: e.id.sort_key)
        return out

    def end_devices(self, node: str | None = None) -> list[ElementId]:
        pool = self.scope_elements(node) if node else self.elements
        ids = [e.id for e in pool if e.is_end_device]
        ids.sort(key=lambda e: e.sort_key)
        return ids

    # --- indexes ----------------------------------------------------------

    def adjacency(self, layer: Layer) -> dict[ElementId, list[tuple[ElementId, Edge]]]:
        """Per-element neighbor list over all edges at one layer."""
        cached = self._adj_cache.get(layer)
        if cached is not None:
            return cached
        adj: dict[ElementId, list[tuple[ElementId, Edge]]] = {}
        for edge in self.edges:
            if edge.layer is not layer:
                continue
            adj.setdefault(edge.a, []).append((edge.b, edge))
            adj.setdefault(edge.b, []).append((edge.a, edge))
        for lst in adj.values():
            lst.sort(key=lambda ne: (ne[0].sort_key, ne[1].sort_key))
        self._adj_cache[layer] = adj
        return adj

    def phy_tree(self, node: str) -> PhyTree:
        """Build (or fetch) the oriented PHY tree of one fiber-node scope."""
        cached = self._tree_cache.get(node)
        if cached is not None:
            return cached
        root = self.downstream_root.get(node)
        if root is None or root not in self._by_id:
            raise UnknownElement(f"no fiber node {node!r} in topology")
        scope = {e.id: e for e in self.scope_elements(node)}
        scope.setdefault(root, self._by_id[root])

        adj: dict[ElementId, list[tuple[ElementId, Edge]]] = {o: [] for o in scope}
        for edge in self.edges:
            if edge.layer is not Layer.PHY:
                continue
            if edge.a in scope and edge.b in scope:
                adj[edge.a].append((edge.b, edge))
                adj[edge.b].append((edge.a, edge))
        for lst in adj.values():
            lst.sort(key=lambda ne: (ne[0].sort_key, ne[1].sort_key))

        parent: dict[ElementId, tuple[ElementId, Edge]] = {}
        children: dict[ElementId, list[tuple[ElementId, Edge]]] = {}
        depth: dict[ElementId, int] = {root: 0}
        order: list[ElementId] = []
        cycles: list[tuple[ElementId, ...]] = []
        used_edges: set[Edge] = set()
        on_path: dict[ElementId, int] = {}
        path: list[ElementId] = []

        # Iterative DFS; back edges to on-path vertices are reported as cycles.
        stack: list[tuple[ElementId, Iterator[tuple[ElementId, Edge]]]] = []
        stack.append((root, iter(adj[root])))
        on_path[root] = 0
        path.append(root)
        order.append(root)
        while stack:
            eid, it = stack[-1]
            advanced = False
            for nbr, edge in it:
                if edge in used_edges:
                    continue
                used_edges.add(edge)
                if nbr in depth:
                    if nbr in on_path:
                        cyc = tuple(path[on_path[nbr]:])
                        cycles.append(cyc)
                    else:
                        cycles.append((nbr, eid))
                    continue
                parent[nbr] = (eid, edge)
                children.setdefault(eid, []).append((nbr, edge))
                depth[nbr] = depth[eid] + 1
                order.append(nbr)
                on_path[nbr] = len(path)
                path.append(nbr)
                stack.append((nbr, iter(adj[nbr])))
                advanced = True
                break
            if not advanced:
                stack.pop()
                done = path.pop()
                on_path.pop(done, None)

        leaves: dict[ElementId, frozenset[ElementId]] = {}
        for eid in reversed(order):
            acc: set[ElementId] = set()
            el = scope[eid]
            if el.is_end_device:
                acc.add(eid)
            for child, _ in children.get(eid, ()):
                acc.update(leaves[child])
            leaves[eid] = frozenset(acc)

        unreachable = tuple(
            sorted(
                (
                    eid
                    for eid, el in scope.items()
                    if eid not in depth and Layer.PHY in el.layers_present
                ),
                key=lambda e: e.sort_key,
            )
        )

        tree = PhyTree(
            node=node,
            root=root,
            parent=parent,
            children={k: tuple(v) for k, v in children.items()},
            depth=depth,
            order=tuple(order),
            leaves=leaves,
            unreachable=unreachable,
            cycles=tuple(cycles),
        )
        self._tree_cache[node] = tree
        return tree


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

_BELOW = {Layer.MAC: Layer.PHY, Layer.IP: Layer.MAC}


def validate_topology(topo: Topology) -> list[Violation]:
    """Check every structural invariant; violations are data, not errors.

    Deterministic ordering: by first involved element id, then kind, then
    detail text. An empty list means the snapshot is well-formed.
    """
    out: list[Violation] = []

    for dup in topo._duplicates:
        out.append(Violation("DuplicateElementId", (dup,), "element id appears twice"))

    seen_phy_iface: dict[tuple[ElementId, int], Edge] = {}
    elements_sorted = sorted(topo.elements, key=lambda e: e.id.sort_key)

    for el in elements_sorted:
        eid = el.id
        if not is_valid_token(eid.token):
            out.append(
                Violation("BadToken", (eid,), f"token {eid.token!r} has separator characters")
            )
        err = el.shape.arity_error()
        if err:
            out.append(Violation("ShapeArity", (eid,), err))

        allowed = CLASS_LAYERS[el.element_class]
        extra = el.layers_present - allowed
        if extra:
            names = ",".join(sorted(l.value for l in extra))
            out.append(
                Violation(
                    "ClassLayerMismatch",
                    (eid,),
                    f"{el.element_class.value} may not participate at {names}",
                )
            )

        ids_seen: set[int] = set()
        primaries: set[tuple[Layer, str]] = set()
        for iface in el.interfaces:
            if iface.interface_id in ids_seen:
                out.append(
                    Violation(
                        "DuplicateInterfaceId",
                        (eid,),
                        f"interface_id {iface.interface_id} appears twice",
                    )
                )
            ids_seen.add(iface.interface_id)

            if iface.layer not in el.layers_present:
                out.append(
                    Violation(
                        "LayerNotPresent",
                        (eid,),
                        f"interface {iface.interface_id} at {iface.layer.value} "
                        f"but element lacks that layer",
                    )
                )

            if iface.lower_binding is not None:
                below = _BELOW.get(iface.layer)
                target = el.interface(iface.lower_binding)
                if below is None:
                    out.append(
                        Violation(
                            "DanglingBinding",
                            (eid,),
                            f"interface {iface.interface_id} at {iface.layer.value} "
                            f"cannot bind downward",
                        )
                    )
                elif target is None or target.layer is not below:
                    out.append(
                        Violation(
                            "DanglingBinding",
                            (eid,),
                            f"interface {iface.interface_id} binds to "
                            f"{iface.lower_binding} which is not a {below.value} "
                            f"interface of the element",
                        )
                    )

            if not 0.0 <= iface.downtime_sec <= iface.observed_sec:
                out.append(
                    Violation(
                        "DowntimeRange",
                        (eid,),
                        f"interface {iface.interface_id} downtime "
                        f"{iface.downtime_sec} outside [0, {iface.observed_sec}]",
                    )
                )

            if iface.rank is Rank.PRIMARY:
                key = (iface.layer, iface.category)
                if key in primaries:
                    out.append(
                        Violation(
                            "DuplicatePrimary",
                            (eid,),
                            f"second primary interface for "
                            f"({iface.layer.value}, {iface.category!r})",
                        )
                    )
                primaries.add(key)

        for a, b in el.intended_paths:
            if a == b:
                out.append(
                    Violation("IntendedPathRef", (eid,), f"self pair ({a},{a})")
                )
                continue
            if el.interface(a) is None or el.interface(b) is None:
                out.append(
                    Violation(
                        "IntendedPathRef",
                        (eid,),
                        f"pair ({a},{b}) references a missing interface",
                    )
                )

    for edge in sorted(topo.edges, key=lambda e: e.sort_key):
        broken = False
        for eid, iface_id in ((edge.a, edge.interface_a), (edge.b, edge.interface_b)):
            el = topo._by_id.get(eid)
            if el is None:
                out.append(
                    Violation(
                        "EdgeEndpointMissing",
                        (eid,),
                        f"edge references unknown element at {edge.layer.value}",
                    )
                )
                broken = True
                continue
            iface = el.interface(iface_id)
            if iface is None:
                out.append(
                    Violation(
                        "EdgeEndpointMissing",
                        (eid,),
                        f"edge references missing interface {iface_id}",
                    )
                )
                broken = True
            elif iface.layer is not edge.layer:
                out.append(
                    Violation(
                        "EdgeLayerMismatch",
                        (eid,),
                        f"interface {iface_id} is {iface.layer.value} but edge "
                        f"is {edge.layer.value}",
                    )
                )
        if edge.a == edge.b:
            out.append(Violation("SelfLoopEdge", (edge.a,), "edge joins an element to itself"))
        if broken or edge.layer is not Layer.PHY:
            continue
        for eid, iface_id in ((edge.a, edge.interface_a), (edge.b, edge.interface_b)):
            key = (eid, iface_id)
            if key in seen_phy_iface and seen_phy_iface[key] != edge:
                out.append(
                    Violation(
                        "PhyInterfaceReuse",
                        (eid,),
                        f"PHY interface {iface_id} appears in more than one edge",
                    )
                )
            seen_phy_iface[key] = edge

    known_nodes = set(topo.fiber_nodes)
    for el in elements_sorted:
        fn = el.id.fiber_node
        if fn and fn not in known_nodes:
            out.append(
                Violation(
                    "UnknownFiberNode",
                    (el.id,),
                    f"grouped under fiber node {fn!r} which has no FiberNode element",
                )
            )

    for node in topo.fiber_nodes:
        try:
            tree = topo.phy_tree(node)
        except UnknownElement as exc:
            root = topo.downstream_root.get(node)
            out.append(
                Violation(
                    "InvalidRoot",
                    (root,) if root else (),
                    str(exc),
                )
            )
            continue
        for cyc in tree.cycles:
            members = tuple(sorted(set(cyc), key=lambda e: e.sort_key))
            names = ",".join(m.token for m in members)
            out.append(Violation("PhyCycle", members, f"PHY cycle through {{{names}}}"))
        for eid in tree.unreachable:
            out.append(
                Violation(
                    "PhyUnreachable",
                    (eid,),
                    f"not reachable from {tree.root.token} over PHY edges",
                )
            )

    out.sort(key=lambda v: v.sort_key)
    return out


# --------------------------------------------------------------------------
# Long names
# --------------------------------------------------------------------------

def derive_path(
    topo: Topology,
    device: "Element | ElementId | str",
    layer: Layer = Layer.PHY,
    anchor: "Element | ElementId | str | None" = None,
) -> list[PathStep]:
    """Walk the unique anchor-to-device path at a layer.

    At PHY the anchor defaults to the device's fiber-node root and the tree
    guarantees uniqueness. At MAC/IP an anchor is required and the route
    must be the only simple path admitted by intended_paths; the toolkit
    never invents a route through a mesh.
    """
    dev = topo.resolve(device)
    if layer not in dev.layers_present:
        raise LayerAbsent(f"{dev.id.token} does not participate at {layer.value}")

    if layer is Layer.PHY:
        node = dev.id.fiber_node
        if node is None:
            raise NoPath(f"{dev.id.token} is not inside a fiber-node scope")
        tree = topo.phy_tree(node)
        if not tree.contains(dev.id):
            raise NoPath(f"{dev.id.token} unreachable from {tree.root.token} at PHY")
        chain = list(reversed(tree.ancestors(dev.id)))
        if anchor is not None:
            aid = topo.eid(anchor)
            if aid not in chain:
                raise NoPath(
                    f"{aid.token} is not an upstream element of {dev.id.token}"
                )
            chain = chain[chain.index(aid):]
        steps: list[PathStep] = []
        for i, eid in enumerate(chain):
            el = topo.resolve(eid)
            if i + 1 == len(chain):
                steps.append(PathStep(el, None, 0))
                continue
            nxt = chain[i + 1]
            edge = next(e for c, e in tree.children[eid] if c == nxt)
            steps.append(PathStep(el, edge, len(tree.children[eid])))
        return steps

    if anchor is None:
        raise AmbiguousPath(
            f"an anchor is required to derive a {layer.value} path"
        )
    anc = topo.resolve(anchor)
    if layer not in anc.layers_present:
        raise LayerAbsent(f"{anc.id.token} does not participate at {layer.value}")
    routes = _simple_paths(topo, anc.id, dev.id, layer, limit=2)
    if not routes:
        raise NoPath(f"no {layer.value} route from {anc.id.token} to {dev.id.token}")
    if len(routes) > 1:
        raise AmbiguousPath(
            f"{len(routes)}+ simple {layer.value} routes from {anc.id.token} "
            f"to {dev.id.token}; supply a route"
        )
    route = routes[0]
    adj = topo.adjacency(layer)
    steps = []
    for i, (eid, _) in enumerate(route):
        el = topo.resolve(eid)
        if i + 1 == len(route):
            steps.append(PathStep(el, None, 0))
            continue
        edge_to_next = route[i + 1][1]
        prev = route[i - 1][0] if i > 0 else None
        egress = {n for n, _ in adj.get(eid, ()) if n != prev}
        steps.append(PathStep(el, edge_to_next, len(egress)))
    return steps


def _simple_paths(
    topo: Topology,
    src: ElementId,
    dst: ElementId,
    layer: Layer,
    limit: int,
) -> list[list[tuple[ElementId, Edge | None]]]:
    """Enumerate simple src->dst paths honoring intended_paths, up to limit."""
    adj = topo.adjacency(layer)
    results: list[list[tuple[ElementId, Edge | None]]] = []
    path: list[tuple[ElementId, Edge | None]] = [(src, None)]
    visited = {src}

    def admissible(eid: ElementId, edge_in: Edge | None, edge_out: Edge) -> bool:
        el = topo._by_id[eid]
        if edge_in is None or not el.intended_paths:
            return True
        pair = (edge_in.interface_on(eid), edge_out.interface_on(eid))
        return pair in el.intended_paths

    def walk(eid: ElementId, edge_in: Edge | None) -> None:
        if len(results) >= limit:
            return
        if eid == dst:
            results.append(list(path))
            return
        for nbr, edge in adj.get(eid, ()):
            if nbr in visited:
                continue
            if not admissible(eid, edge_in, edge):
                continue
            visited.add(nbr)
            path.append((nbr, edge))
            walk(nbr, edge)
            path.pop()
            visited.discard(nbr)
            if len(results) >= limit:
                return

    walk(src, None)
    return results


def derive_long_name(
    topo: Topology,
    device: "Element | ElementId | str",
    layer: Layer = Layer.PHY,
    anchor: "Element | ElementId | str | None" = None,
) -> LongName:
    """Derive the anchored long name of a device at one layer.

    A port index is attached to a hop exactly when that hop has two or more
    egress connections at the layer; the index is the egress interface_id,
    which is stable across renumbering of sibling branches.
    """
    steps = derive_path(topo, device, layer, anchor)
    hops = []
    for step in steps:
        port = None
        if step.edge_to_next is not None and step.egress_count >= 2:
            port = step.edge_to_next.interface_on(step.element.id)
        hops.append(Hop(step.element.id.token, port))
    return LongName(anchor=steps[0].element.id, hops=tuple(hops))


def parse_long_name(s: str) -> LongName:
    """Parse the ASCII long-name rendering; inverse of LongName.render().

    Grammar: name := hop ('-' hop)*, hop := token ('.' port)?,
    token := [A-Za-z0-9/]+, port := [0-9]+.
    """
    hops: list[Hop] = []
    i = 0
    n = len(s)
    while True:
        start = i
        while i < n and s[i] in _TOKEN_CHARS:
            i += 1
        if i == start:
            raise MalformedLongName("expected element token", start)
        token = s[start:i]
        port: int | None = None
        if i < n and s[i] == ".":
            i += 1
            pstart = i
            while i < n and s[i].isdigit():
                i += 1
            if i == pstart:
                raise MalformedLongName("expected port digits after '.'", pstart)
            port = int(s[pstart:i])
        hops.append(Hop(token, port))
        if i == n:
            break
        if s[i] != "-":
            raise MalformedLongName(f"unexpected character {s[i]!r}", i)
        i += 1
    return LongName(anchor=ElementId(hops[0].token), hops=tuple(hops))


def render_long_name(name: LongName) -> str:
    return name.render()


# --------------------------------------------------------------------------
# Domain membership and common elements
# --------------------------------------------------------------------------

def members_of_domain(
    topo: Topology,
    root: "Element | ElementId | str",
    layer: Layer,
) -> set[ElementId]:
    """End devices served by an element at a layer.

    PHY inside a fiber node: the end-device leaves of the subtree under the
    root. Anything else: the end devices of the root's connected component
    over edges of that layer.
    """
    el = topo.resolve(root)
    if layer not in el.layers_present:
        raise LayerAbsent(f"{el.id.token} does not participate at {layer.value}")

    if layer is Layer.PHY and el.id.fiber_node is not None:
        tree = topo.phy_tree(el.id.fiber_node)
        if tree.contains(el.id):
            return set(tree.leaves[el.id])

    adj = topo.adjacency(layer)
    seen = {el.id}
    stack = [el.id]
    members: set[ElementId] = set()
    if el.is_end_device:
        members.add(el.id)
    while stack:
        cur = stack.pop()
        for nbr, _ in adj.get(cur, ()):
            if nbr in seen:
                continue
            seen.add(nbr)
            stack.append(nbr)
            if topo._by_id[nbr].is_end_device:
                members.add(nbr)
    return members


def lowest_common_element(
    topo: Topology,
    devices: Iterable["Element | ElementId | str"],
    layer: Layer = Layer.PHY,
) -> ElementId:
    """Deepest element whose domain at the layer contains every device.

    At PHY this is the tree LCA inside one fiber node; devices spanning
    fiber nodes raise CrossDomain. At MAC/IP the domain is the connected
    component; the smallest-id infrastructure element of the common
    component is returned.
    """
    ids = [topo.eid(d) for d in devices]
    if not ids:
        raise ValueError("devices must be nonempty")

    if layer is Layer.PHY:
        nodes = {eid.fiber_node for eid in ids}
        if len(nodes) != 1 or None in nodes:
            raise CrossDomain("devices span fiber-node scopes at PHY")
        tree = topo.phy_tree(next(iter(nodes)))
        for eid in ids:
            if not tree.contains(eid):
                raise CrossDomain(f"{eid.token} is outside the {tree.node} PHY tree")
        chain = tree.ancestors(ids[0])
        common = set(chain)
        for eid in ids[1:]:
            common &= set(tree.ancestors(eid))
        for eid in chain:
            if eid in common:
                return eid
        raise CrossDomain("no common ancestor")  # unreachable on a tree

    adj = topo.adjacency(layer)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        cur = stack.pop()
        for nbr, _ in adj.get(cur, ()):
            if nbr not in seen:
                seen.add(nbr)
                stack.append(nbr)
    for eid in ids[1:]:
        if eid not in seen:
            raise CrossDomain(
                f"{eid.token} is not in the same {layer.value} domain"
            )
    infra = sorted(
        (e for e in seen if not topo._by_id[e].is_end_device),
        key=lambda e: e.sort_key,
    )
    if infra:
        return infra[0]
    return sorted(seen, key=lambda e: e.sort_key)[0]
