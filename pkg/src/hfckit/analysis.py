"""Diagnostic engines over distortion signatures and anomaly populations.

Per-CM amplitude-vs-frequency signatures are correlated into impairment
groups; each group is localized to the boundary segment of the fiber-node
tree that separates affected from unaffected devices. Population anomalies
that do not fit a single PHY subtree are attributed bottom-up to MAC
domains, hubs, or escalated beyond the network, with utilization evidence
upgrading the verdict to congestion.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import CrossDomain, EmptyGroup, EmptySets, GridMismatch, UnknownElement
from .model import (
    Edge,
    Element,
    ElementId,
    Layer,
    Topology,
    members_of_domain,
)

# A signature correlating at least this strongly joins another CM's group.
DEFAULT_RHO0 = 0.90
# Max absolute amplitude below which a CM counts as clean.
NEGLIGIBLE_FLOOR_DB = 1.0
MIN_BINS = 8


@dataclass(frozen=True)
class DistortionSignature:
    """Amplitude distortion versus frequency for one device."""

    device: ElementId
    freqs_mhz: tuple[float, ...]
    amplitude_db: tuple[float, ...]

    def __post_init__(self):
        if len(self.freqs_mhz) != len(self.amplitude_db):
            raise ValueError("freqs_mhz and amplitude_db lengths differ")
        if len(self.freqs_mhz) < MIN_BINS:
            raise ValueError(f"need >= {MIN_BINS} frequency bins")

    @property
    def severity_db(self) -> float:
        return max(abs(a) for a in self.amplitude_db)


@dataclass(frozen=True)
class ImpairmentGroup:
    """CMs sharing one distortion, with the centroid as representative."""

    group_id: str
    members: frozenset[ElementId]
    freqs_mhz: tuple[float, ...]
    representative: tuple[float, ...]
    mean_severity_db: float

    @property
    def member_count(self) -> int:
        return len(self.members)


class GroupingResult(NamedTuple):
    groups: tuple[ImpairmentGroup, ...]
    singletons: tuple[ElementId, ...]
    clean: tuple[ElementId, ...]


def group_signatures(
    sigs: Sequence[DistortionSignature],
    rho0: float = DEFAULT_RHO0,
    floor_db: float = NEGLIGIBLE_FLOOR_DB,
) -> GroupingResult:
    """Partition CMs into correlated groups, singletons and clean devices.

    Devices below the negligible floor are clean. The rest form a graph
    with an edge where the Pearson correlation of amplitude vectors is at
    least rho0; connected components of size >= 2 are groups (single
    linkage), components of size 1 are drop/home suspects.
    """
    if not 0.0 < rho0 < 1.0:
        raise ValueError(f"rho0 {rho0} must be in (0,1)")
    if not sigs:
        return GroupingResult((), (), ())
    grid = sigs[0].freqs_mhz
    for s in sigs:
        if s.freqs_mhz != grid:
            raise GridMismatch(
                f"{s.device.token} uses a different bin grid than {sigs[0].device.token}"
            )

    ordered = sorted(sigs, key=lambda s: s.device.sort_key)
    clean = [s.device for s in ordered if s.severity_db < floor_db]
    suspects = [s for s in ordered if s.severity_db >= floor_db]
    if not suspects:
        return GroupingResult((), (), tuple(clean))

    x = np.array([s.amplitude_db for s in suspects], dtype=float)
    centered = x - x.mean(axis=1, keepdims=True)
    std = np.sqrt((centered**2).mean(axis=1))
    safe = np.where(std > 0.0, std, 1.0)
    z = centered / safe[:, None]
    z[std == 0.0] = 0.0  # flat vectors correlate with nothing
    corr = (z @ z.T) / x.shape[1]

    n = len(suspects)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    thresh = rho0 - 1e-9
    for i in range(n):
        for j in range(i + 1, n):
            if corr[i, j] >= thresh:
                parent[find(i)] = find(j)

    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)

    groups: list[ImpairmentGroup] = []
    singletons: list[ElementId] = []
    for comp in sorted(comps.values(), key=lambda c: suspects[c[0]].device.sort_key):
        if len(comp) == 1:
            singletons.append(suspects[comp[0]].device)
            continue
        members = frozenset(suspects[i].device for i in comp)
        centroid = tuple(float(v) for v in x[comp].mean(axis=0))
        severity = float(np.mean([suspects[i].severity_db for i in comp]))
        groups.append(
            ImpairmentGroup(
                group_id=f"G{len(groups) + 1}",
                members=members,
                freqs_mhz=grid,
                representative=centroid,
                mean_severity_db=severity,
            )
        )
    return GroupingResult(tuple(groups), tuple(singletons), tuple(clean))


@dataclass(frozen=True)
class LocalizationResult:
    """Impairment boundary for one group.

    The boundary is the chain of elements between which the fault cannot be
    narrowed further: every element on it serves exactly the same end
    devices, so an impairment anywhere on the chain looks identical from
    the modem population. boundary_edge is the upstream edge entering the
    chain head (None when the head is the node root).
    """

    group_id: str
    boundary: tuple[ElementId, ...]
    boundary_edge: Edge | None
    coverage: float
    members_outside: tuple[ElementId, ...]
    non_members_inside: tuple[ElementId, ...]


def localize_group(topo: Topology, group: ImpairmentGroup) -> LocalizationResult:
    """Locate the tree boundary that best separates a group from the rest.

    The candidate maximizing F1 between its downstream end devices and the
    group membership wins, ties broken by depth (deeper first) then element
    id; the winner is extended through its equal-leaf-set chain. Exceptions
    (members outside the boundary, non-members inside) are always reported.
    """
    if len(group.members) < 2:
        raise EmptyGroup(
            f"group {group.group_id} has {len(group.members)} member(s); need >= 2"
        )
    members = set()
    nodes = set()
    for ref in group.members:
        el = topo.resolve(ref)
        members.add(el.id)
        nodes.add(el.id.fiber_node)
    if len(nodes) != 1 or None in nodes:
        raise CrossDomain(
            f"group {group.group_id} spans fiber nodes {sorted(n or '?' for n in nodes)}; "
            f"use attribute_layer"
        )
    tree = topo.phy_tree(next(iter(nodes)))
    for eid in members:
        if not tree.contains(eid):
            raise CrossDomain(f"{eid.token} is outside the {tree.node} PHY tree")

    target = frozenset(members)
    size_s = len(target)
    best: tuple[float, int, tuple, ElementId] | None = None
    for eid in tree.order:
        leaves = tree.leaves[eid]
        if not leaves:
            continue
        inter = len(leaves & target)
        f1 = 2.0 * inter / (len(leaves) + size_s)
        key = (f1, tree.depth[eid])
        if best is None or key > best[:2] or (
            key == best[:2] and eid.sort_key < best[2]
        ):
            best = (f1, tree.depth[eid], eid.sort_key, eid)
    assert best is not None
    star = best[3]
    star_leaves = tree.leaves[star]

    head = star
    while head in tree.parent:
        up = tree.parent[head][0]
        if tree.leaves[up] != star_leaves:
            break
        head = up
    tail = star
    while True:
        nxt = [c for c, _ in tree.children.get(tail, ()) if tree.leaves[c] == star_leaves]
        if len(nxt) != 1:
            break
        tail = nxt[0]

    chain = [tail]
    while chain[-1] != head:
        chain.append(tree.parent[chain[-1]][0])
    chain.reverse()

    head_leaves = tree.leaves[head]
    covered = head_leaves & target
    return LocalizationResult(
        group_id=group.group_id,
        boundary=tuple(chain),
        boundary_edge=tree.parent[head][1] if head in tree.parent else None,
        coverage=len(covered) / len(head_leaves),
        members_outside=tuple(
            sorted(target - head_leaves, key=lambda e: e.sort_key)
        ),
        non_members_inside=tuple(
            sorted(head_leaves - target, key=lambda e: e.sort_key)
        ),
    )


class AttributionLevel(str, Enum):
    PHY = "PHY"
    MAC = "MAC"
    HUB = "Hub"
    BEYOND_NETWORK = "BeyondNetwork"


@dataclass(frozen=True)
class AttributionConfig:
    theta_in: float = 0.5
    theta_out: float = 0.1
    congestion_pct: float = 70.0


@dataclass
class Attribution:
    level: AttributionLevel
    domain: ElementId | str | None
    verdict: str  # "anomaly", "congestion" or "escalate"
    evidence: dict


def attribute_layer(
    topo: Topology,
    anomalous: Iterable[ElementId | str],
    healthy: Iterable[ElementId | str],
    utilization: Mapping[str, float] | None = None,
    cfg: AttributionConfig = AttributionConfig(),
) -> Attribution:
    """Attribute an anomaly population to the lowest qualifying domain.

    Domains are scanned bottom-up: PHY subtrees per fiber node, then MAC
    domains, then hubs. A domain qualifies when it contains every anomalous
    device, its internal anomaly rate reaches theta_in, and the rate outside
    stays at or below theta_out. With no qualifying domain below the system
    root the result is an escalation beyond the network. Utilization at or
    above the congestion threshold upgrades the verdict to congestion.
    """
    bad = {topo.eid(d) for d in anomalous}
    good = {topo.eid(d) for d in healthy}
    if not bad:
        raise EmptySets("anomalous set must be nonempty")
    if bad & good:
        overlap = sorted(e.token for e in bad & good)
        raise EmptySets(f"anomalous and healthy overlap: {overlap}")
    universe = bad | good
    util = dict(utilization or {})

    def qualifies(domain_members: frozenset[ElementId] | set[ElementId]):
        labeled = universe & set(domain_members)
        if not labeled or not bad <= set(domain_members):
            return None
        inside_rate = len(bad & labeled) / len(labeled)
        outside = universe - labeled
        outside_rate = (len(bad - labeled) / len(outside)) if outside else 0.0
        if inside_rate >= cfg.theta_in and outside_rate <= cfg.theta_out:
            return inside_rate, outside_rate, len(labeled)
        return None

    def build(level, domain, token, rates):
        inside_rate, outside_rate, labeled = rates
        u = util.get(token)
        verdict = (
            "congestion" if u is not None and u >= cfg.congestion_pct else "anomaly"
        )
        return Attribution(
            level=level,
            domain=domain,
            verdict=verdict,
            evidence={
                "inside_rate": inside_rate,
                "outside_rate": outside_rate,
                "labeled_members": labeled,
                "anomalous": len(bad),
                "utilization_pct": u,
            },
        )

    # PHY: deepest qualifying subtree element of any one fiber node.
    for node in topo.fiber_nodes:
        tree = topo.phy_tree(node)
        if not bad <= set(tree.leaves[tree.root]):
            continue
        candidates = sorted(
            tree.order, key=lambda e: (-tree.depth[e], e.sort_key)
        )
        for eid in candidates:
            rates = qualifies(tree.leaves[eid])
            if rates:
                return build(AttributionLevel.PHY, eid, eid.token, rates)

    # MAC: infrastructure elements with MAC edges, smallest served set first.
    adj = topo.adjacency(Layer.MAC)
    heads = [
        el
        for el in topo.elements
        if not el.is_end_device and Layer.MAC in el.layers_present and el.id in adj
    ]
    served: list[tuple[int, tuple, Element, set[ElementId]]] = []
    for el in heads:
        dom = members_of_domain(topo, el.id, Layer.MAC)
        served.append((len(dom), el.id.sort_key, el, dom))
    for _, _, el, dom in sorted(served, key=lambda t: (t[0], t[1])):
        rates = qualifies(dom)
        if rates:
            return build(AttributionLevel.MAC, el.id, el.id.token, rates)

    # Hub: every labeled device grouped under one hub.
    for hub in topo.hubs:
        dom = {e for e in universe if e.hub == hub}
        rates = qualifies(dom) if bad <= dom else None
        if rates:
            return build(AttributionLevel.HUB, hub, hub, rates)

    return Attribution(
        level=AttributionLevel.BEYOND_NETWORK,
        domain=None,
        verdict="escalate",
        evidence={
            "inside_rate": None,
            "outside_rate": None,
            "labeled_members": len(universe),
            "anomalous": len(bad),
            "utilization_pct": None,
        },
    )


# --------------------------------------------------------------------------
# Signature files and DOT rendering
# --------------------------------------------------------------------------

def signature_lines(
    sigs: Sequence[DistortionSignature], grid_id: str = "g1"
) -> list[str]:
    """Rows: one grid definition line, then one sig line per device."""
    if not sigs:
        return []
    grid = sigs[0].freqs_mhz
    lines = ["\t".join(("grid", grid_id, ",".join(repr(f) for f in grid)))]
    for s in sorted(sigs, key=lambda s: s.device.sort_key):
        lines.append(
            "\t".join(
                (
                    "sig",
                    s.device.token,
                    grid_id,
                    ",".join(repr(a) for a in s.amplitude_db),
                )
            )
        )
    return lines


def write_signatures(
    sigs: Sequence[DistortionSignature], path: str | Path, grid_id: str = "g1"
) -> None:
    Path(path).write_text(
        "".join(line + "\n" for line in signature_lines(sigs, grid_id)),
        encoding="utf-8",
    )


def parse_signatures(lines: Iterable[str]) -> list[DistortionSignature]:
    grids: dict[str, tuple[float, ...]] = {}
    sigs: list[DistortionSignature] = []
    for lineno, line in enumerate(lines):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "grid" and len(parts) == 3:
            grids[parts[1]] = tuple(float(f) for f in parts[2].split(","))
            continue
        if parts[0] == "sig" and len(parts) == 4:
            grid = grids.get(parts[2])
            if grid is None:
                raise GridMismatch(f"line {lineno}: unknown grid id {parts[2]!r}")
            sigs.append(
                DistortionSignature(
                    device=ElementId(parts[1]),
                    freqs_mhz=grid,
                    amplitude_db=tuple(float(a) for a in parts[3].split(",")),
                )
            )
            continue
        raise ValueError(f"signature line {lineno}: unrecognized row {parts[0]!r}")
    return sigs


def read_signatures(path: str | Path) -> list[DistortionSignature]:
    with open(path, encoding="utf-8") as fh:
        return parse_signatures(fh)


def resolve_signatures(
    topo: Topology, sigs: Iterable[DistortionSignature]
) -> list[DistortionSignature]:
    """Re-key file-loaded signatures to full topology element ids."""
    out = []
    for s in sigs:
        eid = topo.eid(s.device.token)
        out.append(
            DistortionSignature(
                device=eid, freqs_mhz=s.freqs_mhz, amplitude_db=s.amplitude_db
            )
        )
    return out


_GROUP_PALETTE = (
    "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b",
    "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)

_CLASS_SHAPES = {
    "FiberNode": "doubleoctagon",
    "Amplifier": "triangle",
    "Tap": "invtriangle",
    "Splitter": "diamond",
    "CM": "box",
}


def topology_dot(
    topo: Topology,
    node: str,
    grouping: GroupingResult | None = None,
    boundaries: Sequence[LocalizationResult] = (),
) -> str:
    """Render one fiber-node tree as DOT, colored by impairment grouping.

    Clean CMs are green, uncorrelated singletons red, and each group gets
    its own palette color; boundary chains are outlined in red.
    """
    tree = topo.phy_tree(node)
    fill: dict[ElementId, str] = {}
    if grouping is not None:
        for eid in grouping.clean:
            fill[topo.eid(eid)] = "#2ca02c"
        for eid in grouping.singletons:
            fill[topo.eid(eid)] = "#d62728"
        for i, group in enumerate(grouping.groups):
            color = _GROUP_PALETTE[i % len(_GROUP_PALETTE)]
            for eid in group.members:
                fill[topo.eid(eid)] = color
    outlined = {eid for res in boundaries for eid in res.boundary}

    lines = [f'graph "{node}" {{', "  rankdir=TB;", "  node [style=filled];"]
    for eid in tree.order:
        el = topo.resolve(eid)
        attrs = {
            "label": eid.token,
            "shape": _CLASS_SHAPES.get(el.element_class.value, "ellipse"),
            "fillcolor": fill.get(eid, "#ffffff"),
        }
        if eid in outlined:
            attrs["color"] = "#d62728"
            attrs["penwidth"] = "3"
        body = ", ".join(f'{k}="{v}"' for k, v in attrs.items())
        lines.append(f'  "{eid.token}" [{body}];')
    for eid in tree.order:
        for child, edge in tree.children.get(eid, ()):
            label = f"{edge.interface_on(eid)}:{edge.interface_on(child)}"
            lines.append(f'  "{eid.token}" -- "{child.token}" [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
