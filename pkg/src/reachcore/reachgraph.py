"""Direct-reachability graphs and the majority core.

A :class:`ReachGraph` holds nodes (address blocks or vantage points) weighted
by their active-address count, and directed edges ``src -> dst`` meaning
traffic initiated at ``src`` reaches ``dst``.  The core is the strongly
connected component holding a strict majority of the total weight; at most
one component can satisfy that, so the verdict is unambiguous.

Allocation tables (one row per registry or country) support the secession
and coalition questions: which groups could leave, or jointly eject
another, while keeping a majority of addresses.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from reachcore.errors import (
    ActorNotFound,
    EmptyGraph,
    FormatError,
    InconsistentInput,
    InputError,
    InputTooLarge,
    InvalidFraction,
    NodeNotFound,
)

MAX_COALITION_ACTORS = 20


@dataclass(frozen=True)
class ReachGraph:
    """Immutable weighted directed graph.

    ``weights`` maps node id to active-address count and fixes node order;
    ``edges`` is a set of ``(src, dst)`` pairs.  Self-edges are allowed and
    mean the node can reach itself.
    """

    weights: Mapping[str, int]
    edges: frozenset

    def __post_init__(self):
        weights = dict(self.weights)
        for node, w in weights.items():
            if w < 0:
                raise InputError(f"node {node!r} has negative weight {w}")
        edges = frozenset(self.edges)
        for src, dst in edges:
            if src not in weights or dst not in weights:
                raise InputError(f"edge {src}->{dst} references an unknown node")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "edges", edges)
        order = {n: i for i, n in enumerate(weights)}
        succ = {n: [] for n in weights}
        for src, dst in sorted(edges, key=lambda e: (order[e[0]], order[e[1]])):
            succ[src].append(dst)
        object.__setattr__(self, "_succ", succ)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]], weights: Mapping[str, int] | None = None):
        """Build a graph; nodes named only by edges get weight 1."""
        w = dict(weights or {})
        edges = list(edges)
        for src, dst in edges:
            w.setdefault(src, 1)
            w.setdefault(dst, 1)
        return cls(w, frozenset(edges))

    @property
    def nodes(self) -> list[str]:
        return list(self.weights)

    @property
    def total_weight(self) -> int:
        return sum(self.weights.values())

    def successors(self, node: str) -> list[str]:
        return self._succ[node]

    def has_edge(self, src: str, dst: str) -> bool:
        return (src, dst) in self.edges

    def mutual(self, u: str, v: str) -> bool:
        return (u, v) in self.edges and (v, u) in self.edges


@dataclass(frozen=True)
class Component:
    members: frozenset
    weight: int
    total: int

    def __post_init__(self):
        if not self.members:
            raise InputError("component has no members")
        if self.total <= 0:
            raise InputError("component total weight must be positive")
        object.__setattr__(self, "members", frozenset(self.members))

    @property
    def weight_fraction(self) -> float:
        return self.weight / self.total

    @property
    def is_majority(self) -> bool:
        # integer test; float division can round to exactly 0.5
        return 2 * self.weight > self.total


@dataclass(frozen=True)
class CoreVerdict:
    """``component`` is the core, or None for NoCore (fragmentation)."""

    component: Component | None = None

    @property
    def is_core(self) -> bool:
        return self.component is not None

    @property
    def members(self) -> frozenset:
        return self.component.members if self.component else frozenset()

    def __str__(self):
        return "Core" if self.is_core else "NoCore"


class NodeClass(str, enum.Enum):
    CORE_FULL = "CoreFull"
    PENINSULA = "Peninsula"
    ISLAND = "Island"
    ADDRESS_ISLAND = "AddressIsland"
    # singleton that cannot even reach itself: off, or routes withdrawn
    EXTERNALLY_DOWN = "ExternallyDown"


def strongly_connected_components(graph: ReachGraph) -> list[Component]:
    """Tarjan's algorithm, iterative.

    Components come back ordered by the position of their earliest member in
    the graph's node order, and members share a component exactly when each
    reaches the other by a directed path.
    """
    nodes = graph.nodes
    if not nodes:
        raise EmptyGraph("graph has no nodes")
    total = graph.total_weight
    if total <= 0:
        raise InputError("graph total weight must be positive")

    index = {}
    low = {}
    on_stack = set()
    stack = []
    groups = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(graph.successors(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(graph.successors(nxt))))
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            else:
                work.pop()
                if work:
                    parent = work[-1][0]
                    low[parent] = min(low[parent], low[node])
                if low[node] == index[node]:
                    group = set()
                    while True:
                        member = stack.pop()
                        on_stack.discard(member)
                        group.add(member)
                        if member == node:
                            break
                    groups.append(group)

    order = {n: i for i, n in enumerate(nodes)}
    groups.sort(key=lambda g: min(order[n] for n in g))
    return [Component(frozenset(g), sum(graph.weights[n] for n in g), total) for g in groups]


def find_core(components: list[Component]) -> CoreVerdict:
    majority = [c for c in components if c.is_majority]
    if len(majority) > 1:
        # impossible for components of one graph: two majorities would overlap
        raise InconsistentInput("more than one component claims a majority")
    return CoreVerdict(majority[0] if majority else None)


def core_of(graph: ReachGraph) -> CoreVerdict:
    return find_core(strongly_connected_components(graph))


def missing_mutual_edges(graph: ReachGraph, verdict: CoreVerdict) -> dict[str, int]:
    """Per core member, how many other core members lack a direct two-way edge."""
    members = [n for n in graph.nodes if n in verdict.members]
    return {
        u: sum(1 for v in members if v != u and not graph.mutual(u, v))
        for u in members
    }


def classify_nodes(graph: ReachGraph, verdict: CoreVerdict) -> dict[str, NodeClass]:
    components = strongly_connected_components(graph)
    if verdict.is_core and verdict.members not in {c.members for c in components}:
        raise InconsistentInput("verdict core is not a component of this graph")

    missing = missing_mutual_edges(graph, verdict)
    size = {}
    for comp in components:
        for n in comp.members:
            size[n] = len(comp.members)

    classes = {}
    for n in graph.nodes:
        if n in verdict.members:
            classes[n] = NodeClass.PENINSULA if missing[n] else NodeClass.CORE_FULL
        elif size[n] > 1:
            classes[n] = NodeClass.ISLAND
        elif graph.has_edge(n, n):
            classes[n] = NodeClass.ADDRESS_ISLAND
        else:
            classes[n] = NodeClass.EXTERNALLY_DOWN
    return classes


def prove_membership(graph: ReachGraph, node: str) -> tuple[float, bool]:
    """Share of weight mutually reachable with ``node``, and whether it is a majority."""
    if node not in graph.weights:
        raise NodeNotFound(f"unknown node {node!r}")
    for comp in strongly_connected_components(graph):
        if node in comp.members:
            return comp.weight_fraction, comp.is_majority
    raise AssertionError("node missing from every component")


# -- allocation tables -------------------------------------------------------

WEIGHT_FIELDS = {
    "active_v4": "active_v4",
    "allocated_v4": "allocated_v4",
    "allocated_v6": "allocated_v6_slash32",
    "allocated_v6_slash32": "allocated_v6_slash32",
}


@dataclass(frozen=True)
class ActorAllocation:
    """One row of an address-allocation table.

    ``parent`` names the enclosing actor for nested rows (a country inside
    its registry); nested rows never add to totals.
    """

    actor: str
    active_v4: int
    allocated_v4: int
    allocated_v6_slash32: int
    parent: str | None = None

    def __post_init__(self):
        for name in ("active_v4", "allocated_v4", "allocated_v6_slash32"):
            if getattr(self, name) < 0:
                raise InputError(f"{self.actor}: {name} is negative")
        if self.active_v4 > self.allocated_v4:
            raise InputError(f"{self.actor}: active_v4 exceeds allocated_v4")

    def weight(self, weight_field: str) -> int:
        try:
            return getattr(self, WEIGHT_FIELDS[weight_field])
        except KeyError:
            raise InputError(f"unknown weight field {weight_field!r}") from None


@dataclass(frozen=True)
class SecessionVerdict:
    remainder_is_core: bool
    fraction: float
    removed: frozenset = field(default_factory=frozenset)

    @property
    def kind(self) -> str:
        return "RemainderIsCore" if self.remainder_is_core else "Fragmented"

    def __str__(self):
        return f"{self.kind} {self.fraction:.3f}"


@dataclass(frozen=True)
class Coalition:
    actors: frozenset
    fraction: float


def _index_allocations(allocations):
    by_name = {}
    for a in allocations:
        if a.actor in by_name:
            raise InputError(f"duplicate actor {a.actor!r}")
        by_name[a.actor] = a
    for a in allocations:
        if a.parent is not None and a.parent not in by_name:
            raise ActorNotFound(f"{a.actor}: unknown parent {a.parent!r}")
    return by_name


def _ancestors(name, by_name):
    seen = []
    parent = by_name[name].parent
    while parent is not None:
        if parent in seen or parent == name:
            raise InputError(f"parent cycle at {name!r}")
        seen.append(parent)
        parent = by_name[parent].parent
    return seen


def _union_weight(names, by_name, weight_field):
    """Weight held by a set of actors, counting nested rows once."""
    names = set(names)
    return sum(
        by_name[n].weight(weight_field)
        for n in names
        if not any(a in names for a in _ancestors(n, by_name))
    )


def _total_weight(by_name, weight_field):
    return sum(a.weight(weight_field) for a in by_name.values() if a.parent is None)


def secede(allocations: list[ActorAllocation], removed: Iterable[str], weight_field: str = "active_v4") -> SecessionVerdict:
    by_name = _index_allocations(allocations)
    removed = frozenset(removed)
    unknown = sorted(removed - set(by_name))
    if unknown:
        raise ActorNotFound(f"unknown actor(s): {', '.join(unknown)}")
    total = _total_weight(by_name, weight_field)
    if total <= 0:
        raise InputError(f"total {weight_field} weight must be positive")
    remaining = total - _union_weight(removed, by_name, weight_field)
    return SecessionVerdict(2 * remaining > total, remaining / total, removed)


def minimal_coalitions(allocations: list[ActorAllocation], weight_field: str = "active_v4") -> list[Coalition]:
    """All inclusion-minimal actor sets holding a strict majority.

    Exhaustive over subsets.  Ordered by size, then larger share first,
    then actor names in table order.
    """
    by_name = _index_allocations(allocations)
    names = list(by_name)
    if len(names) > MAX_COALITION_ACTORS:
        raise InputTooLarge(f"{len(names)} actors exceeds the cap of {MAX_COALITION_ACTORS}")
    total = _total_weight(by_name, weight_field)
    if total <= 0:
        raise InputError(f"total {weight_field} weight must be positive")

    def wins(group):
        return 2 * _union_weight(group, by_name, weight_field) > total

    found = []
    for size in range(1, len(names) + 1):
        for group in itertools.combinations(names, size):
            # weights are non-negative, so dropping one member is enough to test minimality
            if wins(group) and not any(wins(group[:i] + group[i + 1:]) for i in range(size)):
                found.append(group)
    pos = {n: i for i, n in enumerate(names)}
    result = [
        Coalition(frozenset(g), _union_weight(g, by_name, weight_field) / total)
        for g in found
    ]
    result.sort(key=lambda c: (len(c.actors), -c.fraction, sorted(pos[n] for n in c.actors)))
    return result


class TransitionStage(str, enum.Enum):
    V4_DOMINANT = "V4Dominant"
    ON_PAR = "OnPar"
    V6_SUPERSEDED = "V6Superseded"


def evaluate_transition(dual_homed_v4_fraction: float, v6_hosts_unreachable_v4_fraction: float) -> TransitionStage:
    for name, value in (
        ("dual_homed_v4_fraction", dual_homed_v4_fraction),
        ("v6_hosts_unreachable_v4_fraction", v6_hosts_unreachable_v4_fraction),
    ):
        if not 0.0 <= value <= 1.0:
            raise InvalidFraction(f"{name}={value} outside [0, 1]")
    if dual_homed_v4_fraction <= 0.5:
        return TransitionStage.V4_DOMINANT
    if v6_hosts_unreachable_v4_fraction > 0.5:
        return TransitionStage.V6_SUPERSEDED
    return TransitionStage.ON_PAR


# -- file formats ------------------------------------------------------------

def parse_edge_list(lines: Iterable[str], path="<graph>") -> ReachGraph:
    """Parse the edge-list format.

    Blank lines and ``#`` comments are skipped.  An optional ``[nodes]``
    section lists ``node weight`` pairs; the ``[edges]`` section (or the whole
    file when no section header appears) lists ``src dst`` pairs.
    """
    weights = {}
    edges = []
    section = "edges"
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if name not in ("nodes", "edges"):
                raise FormatError(path, lineno, f"unknown section {line!r}")
            section = name
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(path, lineno, f"expected two fields, got {len(parts)}")
        if section == "nodes":
            try:
                weight = int(parts[1])
            except ValueError:
                raise FormatError(path, lineno, f"weight {parts[1]!r} is not an integer") from None
            if weight < 0:
                raise FormatError(path, lineno, "weight must be non-negative")
            if parts[0] in weights:
                raise FormatError(path, lineno, f"duplicate node {parts[0]!r}")
            weights[parts[0]] = weight
        else:
            edges.append((parts[0], parts[1]))
    graph = ReachGraph.from_edges(edges, weights)
    if not graph.nodes:
        raise EmptyGraph(f"{path}: graph has no nodes")
    return graph


def load_graph(path) -> ReachGraph:
    path = Path(path)
    with open(path) as fh:
        return parse_edge_list(fh, path)


def format_edge_list(graph: ReachGraph) -> str:
    out = ["[nodes]"]
    out += [f"{n} {w}" for n, w in graph.weights.items()]
    out.append("[edges]")
    order = {n: i for i, n in enumerate(graph.nodes)}
    out += [f"{s} {d}" for s, d in sorted(graph.edges, key=lambda e: (order[e[0]], order[e[1]]))]
    return "\n".join(out) + "\n"


def load_allocations(path) -> list[ActorAllocation]:
    """Read ``actor,active_v4,allocated_v4,allocated_v6_slash32[,parent]`` CSV."""
    path = Path(path)
    required = ("actor", "active_v4", "allocated_v4", "allocated_v6_slash32")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(path, 1, f"missing column(s): {', '.join(missing)}")
        for row in reader:
            lineno = reader.line_num
            try:
                counts = [int(row[c]) for c in required[1:]]
            except (TypeError, ValueError):
                raise FormatError(path, lineno, "counts must be integers") from None
            try:
                rows.append(ActorAllocation(row["actor"].strip(), *counts, parent=(row.get("parent") or "").strip() or None))
            except InputError as exc:
                raise FormatError(path, lineno, str(exc)) from None
    if not rows:
        raise FormatError(path, 0, "no allocation rows")
    return rows
