"""Topology, ports, memory pools and the network's identifiers.

Topology documents are UTF-8 text, one stanza per line::

    controller_distance_km=100
    node 1 kind=router capacity=512
    node 11 kind=user_end capacity=128 prefix=A edge_router=1
    link 1 11 length_km=1

``#`` starts a comment. Ports are numbered per node from 1 in order of link
appearance; the lower node id of each link holds the active port.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from earlyqnet.densmat import BellIndex

CONTROLLER = "controller"


class TopologyError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid topology:\n  " + "\n  ".join(problems))


class ResourceUnavailable(Exception):
    """A node cannot satisfy a memory reservation right now."""


class NodeKind(str, enum.Enum):
    USER_END = "user_end"
    ROUTER = "router"
    REPEATER = "repeater"


class PortMode(str, enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


@dataclass
class Port:
    local_port_id: int
    peer: int
    mode: PortMode


@dataclass
class Node:
    id: int
    kind: NodeKind
    capacity: int
    prefix: str | None = None
    edge_router: int | None = None
    hostname: str | None = None
    ports: dict[int, Port] = field(default_factory=dict)

    @property
    def is_main_network(self) -> bool:
        return self.kind is not NodeKind.USER_END

    def port_to(self, peer: int) -> Port:
        for port in self.ports.values():
            if port.peer == peer:
                return port
        raise KeyError(f"node {self.id} has no port towards {peer}")


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    length_km: float

    def other(self, node: int) -> int:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class Reservation:
    handle: int
    node: int
    count: int
    request_id: object


class MemoryPool:
    """Shared per-node qubit memory, not split by port."""

    def __init__(self, node: int, capacity: int):
        self.node = node
        self.capacity = capacity
        self._held: dict[int, Reservation] = {}

    @property
    def reserved(self) -> int:
        return sum(r.count for r in self._held.values())

    @property
    def free(self) -> int:
        return self.capacity - self.reserved

    def reservations(self) -> list[Reservation]:
        return list(self._held.values())


class Topology:
    def __init__(self, nodes: dict[int, Node], links: list[Link], controller_distance_km: float):
        self.nodes = nodes
        self.links = links
        self.controller_distance_km = controller_distance_km
        self._adj: dict[int, dict[int, float]] = {n: {} for n in nodes}
        for link in links:
            self._adj[link.a][link.b] = link.length_km
            self._adj[link.b][link.a] = link.length_km
        self._hosts = {n.hostname: n.id for n in nodes.values() if n.hostname}
        self.memory = {n.id: MemoryPool(n.id, n.capacity) for n in nodes.values()}
        self._handles = itertools.count(1)

    # -- structure -----------------------------------------------------

    def neighbors(self, node: int, main_only: bool = False) -> dict[int, float]:
        adj = self._adj[node]
        if main_only:
            return {m: d for m, d in adj.items() if self.nodes[m].is_main_network}
        return dict(adj)

    def link_length(self, a: int, b: int) -> float:
        return self._adj[a][b]

    def has_link(self, a: int, b: int) -> bool:
        return b in self._adj.get(a, {})

    def main_network_nodes(self) -> list[int]:
        return sorted(n for n, node in self.nodes.items() if node.is_main_network)

    def is_path(self, path: Iterable[int]) -> bool:
        path = list(path)
        return all(self.has_link(a, b) for a, b in zip(path, path[1:]))

    def path_length(self, path: list[int]) -> float:
        return sum(self._adj[a][b] for a, b in zip(path, path[1:]))

    def host(self, hostname: str) -> Node:
        try:
            return self.nodes[self._hosts[hostname]]
        except KeyError:
            raise KeyError(f"unknown hostname {hostname!r}") from None

    def edge_router_by_prefix(self, prefix: str) -> int:
        for node in self.nodes.values():
            if node.prefix == prefix and node.edge_router is not None:
                return node.edge_router
        raise KeyError(f"unknown hostname prefix {prefix!r}")

    def classical_distance(self, a: object, b: object) -> float:
        """Kilometres of classical fibre between two endpoints.

        The controller sits at ``controller_distance_km`` from every main
        network node; it reaches user ends through their edge router.
        """
        if a == b:
            return 0.0
        if b == CONTROLLER:
            a, b = b, a
        if a == CONTROLLER:
            node = self.nodes[b]
            if node.kind is NodeKind.USER_END:
                return self.controller_distance_km + self._adj[b][node.edge_router]
            return self.controller_distance_km
        return self._adj[a][b]

    def with_uniform_length(self, length_km: float) -> "Topology":
        """Copy with every main-network link set to ``length_km``."""
        links = [
            Link(l.a, l.b, length_km if self.nodes[l.a].is_main_network and self.nodes[l.b].is_main_network else l.length_km)
            for l in self.links
        ]
        nodes = {
            i: Node(n.id, n.kind, n.capacity, n.prefix, n.edge_router, n.hostname, dict(n.ports))
            for i, n in self.nodes.items()
        }
        return Topology(nodes, links, self.controller_distance_km)

    # -- memory --------------------------------------------------------

    def reserve_memory(self, node: int, count: int, request_id: object) -> Reservation:
        if count < 1:
            raise ValueError(f"reservation count must be >= 1, got {count}")
        pool = self.memory[node]
        if pool.free < count:
            raise ResourceUnavailable(f"node {node}: {pool.free} free qubits, {count} requested")
        res = Reservation(next(self._handles), node, count, request_id)
        pool._held[res.handle] = res
        return res

    def release(self, reservation: Reservation) -> None:
        del self.memory[reservation.node]._held[reservation.handle]

    def total_reserved(self) -> int:
        return sum(p.reserved for p in self.memory.values())


def load_topology(document: str) -> Topology:
    problems: list[str] = []
    raw_nodes: dict[int, dict[str, str]] = {}
    raw_links: list[tuple[int, int, float]] = []
    controller_km = 100.0

    for lineno, line in enumerate(document.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if words[0].startswith("controller_distance_km="):
                controller_km = float(words[0].split("=", 1)[1])
            elif words[0] == "node":
                nid = int(words[1])
                attrs = dict(w.split("=", 1) for w in words[2:])
                if nid in raw_nodes:
                    problems.append(f"line {lineno}: duplicate node id {nid}")
                raw_nodes[nid] = attrs
            elif words[0] == "link":
                attrs = dict(w.split("=", 1) for w in words[3:])
                raw_links.append((int(words[1]), int(words[2]), float(attrs["length_km"])))
            else:
                problems.append(f"line {lineno}: unknown stanza {words[0]!r}")
        except (IndexError, ValueError, KeyError) as exc:
            problems.append(f"line {lineno}: malformed stanza ({exc})")

    nodes: dict[int, Node] = {}
    for nid, attrs in raw_nodes.items():
        try:
            kind = NodeKind(attrs.get("kind", ""))
        except ValueError:
            problems.append(f"node {nid}: unknown kind {attrs.get('kind')!r}")
            continue
        capacity = int(attrs.get("capacity", "0"))
        if capacity <= 0:
            problems.append(f"node {nid}: capacity must be positive")
        edge = int(attrs["edge_router"]) if "edge_router" in attrs else None
        prefix = attrs.get("prefix")
        if kind is NodeKind.USER_END and (edge is None or prefix is None):
            problems.append(f"node {nid}: user end needs prefix and edge_router")
        nodes[nid] = Node(nid, kind, capacity, prefix, edge)

    for a, b, length in raw_links:
        for n in (a, b):
            if n not in raw_nodes:
                problems.append(f"link {a}-{b}: unknown node {n}")
        if length < 0:
            problems.append(f"link {a}-{b}: negative length")
        if a == b:
            problems.append(f"link {a}-{b}: self loop")

    prefix_router: dict[str, int] = {}
    for node in nodes.values():
        if node.kind is not NodeKind.USER_END or node.edge_router is None:
            continue
        if node.edge_router not in nodes or nodes[node.edge_router].kind is NodeKind.USER_END:
            problems.append(f"node {node.id}: edge_router {node.edge_router} is not a router")
        elif not any({a, b} == {node.id, node.edge_router} for a, b, _ in raw_links):
            problems.append(f"node {node.id}: no link to its edge router {node.edge_router}")
        owner = prefix_router.setdefault(node.prefix, node.edge_router)
        if owner != node.edge_router:
            problems.append(f"prefix {node.prefix!r} used under routers {owner} and {node.edge_router}")
    for node in nodes.values():
        if node.kind is NodeKind.USER_END:
            user_links = [l for l in raw_links if node.id in (l[0], l[1])]
            if len(user_links) != 1:
                problems.append(f"node {node.id}: user end must have exactly one link")

    main_lengths = {
        length for a, b, length in raw_links
        if a in nodes and b in nodes and nodes[a].is_main_network and nodes[b].is_main_network
    }
    if len(main_lengths) > 1:
        problems.append(f"main-network link lengths differ: {sorted(main_lengths)}")

    if problems:
        raise TopologyError(problems)

    next_port = {nid: 1 for nid in nodes}
    for a, b, _ in raw_links:
        lo = min(a, b)
        for n, peer in ((a, b), (b, a)):
            pid = next_port[n]
            next_port[n] += 1
            mode = PortMode.ACTIVE if n == lo else PortMode.PASSIVE
            nodes[n].ports[pid] = Port(pid, peer, mode)

    counters: dict[str, int] = {}
    for nid in sorted(nodes):
        node = nodes[nid]
        if node.kind is NodeKind.USER_END:
            counters[node.prefix] = counters.get(node.prefix, 0) + 1
            node.hostname = f"{node.prefix}.{counters[node.prefix]}"

    return Topology(nodes, [Link(a, b, length) for a, b, length in raw_links], controller_km)


DEFAULT_DOCUMENT = """\
# Early quantum network: edge routers 1-5, core 6-10, user ends A-E.
controller_distance_km=100
node 1 kind=router capacity=512
node 2 kind=router capacity=512
node 3 kind=router capacity=512
node 4 kind=router capacity=512
node 5 kind=router capacity=512
node 6 kind=repeater capacity=512
node 7 kind=repeater capacity=512
node 8 kind=repeater capacity=512
node 9 kind=repeater capacity=512
node 10 kind=router capacity=512
node 11 kind=user_end capacity=128 prefix=A edge_router=1
node 12 kind=user_end capacity=128 prefix=A edge_router=1
node 21 kind=user_end capacity=128 prefix=B edge_router=2
node 22 kind=user_end capacity=128 prefix=B edge_router=2
node 31 kind=user_end capacity=128 prefix=C edge_router=3
node 41 kind=user_end capacity=128 prefix=D edge_router=4
node 51 kind=user_end capacity=128 prefix=E edge_router=5
link 1 6 length_km=50
link 6 10 length_km=50
link 10 9 length_km=50
link 9 3 length_km=50
link 6 7 length_km=50
link 7 8 length_km=50
link 8 9 length_km=50
link 2 7 length_km=50
link 7 10 length_km=50
link 4 9 length_km=50
link 5 8 length_km=50
link 1 11 length_km=1
link 1 12 length_km=1
link 2 21 length_km=1
link 2 22 length_km=1
link 3 31 length_km=1
link 4 41 length_km=1
link 5 51 length_km=1
"""


def default_topology(length_km: float | None = None) -> Topology:
    topo = load_topology(DEFAULT_DOCUMENT)
    return topo if length_km is None else topo.with_uniform_length(length_km)


def chain_document(n_links: int, length_km: float = 50.0, capacity: int = 512) -> str:
    """Linear chain of routers ``1..n_links+1`` with user ends A.1 and Z.1."""
    last = n_links + 1
    lines = ["controller_distance_km=100"]
    lines += [f"node {i} kind=router capacity={capacity}" for i in range(1, last + 1)]
    lines += [
        f"node 1001 kind=user_end capacity={capacity} prefix=A edge_router=1",
        f"node 1002 kind=user_end capacity={capacity} prefix=Z edge_router={last}",
    ]
    lines += [f"link {i} {i + 1} length_km={length_km}" for i in range(1, last)]
    lines += ["link 1 1001 length_km=1", f"link {last} 1002 length_km=1"]
    return "\n".join(lines) + "\n"


def chain_topology(n_links: int, length_km: float = 50.0, capacity: int = 512) -> Topology:
    return load_topology(chain_document(n_links, length_km, capacity))


class RecordStatus(str, enum.Enum):
    ALIVE = "alive"
    MEASURED = "measured"
    DISCARDED = "discarded"


@dataclass
class EntanglementRecord:
    """Identifier and state of one stored entangled pair (or fragment).

    ``node_ids[k]`` holds qubit ``k`` of ``rho``; ``touched[k]`` is the time
    up to which memory decay has been applied to that qubit.
    """

    record_id: int
    generation_time: float
    expiration_time: float
    bell_index: BellIndex
    node_ids: tuple[int, ...]
    rho: np.ndarray
    touched: list[float]
    qubit_slots: tuple[tuple[int, int], ...] = ()
    request_id: object = None
    status: RecordStatus = RecordStatus.ALIVE

    def __post_init__(self) -> None:
        if self.expiration_time < self.generation_time:
            raise ValueError("expiration precedes generation")

    def _leave_alive(self, to: RecordStatus) -> None:
        if self.status is not RecordStatus.ALIVE:
            raise RuntimeError(f"record {self.record_id} is {self.status.value}, cannot become {to.value}")
        self.status = to

    def mark_measured(self) -> None:
        self._leave_alive(RecordStatus.MEASURED)

    def mark_discarded(self) -> None:
        self._leave_alive(RecordStatus.DISCARDED)

    @property
    def alive(self) -> bool:
        return self.status is RecordStatus.ALIVE


@dataclass(frozen=True)
class QuantumFrameHeader:
    request_id: int
    path_id: int
