"""Central controller: routing, factory selection, reservations and the
connection-establishment message exchange."""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

from earlyqnet.devents import ClassicalMessage, Simulator
from earlyqnet.netmodel import (
    CONTROLLER,
    NodeKind,
    QuantumFrameHeader,
    Reservation,
    ResourceUnavailable,
    Topology,
)


class NoRouteError(Exception):
    pass


class RequestKind(str, enum.Enum):
    LOCAL_BIPARTITE = "local_bipartite"
    REMOTE_BIPARTITE = "remote_bipartite"
    REMOTE_GHZ = "remote_ghz"


class IdScope(str, enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class Request:
    requester: str
    targets: tuple[str, ...]
    kind: RequestKind
    quantity: int = 1
    min_fidelity: float = 0.0
    max_completion_time: float = math.inf
    requester_app: str = "app"
    target_apps: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.quantity < 1:
            raise ValueError("quantity must be at least 1")
        if not self.targets:
            raise ValueError("request needs at least one target")
        if self.requester in self.targets:
            raise ValueError("requester cannot be its own target")
        if not 0.0 <= self.min_fidelity <= 1.0:
            raise ValueError("min_fidelity outside [0, 1]")
        if self.kind is RequestKind.REMOTE_GHZ and len(self.targets) != 2:
            raise ValueError("a three-party GHZ request has exactly two targets")
        if self.kind is not RequestKind.REMOTE_GHZ and len(self.targets) != 1:
            raise ValueError("a bipartite request has exactly one target")


class IdAllocator:
    """Smallest free positive integer; released ids are reused."""

    def __init__(self) -> None:
        self._live: set[int] = set()

    def allocate(self) -> int:
        i = 1
        while i in self._live:
            i += 1
        self._live.add(i)
        return i

    def release(self, i: int) -> None:
        self._live.discard(i)

    def __contains__(self, i: int) -> bool:
        return i in self._live


@dataclass
class ConnectionPlan:
    request: Request
    request_id: int
    scope: IdScope
    paths: dict[int, tuple[int, ...]]
    N: int
    cutoff: float = math.inf
    factory_node: int | None = None
    user_nodes: tuple[int, ...] = ()
    rules: dict[int, dict[int, tuple[int | None, int | None]]] = field(default_factory=dict)
    reservations: list[Reservation] = field(default_factory=list)
    established_time: float | None = None

    @property
    def is_ghz(self) -> bool:
        return self.factory_node is not None


class MsgType(str, enum.Enum):
    REQUEST_SUBMIT = "request_submit"
    FORWARD_TO_CONTROLLER = "forward_to_controller"
    RESOURCE_QUERY = "resource_query"
    RESOURCE_REPLY = "resource_reply"
    PLAN_ACTIVATE = "plan_activate"
    CONNECTION_ESTABLISHED = "connection_established"
    CANNOT_PROCESS = "cannot_process"


@dataclass(frozen=True)
class ProtocolMessage:
    type: MsgType
    token: int
    request_id: int | None = None
    path_ids: tuple[int, ...] = ()
    need: int = 0
    ok: bool | None = None


# -- routing ---------------------------------------------------------------


def shortest_path(topology: Topology, src: int, dst: int) -> list[int]:
    """Dijkstra over main-network links weighted by length.

    Equal-length routes are broken by the lexicographically smallest node
    sequence; heap entries carry the whole path so the first pop of a node
    is its (length, sequence)-minimal route.
    """
    for n in (src, dst):
        if n not in topology.nodes or not topology.nodes[n].is_main_network:
            raise NoRouteError(f"{n} is not a main-network node")
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (src,))]
    done: set[int] = set()
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        if u == dst:
            return list(path)
        done.add(u)
        for v, w in topology.neighbors(u, main_only=True).items():
            if v not in done:
                heapq.heappush(heap, (dist + w, path + (v,)))
    raise NoRouteError(f"no route from {src} to {dst}")


def select_factory_node(topology: Topology, endpoints: Iterable[int]) -> tuple[int, dict[int, list[int]]]:
    """Pick the node minimising (longest path, total length, id).

    Returns the factory and, per endpoint, the route endpoint -> factory.
    """
    endpoints = sorted(set(endpoints))
    if len(endpoints) < 3:
        raise ValueError("factory selection needs at least three endpoints")
    best = None
    for cand in topology.main_network_nodes():
        if cand in endpoints:
            continue
        try:
            routes = {e: shortest_path(topology, cand, e)[::-1] for e in endpoints}
        except NoRouteError:
            continue
        lengths = [topology.path_length(r) for r in routes.values()]
        score = (max(lengths), sum(lengths), cand)
        if best is None or score < best[0]:
            best = (score, cand, routes)
    if best is None:
        raise NoRouteError(f"no node reaches all of {endpoints}")
    return best[1], best[2]


def slot_demand(paths: Iterable[tuple[int, ...]], N: int) -> dict[int, int]:
    """Qubits each node needs: ``N`` per path link touching it."""
    need: dict[int, int] = {}
    for path in paths:
        for a, b in zip(path, path[1:]):
            need[a] = need.get(a, 0) + N
            need[b] = need.get(b, 0) + N
    return need


def allocate_resources(topology: Topology, plan: ConnectionPlan, N: int | None = None) -> list[Reservation]:
    """Reserve every slot the plan needs, or nothing at all."""
    N = plan.N if N is None else N
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    held: list[Reservation] = []
    try:
        for node, count in sorted(slot_demand(plan.paths.values(), N).items()):
            held.append(topology.reserve_memory(node, count, plan.request_id))
    except ResourceUnavailable:
        for r in held:
            topology.release(r)
        raise
    plan.reservations.extend(held)
    return held


def build_rules(topology: Topology, paths: dict[int, tuple[int, ...]]) -> dict[int, dict[int, tuple[int | None, int | None]]]:
    """Per node, the (towards-start, towards-end) port numbers of each path."""
    rules: dict[int, dict[int, tuple[int | None, int | None]]] = {}
    for pid, path in paths.items():
        for i, n in enumerate(path):
            node = topology.nodes[n]
            back = node.port_to(path[i - 1]).local_port_id if i > 0 else None
            fwd = node.port_to(path[i + 1]).local_port_id if i + 1 < len(path) else None
            rules.setdefault(n, {})[pid] = (back, fwd)
    return rules


# -- connection establishment ---------------------------------------------


@dataclass
class SetupOutcome:
    plan: ConnectionPlan | None
    established: bool
    decided_at: float
    reason: str = ""


class Controller:
    """Classical signalling of the controller, edge routers and user ends.

    One request is in flight at a time. ``establish_connection`` drives the
    simulator until every party has heard the outcome.
    """

    def __init__(self, sim: Simulator, topology: Topology, trace: bool = False):
        self.sim = sim
        self.topology = topology
        self.request_ids = IdAllocator()
        self.path_ids = IdAllocator()
        self.local_ids: dict[int, IdAllocator] = {}
        self.tracing = trace
        self.messages: list[dict] = []
        self.reply_timeout_factor = 10.0
        self._tokens = itertools.count(1)
        self._pending: dict[int, dict] = {}
        self._user_reservations: dict[int, list[Reservation]] = {}

    # message plumbing

    def _send(self, src, dst, msg: ProtocolMessage) -> None:
        if self.tracing:
            self.messages.append({
                "time": self.sim.now, "src": src, "dst": dst, "type": msg.type.value,
                "request_id": msg.request_id, "path_ids": list(msg.path_ids),
            })
        self.sim.send_classical(src, dst, msg, self._dispatch)

    def _dispatch(self, cm: ClassicalMessage) -> None:
        msg: ProtocolMessage = cm.payload
        state = self._pending.get(msg.token)
        if state is None:
            return
        if cm.destination == CONTROLLER:
            self._at_controller(state, cm.source, msg)
        elif self.topology.nodes[cm.destination].kind is NodeKind.USER_END:
            self._at_user(state, cm.destination, cm.source, msg)
        else:
            self._at_router(state, cm.destination, cm.source, msg)

    def write_trace(self, fh: IO[str]) -> None:
        for m in self.messages:
            fh.write(json.dumps(m) + "\n")

    def validate_header(self, header: QuantumFrameHeader) -> None:
        if header.request_id not in self.request_ids or header.path_id not in self.path_ids:
            raise ValueError(f"unregistered frame header {header}")

    # entry point

    def establish_connection(self, request: Request, N: int = 1, cutoff: float = math.inf) -> SetupOutcome:
        if N < 1:
            raise ValueError("N must be at least 1")
        topo = self.topology
        requester = topo.host(request.requester)
        targets = [topo.host(t) for t in request.targets]
        edge = requester.edge_router
        local = all(t.edge_router == edge for t in targets)
        if local != (request.kind is RequestKind.LOCAL_BIPARTITE):
            raise ValueError(f"request kind {request.kind.value} does not match endpoint placement")
        token = next(self._tokens)
        state = {
            "token": token, "request": request, "N": N, "cutoff": cutoff,
            "requester": requester.id, "targets": [t.id for t in targets],
            "users": (requester.id, *[t.id for t in targets]),
            "edge": edge, "replies": {}, "outcome": None, "to_notify": set(),
        }
        self._pending[token] = state
        self._send(requester.id, edge, ProtocolMessage(MsgType.REQUEST_SUBMIT, token))
        self.sim.run_until()
        del self._pending[token]
        if state["outcome"] is None or state["to_notify"]:
            raise RuntimeError("signalling stalled before an outcome was delivered")
        return state["outcome"]

    # parties

    def _at_router(self, state: dict, node: int, src, msg: ProtocolMessage) -> None:
        request: Request = state["request"]
        if msg.type is MsgType.REQUEST_SUBMIT:
            if request.kind is RequestKind.LOCAL_BIPARTITE:
                alloc = self.local_ids.setdefault(node, IdAllocator())
                rid = alloc.allocate()
                state["plan"] = ConnectionPlan(
                    request, rid, IdScope.LOCAL, {}, state["N"], state["cutoff"],
                    user_nodes=state["users"],
                )
                self._query(state, node, {u: request.quantity for u in state["users"]})
            else:
                self._send(node, CONTROLLER, ProtocolMessage(MsgType.FORWARD_TO_CONTROLLER, msg.token))
        elif msg.type is MsgType.RESOURCE_QUERY:
            ok = self.topology.memory[node].free >= msg.need
            self._send(node, src, ProtocolMessage(MsgType.RESOURCE_REPLY, msg.token, ok=ok))
        elif msg.type is MsgType.RESOURCE_REPLY:
            self._collect(state, node, src, msg)
        elif msg.type is MsgType.PLAN_ACTIVATE:
            self._notified(state, node)

    def _at_user(self, state: dict, node: int, src, msg: ProtocolMessage) -> None:
        if msg.type is MsgType.RESOURCE_QUERY:
            ok = self.topology.memory[node].free >= msg.need
            self._send(node, src, ProtocolMessage(MsgType.RESOURCE_REPLY, msg.token, ok=ok))
        elif msg.type is MsgType.CONNECTION_ESTABLISHED:
            res = self.topology.reserve_memory(node, state["request"].quantity, msg.request_id)
            self._user_reservations.setdefault(msg.request_id, []).append(res)
            state["plan"].reservations.append(res)
            self._notified(state, node)
        elif msg.type is MsgType.CANNOT_PROCESS:
            self._notified(state, node)

    def _at_controller(self, state: dict, src, msg: ProtocolMessage) -> None:
        if msg.type is MsgType.FORWARD_TO_CONTROLLER:
            self._plan_remote(state)
        elif msg.type is MsgType.RESOURCE_REPLY:
            self._collect(state, CONTROLLER, src, msg)

    # decisions

    def _plan_remote(self, state: dict) -> None:
        topo = self.topology
        request: Request = state["request"]
        routers = [topo.nodes[u].edge_router for u in state["users"]]
        try:
            if request.kind is RequestKind.REMOTE_GHZ:
                factory, routes = select_factory_node(topo, routers)
                paths = [tuple(routes[r]) for r in routers]
            else:
                factory = None
                paths = [tuple(shortest_path(topo, routers[0], routers[1]))]
        except (NoRouteError, ValueError) as exc:
            self._refuse(state, CONTROLLER, f"routing failed: {exc}")
            return
        plan = ConnectionPlan(
            request, 0, IdScope.GLOBAL, dict(enumerate(paths)), state["N"], state["cutoff"],
            factory_node=factory, user_nodes=state["users"],
        )
        state["plan"] = plan
        demand = slot_demand(paths, state["N"])
        edge_routers = set(routers)
        # the controller knows core-node memory; edge routers and user ends are asked
        for node, count in demand.items():
            if node not in edge_routers and topo.memory[node].free < count:
                self._refuse(state, CONTROLLER, f"node {node} lacks memory")
                return
        asks = {r: demand[r] for r in sorted(edge_routers)}
        asks.update({u: request.quantity for u in state["users"]})
        self._query(state, CONTROLLER, asks)

    def _query(self, state: dict, asker, asks: dict[int, int]) -> None:
        state["awaiting"] = set(asks)
        for party, need in asks.items():
            self._send(asker, party, ProtocolMessage(MsgType.RESOURCE_QUERY, state["token"], need=need))
        rtt = 2 * max(self.sim.classical_delay(asker, p) for p in asks)
        state["timer"] = self.sim.schedule_in(
            self.reply_timeout_factor * max(rtt, 1e-9),
            lambda: self._timeout(state, asker), "reply timeout",
        )

    def _timeout(self, state: dict, asker) -> None:
        if state["outcome"] is None:
            self._refuse(state, asker, "resource replies timed out")

    def _collect(self, state: dict, asker, src, msg: ProtocolMessage) -> None:
        if state["outcome"] is not None:
            return
        state["replies"][src] = msg.ok
        state["awaiting"].discard(src)
        if state["awaiting"]:
            return
        state["timer"].cancel()
        if not all(state["replies"].values()):
            no = sorted(str(k) for k, v in state["replies"].items() if not v)
            self._refuse(state, asker, f"insufficient resources at {', '.join(no)}")
            return
        plan: ConnectionPlan = state["plan"]
        if plan.scope is IdScope.GLOBAL:
            try:
                allocate_resources(self.topology, plan)
            except ResourceUnavailable as exc:
                self._refuse(state, asker, str(exc))
                return
            plan.request_id = self.request_ids.allocate()
            plan.paths = {self.path_ids.allocate(): p for p in plan.paths.values()}
            plan.rules = build_rules(self.topology, plan.paths)
            core = sorted({n for p in plan.paths.values() for n in p})
            for n in core:
                state["to_notify"].add(n)
                self._send(asker, n, ProtocolMessage(
                    MsgType.PLAN_ACTIVATE, state["token"], plan.request_id, tuple(plan.paths)))
        self._finish(state, asker, MsgType.CONNECTION_ESTABLISHED, True, "")

    def _refuse(self, state: dict, asker, reason: str) -> None:
        self._finish(state, asker, MsgType.CANNOT_PROCESS, False, reason)

    def _finish(self, state: dict, asker, mtype: MsgType, ok: bool, reason: str) -> None:
        plan = state.get("plan")
        rid = plan.request_id if (ok and plan) else None
        pids = tuple(plan.paths) if (ok and plan) else ()
        for u in state["users"]:
            state["to_notify"].add(u)
            self._send(asker, u, ProtocolMessage(mtype, state["token"], rid, pids))
        if plan is not None and not ok and plan.scope is IdScope.LOCAL:
            self.local_ids[state["edge"]].release(plan.request_id)
        state["outcome"] = SetupOutcome(plan if ok else None, ok, self.sim.now, reason)

    def _notified(self, state: dict, node: int) -> None:
        state["to_notify"].discard(node)
        if state["outcome"] is not None and not state["to_notify"]:
            if state["outcome"].established:
                # the quantum phase starts once every party has its instructions
                state["plan"].established_time = self.sim.now
            self.sim.stop()

    def complete(self, plan: ConnectionPlan) -> None:
        """Release a finished request's memory and identifiers."""
        for r in plan.reservations:
            self.topology.release(r)
        plan.reservations.clear()
        if plan.scope is IdScope.GLOBAL:
            self.request_ids.release(plan.request_id)
            for pid in plan.paths:
                self.path_ids.release(pid)
        else:
            self.local_ids[self.topology.nodes[plan.user_nodes[0]].edge_router].release(plan.request_id)
