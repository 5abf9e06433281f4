"""Entanglement distribution over an activated connection plan.

Every reserved link slot pair generates continuously. Interior nodes swap
earliest-first, stale pairs are discarded at their cutoff, and freed slots
regenerate at once. Bipartite plans deliver end-to-end pairs; GHZ plans
build one pair per path to the factory node, which teleports a local
three-qubit GHZ state onto the path endpoints.

Quantum states carry memory decay lazily: each qubit remembers the time up
to which T1/T2 noise has been applied and catches up whenever it is used.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np

from earlyqnet import densmat
from earlyqnet.controller import ConnectionPlan
from earlyqnet.densmat import BellIndex, NoiseSpec
from earlyqnet.devents import Simulator
from earlyqnet.linkmodel import (
    DegenerateLinkError,
    HeraldedLinkState,
    LinkParams,
    attempt_duration,
    heralded_link_state,
    sample_generation,
)
from earlyqnet.netmodel import EntanglementRecord, Topology

GHZ_LOCAL_FIDELITY = 0.98

Sampler = Callable[[HeraldedLinkState, float, np.random.Generator], "tuple[int, float]"]


class DegeneratePlanError(ValueError):
    """The plan can never deliver its quantity."""


def ghz_weight(target_fidelity: float, n: int = 3) -> float:
    """Correlated-depolarising weight giving ``target_fidelity`` to GHZ(n)."""
    floor = 1 / 2**n
    return (target_fidelity - floor) / (1 - floor)


@dataclass(frozen=True)
class MemoryParams:
    T1: float = 10 * 3600.0
    T2: float = 1.0

    def __post_init__(self) -> None:
        if self.T1 <= 0 or self.T2 <= 0:
            raise ValueError("T1 and T2 must be positive")
        if self.T2 > 2 * self.T1:
            raise ValueError(f"T2={self.T2} exceeds 2*T1={2 * self.T1}")


NO_DECAY = MemoryParams(math.inf, math.inf)


@dataclass(frozen=True)
class SwapPolicy:
    cutoff: float = math.inf
    s_p: float = 1.0
    s_q: float = 1.0

    def __post_init__(self) -> None:
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")


@dataclass
class DeliveredState:
    rho: np.ndarray
    fidelity: float
    completion_time: float
    index: int


@dataclass
class Segment:
    """An alive pair spanning path positions ``a < b`` of path ``pid``."""

    record: EntanglementRecord
    pid: int
    a: int
    b: int
    swaps: list[tuple[float, int]] = field(default_factory=list)
    committed: bool = False


def _priority(seg: Segment, remote: int) -> tuple[float, int, int]:
    return (seg.record.generation_time, remote, seg.record.record_id)


def _finite_or_str(x: float) -> float | str:
    # keeps trace lines strict JSON
    return x if math.isfinite(x) else str(x)


def select_swap_candidates(left: list[Segment], right: list[Segment]) -> list[tuple[Segment, Segment]]:
    """Pair left- and right-side segments, oldest first.

    Ties in generation time go to the smaller remote node id, then the
    smaller record id.
    """
    ls = sorted(left, key=lambda s: _priority(s, s.record.node_ids[0]))
    rs = sorted(right, key=lambda s: _priority(s, s.record.node_ids[-1]))
    return list(zip(ls, rs))


def advance(record: EntanglementRecord, now: float, memory: MemoryParams) -> None:
    """Apply the memory decay each qubit has accrued up to ``now``."""
    for q, t in enumerate(record.touched):
        if now > t:
            record.rho = densmat.apply_noise(record.rho, NoiseSpec.t1t2(memory.T1, memory.T2, now - t, [q]))
        record.touched[q] = max(t, now)


def swap_states(
    left: np.ndarray, right: np.ndarray, left_frame: BellIndex, right_frame: BellIndex, draw: float, s_q: float
) -> tuple[BellIndex, np.ndarray, BellIndex]:
    """Bell-measure the inner qubits of two pairs and depolarise the result.

    Returns the measurement outcome, the merged two-qubit state and the
    merged Pauli frame.
    """
    outcome, post = densmat.bsm_project(densmat.tensor(left, right), 1, 2, draw)
    post = densmat.apply_noise(post, NoiseSpec.depolarizing(s_q))
    return outcome, post, left_frame.compose(right_frame, outcome)


def correct_to_psi_plus(rho: np.ndarray, frame: BellIndex) -> np.ndarray:
    """Pauli-correct the second qubit so the ideal pair becomes |Psi+>."""
    return densmat.apply_pauli(rho, 1, frame.compose(BellIndex.PSI_PLUS).pauli_frame)


class RequestRunner:
    def __init__(
        self,
        sim: Simulator,
        topology: Topology,
        plan: ConnectionPlan,
        link: LinkParams,
        memory: MemoryParams = MemoryParams(),
        policy: SwapPolicy | None = None,
        ghz_fidelity: float = GHZ_LOCAL_FIDELITY,
        sampler: Sampler = sample_generation,
        request_start: float = 0.0,
        trace: bool = False,
        audit: bool = False,
    ):
        self.sim = sim
        self.topo = topology
        self.plan = plan
        self.memory = memory
        self.policy = policy or SwapPolicy(plan.cutoff, link.s_p, link.s_q)
        self.sampler = sampler
        self.request_start = request_start
        self.tracing = trace
        self.auditing = audit
        self.log: list[dict] = []
        self.ghz_fidelity = ghz_fidelity
        self.ghz_weight = ghz_weight(ghz_fidelity)

        self.paths = {pid: tuple(p) for pid, p in plan.paths.items()}
        if not self.paths or any(len(p) < 2 for p in self.paths.values()):
            raise DegeneratePlanError("plan has no main-network links to run")
        self.links: dict[tuple[int, int], tuple[HeraldedLinkState, float]] = {}
        for pid, path in self.paths.items():
            for i, (a, b) in enumerate(zip(path, path[1:])):
                length = topology.link_length(a, b)
                try:
                    state = heralded_link_state(link.with_length(length))
                except DegenerateLinkError as exc:
                    raise DegeneratePlanError(str(exc)) from None
                if state.p <= 0:
                    raise DegeneratePlanError(f"link {a}-{b} never heralds")
                self.links[(pid, i)] = (state, attempt_duration(length, sim.c_fiber))
        if self.policy.s_p <= 0:
            raise DegeneratePlanError("swap success probability is zero")

        self.free = {(pid, i, side): plan.N for (pid, i) in self.links for side in (0, 1)}
        self.segments: dict[int, Segment] = {}
        self.generating = 0
        self._ids = itertools.count(1)
        self.committed = 0
        self.delivered: list[DeliveredState] = []
        self.factory_pool: dict[int, list[Segment]] = {pid: [] for pid in self.paths}

    # -- helpers ---------------------------------------------------------

    def _km(self, path: tuple[int, ...], i: int, j: int) -> float:
        lo, hi = min(i, j), max(i, j)
        return self.topo.path_length(list(path[lo:hi + 1]))

    def _notice_time(self, seg: Segment, end_pos: int) -> float:
        path = self.paths[seg.pid]
        t = seg.record.generation_time
        for ts, pos in seg.swaps:
            t = max(t, ts + self._km(path, pos, end_pos) / self.sim.c_fiber)
        return t

    def _log(self, action: str, **info) -> None:
        if self.tracing:
            self.log.append({"time": self.sim.now, "action": action, **info})

    @property
    def finishing(self) -> bool:
        return self.committed >= self.plan.request.quantity

    # -- generation ------------------------------------------------------

    def start(self) -> None:
        t0 = self.plan.established_time or self.sim.now
        self.sim.schedule(t0, self._start_all, "start generation")

    def _start_all(self) -> None:
        for key in sorted(self.links):
            self._generate(*key)

    def _generate(self, pid: int, i: int) -> None:
        while not self.finishing and self.free[(pid, i, 0)] > 0 and self.free[(pid, i, 1)] > 0:
            self.free[(pid, i, 0)] -= 1
            self.free[(pid, i, 1)] -= 1
            self.generating += 1
            state, duration = self.links[(pid, i)]
            _, elapsed = self.sampler(state, duration, self.sim.rng("gen", pid, i))
            self.sim.schedule_in(elapsed, lambda pid=pid, i=i: self._link_up(pid, i), f"link {pid}:{i}")

    def _release(self, pid: int, i: int, side: int) -> None:
        self.free[(pid, i, side)] += 1

    def _link_up(self, pid: int, i: int) -> None:
        self.generating -= 1
        path = self.paths[pid]
        if self.finishing:
            self._release(pid, i, 0)
            self._release(pid, i, 1)
            return
        state, _ = self.links[(pid, i)]
        now = self.sim.now
        rec = EntanglementRecord(
            record_id=next(self._ids),
            generation_time=now,
            expiration_time=now + self.policy.cutoff,
            bell_index=BellIndex.PSI_PLUS,
            node_ids=(path[i], path[i + 1]),
            rho=state.rho.copy(),
            touched=[now, now],
            request_id=self.plan.request_id,
        )
        seg = Segment(rec, pid, i, i + 1)
        self._log("generated", path=pid, link=i, record=rec.record_id)
        self._add(seg)

    def _add(self, seg: Segment) -> None:
        self.segments[seg.record.record_id] = seg
        last = len(self.paths[seg.pid]) - 1
        if seg.a == 0 and seg.b == last:
            if self.plan.is_ghz:
                self._arm_cutoff(seg)
                t = self._notice_time(seg, last)
                self.sim.schedule(t, lambda: self._at_factory(seg), "factory notice")
            else:
                self._commit_pair(seg)
            return
        self._arm_cutoff(seg)
        if seg.a > 0:
            self._try_swaps(seg.pid, seg.a)
        if seg.b < last and seg.record.alive:
            self._try_swaps(seg.pid, seg.b)
        self._audit()

    def _arm_cutoff(self, seg: Segment) -> None:
        exp = seg.record.expiration_time
        if math.isfinite(exp):
            self.sim.schedule(exp, lambda: self.enforce_cutoff(self.sim.now), "cutoff")

    # -- cutoff ----------------------------------------------------------

    def enforce_cutoff(self, now: float) -> list[EntanglementRecord]:
        gone = []
        for seg in list(self.segments.values()):
            rec = seg.record
            if rec.alive and not seg.committed and now >= rec.expiration_time:
                self._discard(seg, "expired")
                gone.append(rec)
        return gone

    def _discard(self, seg: Segment, why: str) -> None:
        seg.record.mark_discarded()
        del self.segments[seg.record.record_id]
        self._log("discarded", path=seg.pid, record=seg.record.record_id, reason=why)
        self._free_ends(seg)

    def _teardown(self) -> None:
        """Drop every pair that can no longer contribute once the quantity is committed."""
        for seg in sorted(self.segments.values(), key=lambda s: s.record.record_id):
            if not seg.committed and seg.record.alive:
                self._discard(seg, "request complete")

    def _free_ends(self, seg: Segment) -> None:
        self._release(seg.pid, seg.a, 0)
        self._release(seg.pid, seg.b - 1, 1)
        self._generate(seg.pid, seg.a)
        self._generate(seg.pid, seg.b - 1)
        self._audit()

    # -- swapping --------------------------------------------------------

    def _try_swaps(self, pid: int, pos: int) -> None:
        while True:
            left = [s for s in self.segments.values() if s.pid == pid and s.b == pos and not s.committed]
            right = [s for s in self.segments.values() if s.pid == pid and s.a == pos and not s.committed]
            pairs = select_swap_candidates(left, right)
            if not pairs:
                return
            self.attempt_swap(pid, pos, *pairs[0])

    def attempt_swap(self, pid: int, pos: int, left: Segment, right: Segment) -> Segment | None:
        now = self.sim.now
        node = self.paths[pid][pos]
        for s in (left, right):
            if not s.record.alive or now > s.record.expiration_time:
                raise RuntimeError(f"record {s.record.record_id} is not usable for a swap at t={now}")
        ages = [now - left.record.generation_time, now - right.record.generation_time]
        expires = [_finite_or_str(left.record.expiration_time), _finite_or_str(right.record.expiration_time)]
        del self.segments[left.record.record_id], self.segments[right.record.record_id]
        if self.sim.rng("swap", node).random() >= self.policy.s_p:
            # a failed swap loses both chains
            self._log("swap_failed", node=node, records=[left.record.record_id, right.record.record_id], ages=ages,
                      expires=expires)
            left.record.mark_discarded()
            right.record.mark_discarded()
            self._free_ends(left)
            self._free_ends(right)
            return None
        left.record.mark_measured()
        right.record.mark_measured()
        advance(left.record, now, self.memory)
        advance(right.record, now, self.memory)
        draw = self.sim.rng("bsm", node).random()
        _, rho, frame = swap_states(
            left.record.rho, right.record.rho, left.record.bell_index, right.record.bell_index, draw, self.policy.s_q
        )
        rec = EntanglementRecord(
            record_id=next(self._ids),
            generation_time=now,
            expiration_time=now + self.policy.cutoff,
            bell_index=frame,
            node_ids=(left.record.node_ids[0], right.record.node_ids[-1]),
            rho=rho,
            touched=[now, now],
            request_id=self.plan.request_id,
        )
        merged = Segment(rec, pid, left.a, right.b, left.swaps + right.swaps + [(now, pos)])
        self._log("swapped", node=node, records=[left.record.record_id, right.record.record_id],
                  ages=ages, expires=expires, merged=rec.record_id)
        self._release(pid, pos - 1, 1)
        self._release(pid, pos, 0)
        self._generate(pid, pos - 1)
        self._generate(pid, pos)
        self._add(merged)
        return merged

    # -- bipartite delivery ---------------------------------------------

    def _commit_pair(self, seg: Segment) -> None:
        if self.finishing:
            self._discard(seg, "surplus")
            return
        seg.committed = True
        self.committed += 1
        if self.finishing:
            self._teardown()
        last = len(self.paths[seg.pid]) - 1
        ready = max(self._notice_time(seg, 0), self._notice_time(seg, last))
        self._log("committed", record=seg.record.record_id)
        self.sim.schedule(ready, lambda: self._corrected(seg), "corrections landed")

    def _corrected(self, seg: Segment) -> None:
        rec = seg.record
        advance(rec, self.sim.now, self.memory)
        rho = correct_to_psi_plus(rec.rho, rec.bell_index)
        rec.mark_measured()
        del self.segments[rec.record_id]
        self._free_ends(seg)
        users = self.plan.user_nodes
        hop = max(self.sim.classical_delay(u, self.topo.nodes[u].edge_router) for u in users)
        self.sim.schedule_in(hop, lambda: self._deliver(rho, densmat.bell_state()), "deliver")

    def _deliver(self, rho: np.ndarray, reference: np.ndarray) -> None:
        quantity = self.plan.request.quantity
        if len(self.delivered) >= quantity:
            return
        f = densmat.fidelity(rho, reference)
        self.delivered.append(DeliveredState(rho, f, self.sim.now - self.request_start, len(self.delivered)))
        self._log("delivered", index=len(self.delivered) - 1, fidelity=f)
        if len(self.delivered) == quantity:
            self.sim.stop()

    # -- GHZ fusion ------------------------------------------------------

    def _at_factory(self, seg: Segment) -> None:
        if not seg.record.alive:
            return
        self.factory_pool[seg.pid].append(seg)
        self._try_fuse()

    def _try_fuse(self) -> None:
        while not self.finishing:
            for pid in self.paths:
                self.factory_pool[pid] = [s for s in self.factory_pool[pid] if s.record.alive]
            if not all(self.factory_pool.values()):
                return
            chosen = []
            for pid in self.paths:
                pool = self.factory_pool[pid]
                pick = min(pool, key=lambda s: _priority(s, s.record.node_ids[0]))
                pool.remove(pick)
                chosen.append(pick)
            self._fuse(chosen)

    def _fuse(self, segs: list[Segment]) -> None:
        now = self.sim.now
        factory = self.plan.factory_node
        for s in segs:
            if now > s.record.expiration_time:
                raise RuntimeError(f"record {s.record.record_id} expired before fusion")
            del self.segments[s.record.record_id]
        ages = [now - s.record.generation_time for s in segs]
        expires = [_finite_or_str(s.record.expiration_time) for s in segs]
        swap_rng = self.sim.rng("swap", factory)
        ok = all([swap_rng.random() < self.policy.s_p for _ in segs])
        if not ok:
            self._log("fusion_failed", records=[s.record.record_id for s in segs], ages=ages, expires=expires)
            for s in segs:
                s.record.mark_discarded()
                self._free_ends(s)
            return
        for s in segs:
            s.record.mark_measured()
        self.committed += 1
        if self.finishing:
            self._teardown()
        bsm_rng = self.sim.rng("bsm", factory)
        rho = densmat.apply_noise(densmat.ghz_state(3), NoiseSpec.correlated_depolarizing(self.ghz_weight))
        # register layout: GHZ qubits not yet teleported, then endpoint qubits
        frames = []
        for s in segs:
            advance(s.record, now, self.memory)
            joint = densmat.tensor(rho, s.record.rho)
            width = densmat.num_qubits(joint)
            # pair qubits are the last two: endpoint, factory
            outcome, rho = densmat.bsm_project(joint, 0, width - 1, bsm_rng.random())
            # remaining order: GHZ qubits 1.., old endpoints, new endpoint
            endpoint = densmat.num_qubits(rho) - 1
            rho = densmat.apply_noise(rho, NoiseSpec.depolarizing(self.policy.s_q, [endpoint]))
            frames.append(s.record.bell_index.compose(outcome))
            self._release(s.pid, s.b - 1, 1)
            self._generate(s.pid, s.b - 1)
        self._log("fused", records=[s.record.record_id for s in segs], ages=ages, expires=expires)

        arrivals = []
        for s in segs:
            path = self.paths[s.pid]
            t_corr = max(now + self._km(path, 0, len(path) - 1) / self.sim.c_fiber, self._notice_time(s, 0))
            arrivals.append(t_corr)
            self.sim.schedule(t_corr, lambda s=s: self._release_endpoint(s), "ghz correction")
        for j, (s, t_corr) in enumerate(zip(segs, arrivals)):
            if t_corr > now:
                rho = densmat.apply_noise(rho, NoiseSpec.t1t2(self.memory.T1, self.memory.T2, t_corr - now, [j]))
            rho = densmat.apply_pauli(rho, j, frames[j].pauli_frame)
        users = self.plan.user_nodes
        done = max(
            t + self.sim.classical_delay(u, self.topo.nodes[u].edge_router) for t, u in zip(arrivals, users)
        )
        self.sim.schedule(done, lambda: self._deliver(rho, densmat.ghz_state(3)), "deliver")

    def _release_endpoint(self, seg: Segment) -> None:
        self._release(seg.pid, 0, 0)
        self._generate(seg.pid, 0)
        self._audit()

    # -- auditing ----------------------------------------------------------

    def occupancy(self) -> dict[int, int]:
        """Qubits in use per node, counted from slot counters."""
        used: dict[int, int] = {}
        for (pid, i, side), free in self.free.items():
            node = self.paths[pid][i + side]
            used[node] = used.get(node, 0) + self.plan.N - free
        return used

    def _audit(self) -> None:
        if not self.auditing:
            return
        reserved: dict[int, int] = {}
        for r in self.plan.reservations:
            reserved[r.node] = reserved.get(r.node, 0) + r.count
        holding: dict[int, int] = {}
        for seg in self.segments.values():
            for n in seg.record.node_ids:
                holding[n] = holding.get(n, 0) + 1
        for node, used in self.occupancy().items():
            if not 0 <= used <= reserved.get(node, 0):
                raise AssertionError(f"node {node} uses {used} qubits, {reserved.get(node, 0)} reserved")
            if holding.get(node, 0) > used:
                raise AssertionError(f"node {node} holds {holding[node]} pairs in {used} slots")
        for free in self.free.values():
            if not 0 <= free <= self.plan.N:
                raise AssertionError(f"slot counter {free} outside [0, {self.plan.N}]")

    def write_trace(self, fh: IO[str]) -> None:
        for entry in self.log:
            fh.write(json.dumps(entry) + "\n")

    def run(self, deadline: float = math.inf) -> list[DeliveredState]:
        self.start()
        self.sim.run_until(deadline)
        return self.delivered


def run_request(
    sim: Simulator,
    topology: Topology,
    plan: ConnectionPlan,
    link: LinkParams,
    memory: MemoryParams = MemoryParams(),
    policy: SwapPolicy | None = None,
    deadline: float = math.inf,
    **kwargs,
) -> list[DeliveredState]:
    return RequestRunner(sim, topology, plan, link, memory, policy, **kwargs).run(deadline)
