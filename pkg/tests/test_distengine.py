import math

import numpy as np
import pytest

from earlyqnet import densmat
from earlyqnet.controller import Request, RequestKind
from earlyqnet.densmat import BellIndex
from earlyqnet.distengine import (
    NO_DECAY,
    DegeneratePlanError,
    MemoryParams,
    RequestRunner,
    Segment,
    SwapPolicy,
    correct_to_psi_plus,
    ghz_weight,
    select_swap_candidates,
    swap_states,
)
from earlyqnet.linkmodel import LinkParams
from earlyqnet.netmodel import EntanglementRecord, chain_topology, default_topology

from conftest import establish, one_attempt

CHAIN_REQ = Request("A.1", ("Z.1",), RequestKind.REMOTE_BIPARTITE, 1)
BIPARTITE = Request("A.1", ("C.1",), RequestKind.REMOTE_BIPARTITE, 3)
GHZ = Request("A.1", ("B.2", "D.1"), RequestKind.REMOTE_GHZ, 2)


def runner_for(topo, request, link=LinkParams(), memory=NO_DECAY, policy=None, N=1, seed=0, **kw):
    cutoff = policy.cutoff if policy else math.inf
    sim, ctl, plan = establish(topo, request, N=N, cutoff=cutoff, seed=seed)
    return RequestRunner(sim, topo, plan, link, memory, policy, **kw)


def seg(rid, t, nodes, a=0, b=1):
    rec = EntanglementRecord(rid, t, math.inf, BellIndex.PSI_PLUS, nodes, densmat.bell_state(), [t, t])
    return Segment(rec, 1, a, b)


# -- pure helpers -------------------------------------------------------------

def test_swap_candidates_oldest_first():
    left = [seg(1, 2.0, (5, 9)), seg(2, 1.0, (7, 9)), seg(3, 1.0, (4, 9))]
    right = [seg(4, 3.0, (9, 8)), seg(5, 0.5, (9, 2))]
    pairs = select_swap_candidates(left, right)
    assert [(l.record.record_id, r.record.record_id) for l, r in pairs] == [(3, 5), (2, 4)]


def test_swap_candidates_record_id_breaks_full_ties():
    left = [seg(8, 1.0, (4, 9)), seg(6, 1.0, (4, 9))]
    right = [seg(7, 1.0, (9, 2))]
    assert select_swap_candidates(left, right)[0][0].record.record_id == 6
    assert select_swap_candidates(left, []) == []


def test_swap_then_correct_gives_psi_plus_with_s_q():
    psi = densmat.bell_state()
    for draw in (0.1, 0.3, 0.6, 0.9):
        _, rho, frame = swap_states(psi, psi, BellIndex.PSI_PLUS, BellIndex.PSI_PLUS, draw, 0.83)
        out = correct_to_psi_plus(rho, frame)
        assert densmat.fidelity(out, psi) == pytest.approx(0.8725, abs=1e-12)


def test_ghz_weight():
    assert ghz_weight(0.98) == pytest.approx((0.98 - 0.125) / 0.875)
    assert ghz_weight(1.0) == 1.0


def test_memory_params_validation():
    with pytest.raises(ValueError):
        MemoryParams(1.0, 3.0)
    with pytest.raises(ValueError):
        SwapPolicy(cutoff=-1)


# -- simulated deliveries -----------------------------------------------------

def test_ideal_four_link_path_is_perfect():
    r = runner_for(default_topology(), BIPARTITE, N=2, audit=True)
    out = r.run()
    assert len(out) == 3
    for d in out:
        assert d.fidelity == pytest.approx(1.0, abs=1e-9)
    assert [d.index for d in out] == [0, 1, 2]
    assert all(a.completion_time <= b.completion_time for a, b in zip(out, out[1:]))


def test_single_swap_depolarises():
    topo = chain_topology(2)
    r = runner_for(topo, CHAIN_REQ, link=LinkParams(s_q=0.83), sampler=one_attempt)
    (d,) = r.run()
    assert d.fidelity == pytest.approx(0.8725, abs=1e-9)
    # both links herald at 2.5e-4 after setup; corrections travel 50 km, then the 1 km user hop
    assert d.completion_time == pytest.approx(r.plan.established_time + 2.5e-4 + 2.5e-4 + 5e-6, rel=1e-9)


def test_swap_success_frequency():
    topo = chain_topology(2)
    req = Request("A.1", ("Z.1",), RequestKind.REMOTE_BIPARTITE, 400)
    r = runner_for(topo, req, link=LinkParams(s_p=0.5), N=1, trace=True)
    r.run()
    ok = sum(e["action"] == "swapped" for e in r.log)
    bad = sum(e["action"] == "swap_failed" for e in r.log)
    n = ok + bad
    assert ok >= 400
    assert abs(ok / n - 0.5) < 3 * math.sqrt(0.25 / n)


def _sampler(sim, slow_link, slow_attempts):
    def sample(state, duration, rng):
        k = slow_attempts if rng is sim.rng("gen", *slow_link) else 1
        return k, k * duration
    return sample


def test_zero_cutoff_simultaneous_links_still_swap():
    topo = chain_topology(2)
    sim, _, plan = establish(topo, CHAIN_REQ, cutoff=0.0)
    pid = next(iter(plan.paths))
    r = RequestRunner(sim, topo, plan, LinkParams(), NO_DECAY, sampler=_sampler(sim, (pid, 1), 1), trace=True)
    assert len(r.run()) == 1
    assert not any(e["action"] == "discarded" for e in r.log)


def test_zero_cutoff_staggered_links_expire_until_they_coincide():
    topo = chain_topology(2)
    sim, _, plan = establish(topo, CHAIN_REQ, cutoff=0.0)
    pid = next(iter(plan.paths))
    # link 0 heralds every attempt, link 1 every third: only coincident pairs survive
    r = RequestRunner(sim, topo, plan, LinkParams(), NO_DECAY, sampler=_sampler(sim, (pid, 1), 3), trace=True, audit=True)
    r.run(deadline=0.05)
    actions = [e["action"] for e in r.log]
    first = actions.index("swapped") if "swapped" in actions else len(actions)
    assert actions[:first].count("discarded") >= 2
    assert all(a == 0 for e in r.log if e["action"] == "swapped" for a in e["ages"])


def test_cutoff_boundary_is_inclusive():
    topo = chain_topology(2)
    sim, _, plan = establish(topo, CHAIN_REQ, cutoff=0.5)
    r = RequestRunner(sim, topo, plan, LinkParams(), NO_DECAY)
    s = seg(1, 1.0, (1, 2))
    s.record.expiration_time = 1.5
    s.pid = next(iter(plan.paths))
    r.segments[1] = s
    assert r.enforce_cutoff(1.4999999) == []
    assert r.enforce_cutoff(1.5) == [s.record]
    assert not s.record.alive


def test_swap_ages_never_exceed_cutoff():
    topo = default_topology(100)
    link = LinkParams(L=100, d_e=0.5, s_p=0.8)
    r = runner_for(topo, BIPARTITE, link=link, memory=MemoryParams(), policy=SwapPolicy(0.05, 0.8, 1.0),
                   N=2, seed=3, trace=True, audit=True)
    r.run()
    used = [(e["time"], x) for e in r.log if e["action"] in ("swapped", "swap_failed") for x in e["expires"]]
    assert used and all(t <= x for t, x in used)
    ages = [a for e in r.log if e["action"] == "swapped" for a in e["ages"]]
    assert max(ages) <= 0.05 + 1e-12
    assert len(r.delivered) == 3


def test_ghz_ideal_matches_local_state_fidelity():
    r = runner_for(default_topology(), GHZ, N=1, audit=True)
    out = r.run()
    assert len(out) == 2
    for d in out:
        assert d.fidelity == pytest.approx(0.98, abs=1e-9)
        assert d.rho.shape == (8, 8)


def test_ghz_with_cutoff_and_failures_audits_clean():
    link = LinkParams(d_e=0.5, s_p=0.7, s_q=0.95)
    r = runner_for(default_topology(), GHZ, link=link, memory=MemoryParams(), policy=SwapPolicy(0.2, 0.7, 0.95),
                   N=3, seed=8, trace=True, audit=True)
    out = r.run()
    assert len(out) == 2
    r.sim.run_until()
    assert all(v == 0 for v in r.occupancy().values())
    used = [(e["time"], x) for e in r.log if e["action"] in ("fused", "fusion_failed") for x in e["expires"]]
    assert used and all(t <= x for t, x in used)
    for d in out:
        assert 0.125 <= d.fidelity <= 0.98 + 1e-9


@pytest.mark.parametrize("request_", [BIPARTITE, GHZ], ids=["bipartite", "ghz"])
def test_decay_only_lowers_fidelity(request_):
    link = LinkParams(d_e=0.5)
    a = runner_for(default_topology(), request_, link=link, memory=NO_DECAY, N=2, seed=4).run()
    b = runner_for(default_topology(), request_, link=link, memory=MemoryParams(), N=2, seed=4).run()
    assert [x.completion_time for x in a] == [x.completion_time for x in b]
    for x, y in zip(a, b):
        assert x.fidelity >= y.fidelity - 1e-12


def test_t2_does_not_change_timing():
    link = LinkParams(L=50, d_e=0.3, s_p=0.6)
    times = []
    for T2 in (1.0, 100.0):
        r = runner_for(default_topology(), BIPARTITE, link=link, memory=MemoryParams(T2=T2),
                       policy=SwapPolicy(0.5, 0.6, 1.0), N=2, seed=12)
        times.append([d.completion_time for d in r.run()])
    assert times[0] == times[1]


def test_occupancy_returns_to_zero_after_completion():
    r = runner_for(default_topology(), BIPARTITE, N=2)
    r.run()
    r.sim.run_until()
    assert all(v == 0 for v in r.occupancy().values())
    assert r.segments == {}


def test_local_plan_is_degenerate():
    topo = default_topology()
    req = Request("A.1", ("A.2",), RequestKind.LOCAL_BIPARTITE, 1)
    sim, _, plan = establish(topo, req)
    with pytest.raises(DegeneratePlanError):
        RequestRunner(sim, topo, plan, LinkParams())


def test_trace_is_json_lines(tmp_path):
    r = runner_for(chain_topology(2), CHAIN_REQ, trace=True)
    r.run()
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        r.write_trace(fh)
    lines = path.read_text().splitlines()
    assert len(lines) == len(r.log) and '"delivered"' in lines[-1]
