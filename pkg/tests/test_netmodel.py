import numpy as np
import pytest

from earlyqnet.densmat import BellIndex, bell_state
from earlyqnet.netmodel import (
    EntanglementRecord,
    NodeKind,
    PortMode,
    RecordStatus,
    ResourceUnavailable,
    TopologyError,
    chain_topology,
    default_topology,
    load_topology,
)


def test_default_topology_shape():
    topo = default_topology()
    assert topo.main_network_nodes() == list(range(1, 11))
    assert {topo.nodes[i].kind for i in (6, 7, 8, 9)} == {NodeKind.REPEATER}
    assert all(topo.link_length(a, b) == 50 for a, b in [(1, 6), (6, 10), (10, 9), (9, 3)])
    assert topo.is_path([1, 6, 10, 9, 3])
    assert topo.path_length([1, 6, 10, 9, 3]) == 200
    assert topo.host("A.1").id == 11 and topo.host("C.1").edge_router == 3
    assert topo.edge_router_by_prefix("B") == 2


def test_uniform_length_copy_leaves_user_links():
    topo = default_topology(120)
    assert topo.link_length(6, 10) == 120
    assert topo.link_length(1, 11) == 1
    assert default_topology().link_length(6, 10) == 50


def test_ports_numbered_with_active_lower_id():
    topo = default_topology()
    p = topo.nodes[6].port_to(1)
    assert p.mode is PortMode.PASSIVE
    assert topo.nodes[1].port_to(6).mode is PortMode.ACTIVE
    assert sorted(topo.nodes[6].ports) == [1, 2, 3]
    with pytest.raises(KeyError):
        topo.nodes[6].port_to(3)


def test_hostnames_follow_prefix():
    topo = default_topology()
    assert {topo.nodes[i].hostname for i in (11, 12, 21, 22)} == {"A.1", "A.2", "B.1", "B.2"}
    with pytest.raises(KeyError):
        topo.host("Q.1")


def test_unknown_node_in_link_reported():
    doc = "node 1 kind=router capacity=4\nlink 1 99 length_km=5\n"
    with pytest.raises(TopologyError) as exc:
        load_topology(doc)
    assert any("99" in p for p in exc.value.problems)


def test_all_problems_collected():
    doc = "\n".join([
        "node 1 kind=router capacity=0",
        "node 1 kind=router capacity=4",
        "node 2 kind=router capacity=4",
        "node 3 kind=user_end capacity=4",
        "link 1 2 length_km=5",
        "link 2 4 length_km=6",
    ])
    with pytest.raises(TopologyError) as exc:
        load_topology(doc)
    text = "\n".join(exc.value.problems)
    for fragment in ("duplicate", "unknown node 4", "prefix and edge_router"):
        assert fragment in text


def test_unequal_main_lengths_rejected():
    doc = "node 1 kind=router capacity=4\nnode 2 kind=router capacity=4\nnode 3 kind=router capacity=4\n" \
          "link 1 2 length_km=5\nlink 2 3 length_km=6\n"
    with pytest.raises(TopologyError, match="differ"):
        load_topology(doc)


def test_reservation_accounting():
    topo = chain_topology(2, capacity=10)
    r1 = topo.reserve_memory(2, 4, "a")
    r2 = topo.reserve_memory(2, 6, "b")
    assert topo.memory[2].free == 0 and topo.total_reserved() == 10
    with pytest.raises(ResourceUnavailable):
        topo.reserve_memory(2, 1, "c")
    with pytest.raises(ValueError):
        topo.reserve_memory(2, 0, "c")
    topo.release(r1)
    assert topo.memory[2].free == 4
    topo.release(r2)
    assert topo.total_reserved() == 0


def test_record_lifecycle():
    rec = EntanglementRecord(1, 0.0, 1.0, BellIndex.PSI_PLUS, (1, 2), bell_state(), [0.0, 0.0])
    assert rec.alive
    rec.mark_discarded()
    assert rec.status is RecordStatus.DISCARDED and not rec.alive
    with pytest.raises(RuntimeError):
        rec.mark_discarded()
    rec2 = EntanglementRecord(2, 0.0, 1.0, BellIndex.PSI_PLUS, (1, 2), bell_state(), [0.0, 0.0])
    rec2.mark_measured()
    assert rec2.status is RecordStatus.MEASURED
    assert np.allclose(rec2.rho, bell_state())
