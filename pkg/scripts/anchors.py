"""Print the closed-form anchor values next to what the simulator produces."""

from earlyqnet import densmat
from earlyqnet.controller import Request, RequestKind
from earlyqnet.densmat import NoiseSpec
from earlyqnet.devents import Simulator
from earlyqnet.controller import Controller
from earlyqnet.distengine import NO_DECAY, RequestRunner
from earlyqnet.linkmodel import LinkParams, heralded_link_state, loss_probability
from earlyqnet.netmodel import chain_topology, default_topology


def deliver(topo, request, link):
    sim = Simulator(0, distance=topo.classical_distance)
    plan = Controller(sim, topo).establish_connection(request).plan
    return RequestRunner(sim, topo, plan, link, NO_DECAY).run()


def main() -> None:
    print(f"loss(50 km, 0.2 dB/km)      {loss_probability(50, 0.2):.6f}   expect 0.683772")
    print(f"herald p(50 km)             {heralded_link_state(LinkParams()).p:.6f}   expect 0.050000")

    chain = Request("A.1", ("Z.1",), RequestKind.REMOTE_BIPARTITE, 1)
    for V in (0.9, 1.0):
        (d,) = deliver(chain_topology(1), chain, LinkParams(V=V))
        print(f"single link V={V:<4}          {d.fidelity:.6f}   expect {(1 + V) / 2:.6f}")
    (d,) = deliver(chain_topology(2), chain, LinkParams(s_q=0.83))
    print(f"one swap s_q=0.83           {d.fidelity:.6f}   expect 0.872500")

    rho = densmat.apply_noise(densmat.bell_state(), NoiseSpec.t1t2(float("inf"), 1.0, 1.0, [0]))
    print(f"T2 decay, one qubit, 1 s   {abs(rho[1, 2]):.6f}   expect 0.183940")

    ghz = Request("A.1", ("B.2", "D.1"), RequestKind.REMOTE_GHZ, 1)
    (d,) = deliver(default_topology(), ghz, LinkParams())
    print(f"GHZ, ideal links            {d.fidelity:.6f}   expect 0.980000")


if __name__ == "__main__":
    main()
