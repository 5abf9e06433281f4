"""Elementary-link physics for midpoint double-click entanglement generation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from earlyqnet import densmat

C_FIBER_KM_S = 200_000.0


class DegenerateLinkError(ValueError):
    """A link that can never herald entanglement."""


@dataclass(frozen=True)
class LinkParams:
    """Physical parameters of one link.

    ``p_L`` is fibre attenuation in dB/km, ``d_e`` the detection probability
    excluding fibre loss, ``p_dc`` the per-window dark-count probability.
    ``s_p``/``s_q`` are the success probability and depolarising quality of
    a swap at either end of the link.
    """

    L: float = 50.0
    p_L: float = 0.2
    V: float = 1.0
    d_e: float = 1.0
    p_dc: float = 0.0
    s_p: float = 1.0
    s_q: float = 1.0

    def __post_init__(self) -> None:
        if self.L < 0:
            raise ValueError(f"link length must be non-negative, got {self.L}")
        if self.p_L < 0:
            raise ValueError(f"attenuation must be non-negative, got {self.p_L}")
        for name in ("V", "d_e", "p_dc", "s_p", "s_q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def with_length(self, L: float) -> "LinkParams":
        return replace(self, L=L)


@dataclass(frozen=True)
class HeraldedLinkState:
    p: float
    rho: np.ndarray
    p_T: float
    p_F1: float
    p_F2: float
    p_F3: float
    p_F4: float


def loss_probability(L: float, p_L: float) -> float:
    """Photon loss over half the link, i.e. from a node to the midpoint."""
    if L < 0 or p_L < 0:
        raise ValueError("length and attenuation must be non-negative")
    return 1.0 - 10.0 ** (-(L / 2) * p_L / 10)


def heralded_link_state(params: LinkParams) -> HeraldedLinkState:
    p_arrive = (1.0 - loss_probability(params.L, params.p_L)) * params.d_e
    pa = pb = p_arrive
    V, dc = params.V, params.p_dc
    no_dc = (1 - dc) ** 2
    p_T = 0.5 * pa * pb * V * no_dc
    p_F1 = 0.5 * pa * pb * (1 - V) * no_dc
    p_F2 = 0.5 * pa * pb * (1 + V) * dc * no_dc
    p_F3 = 2 * (pa * (1 - pb) + (1 - pa) * pb) * dc * no_dc
    p_F4 = 4 * (1 - pa) * (1 - pb) * dc**2 * no_dc
    norm = p_T + p_F1 + p_F2
    if norm <= 0:
        raise DegenerateLinkError(f"link cannot herald entanglement: {params}")
    m1 = np.diag([0, 0.5, 0.5, 0]).astype(complex)
    m2 = np.diag([0.5, 0, 0, 0.5]).astype(complex)
    rho = (p_T * densmat.bell_state(densmat.BellIndex.PSI_PLUS) + p_F1 * m1 + p_F2 * m2) / norm
    p = p_T + p_F1 + p_F2 + p_F3 + p_F4
    return HeraldedLinkState(p, rho, p_T, p_F1, p_F2, p_F3, p_F4)


def attempt_duration(L: float, c_fiber: float = C_FIBER_KM_S) -> float:
    """Seconds per attempt: photon flight to the midpoint plus herald return."""
    return L / c_fiber


def sample_generation(state: HeraldedLinkState, duration: float, rng: np.random.Generator) -> tuple[int, float]:
    """Number of attempts until the first herald and the time they take."""
    if not 0.0 < state.p <= 1.0:
        raise DegenerateLinkError(f"success probability {state.p} is not in (0, 1]")
    attempts = 1 if state.p == 1.0 else int(rng.geometric(state.p))
    return attempts, attempts * duration


def link_fidelity_no_dark_counts(V: float) -> float:
    """Heralded-state fidelity to |Psi+> when ``p_dc == 0``."""
    return (1 + V) / 2

