import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlyqnet import densmat
from earlyqnet.linkmodel import (
    DegenerateLinkError,
    LinkParams,
    attempt_duration,
    heralded_link_state,
    link_fidelity_no_dark_counts,
    loss_probability,
    sample_generation,
)


def test_loss_probability_examples():
    assert loss_probability(50, 0.2) == pytest.approx(1 - 10**-0.5, abs=1e-12)
    assert loss_probability(50, 0.2) == pytest.approx(0.68377, abs=1e-5)
    assert loss_probability(100, 0.2) == pytest.approx(0.9, abs=1e-12)
    assert loss_probability(0, 0.2) == 0.0
    with pytest.raises(ValueError):
        loss_probability(-1, 0.2)


def test_ideal_success_probabilities():
    assert heralded_link_state(LinkParams(L=0, p_L=0.2)).p == pytest.approx(0.5, abs=1e-12)
    assert heralded_link_state(LinkParams(L=50, p_L=0.2)).p == pytest.approx(0.05, abs=1e-12)


def test_visibility_sets_fidelity():
    s = heralded_link_state(LinkParams(V=0.9, p_dc=0))
    assert densmat.fidelity(s.rho, densmat.bell_state()) == pytest.approx(0.95, abs=1e-12)
    assert link_fidelity_no_dark_counts(0.9) == pytest.approx(0.95)


def test_attempt_duration():
    assert attempt_duration(50) == pytest.approx(2.5e-4, rel=1e-12)


def test_zero_arrival_is_degenerate():
    # photons never arrive: nothing can herald
    for params in (LinkParams(L=100, p_L=1000), LinkParams(d_e=0.0)):
        with pytest.raises(DegenerateLinkError):
            heralded_link_state(params)


def test_invalid_parameters_rejected():
    for bad in ({"V": 1.5}, {"d_e": 1.2}, {"p_dc": -0.1}, {"L": -1}, {"p_L": -0.1}):
        with pytest.raises(ValueError):
            LinkParams(**bad)


@settings(max_examples=200, deadline=None)
@given(
    L=st.floats(0, 200), p_L=st.floats(0, 0.5), V=st.floats(0, 1),
    d_e=st.floats(0.01, 1), p_dc=st.floats(0, 0.1),
)
def test_components_sum_and_state_valid(L, p_L, V, d_e, p_dc):
    s = heralded_link_state(LinkParams(L, p_L, V, d_e, p_dc))
    assert s.p == pytest.approx(s.p_T + s.p_F1 + s.p_F2 + s.p_F3 + s.p_F4, abs=1e-12)
    for comp in (s.p_T, s.p_F1, s.p_F2, s.p_F3, s.p_F4):
        assert comp >= -1e-15
    if s.p_T + s.p_F1 + s.p_F2 > 1e-12:
        assert abs(np.trace(s.rho) - 1) < 1e-12
        assert np.linalg.eigvalsh(s.rho).min() > -1e-12


def test_success_non_increasing_in_length_and_loss():
    Ls = np.linspace(0, 200, 41)
    for p_L in (0.1, 0.2, 0.3):
        ps = [heralded_link_state(LinkParams(L, p_L, d_e=0.5, p_dc=0.01)).p for L in Ls]
        assert all(b <= a + 1e-15 for a, b in zip(ps, ps[1:]))
    for L in (10, 50, 100):
        ps = [heralded_link_state(LinkParams(L, p_L)).p for p_L in np.linspace(0, 0.5, 21)]
        assert all(b <= a + 1e-15 for a, b in zip(ps, ps[1:]))


def test_attempt_counts_are_geometric():
    state = heralded_link_state(LinkParams(L=50, p_L=0.2))
    rng = np.random.default_rng(11)
    n = 20000
    draws = [sample_generation(state, 1.0, rng) for _ in range(n)]
    attempts = np.array([a for a, _ in draws])
    assert all(t == pytest.approx(a * 1.0) for a, t in draws)
    mean, var = 1 / state.p, (1 - state.p) / state.p**2
    assert abs(attempts.mean() - mean) < 3 * math.sqrt(var / n)
    assert attempts.min() >= 1



def test_sampler_rejects_impossible_probability():
    state = heralded_link_state(LinkParams())
    bad = type(state)(0.0, state.rho, 0, 0, 0, 0, 0)
    with pytest.raises(DegenerateLinkError):
        sample_generation(bad, 1e-3, np.random.default_rng(0))
    sure = type(state)(1.0, state.rho, 1, 0, 0, 0, 0)
    assert sample_generation(sure, 1e-3, np.random.default_rng(0)) == (1, 1e-3)
