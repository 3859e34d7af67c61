"""Regime chain: validation, sampling, intensities and occupation times."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from imamarket.chain import (
    ChainPath,
    RegimeChain,
    counting_and_compensator,
    lambda_j,
    occupation_expectation,
    simulate_chain,
    transition_matrix,
)
from imamarket.errors import SpecError
from imamarket.montecarlo import mean_and_stderr, simulate_statistics
from imamarket.jumps import LevyJumpSpec, SwitchJumpSpec


def two_state_occupation(q01, q10, horizon):
    """Expected time in state 0 starting from state 0, by solving the 2-state ODE."""
    s = q01 + q10
    return q10 / s * horizon + q01 / s**2 * (1.0 - np.exp(-s * horizon))


@st.composite
def generators(draw, max_n=4):
    n = draw(st.integers(1, max_n))
    if n == 1:
        return np.zeros((1, 1))
    off = np.array(draw(st.lists(st.floats(0.05, 5.0), min_size=n * n, max_size=n * n))).reshape(n, n)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(off.sum(axis=1))


class TestValidation:
    def test_zero_offdiagonal_rejected(self):
        with pytest.raises(SpecError) as err:
            RegimeChain([[0.0, 0.0], [0.0, 0.0]])
        assert err.value.field == "intensity"

    def test_row_sum_rejected(self):
        with pytest.raises(SpecError):
            RegimeChain([[-1.0, 2.0], [1.0, -1.0]])

    def test_single_state_must_be_zero(self):
        with pytest.raises(SpecError):
            RegimeChain([[1.0]])

    def test_initial_state_range(self):
        with pytest.raises(SpecError) as err:
            RegimeChain([[-1.0, 1.0], [1.0, -1.0]], 2)
        assert err.value.field == "initial_state"

    def test_initial_distribution(self):
        ch = RegimeChain([[-1.0, 1.0], [1.0, -1.0]], [0.25, 0.75])
        np.testing.assert_array_equal(ch.initial_distribution, [0.25, 0.75])
        with pytest.raises(SpecError):
            RegimeChain([[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.6])

    def test_path_rejects_repeated_state(self):
        ch = RegimeChain([[-1.0, 1.0], [1.0, -1.0]])
        with pytest.raises(SpecError):
            ChainPath(ch, 1.0, [0.5], [0, 0])


class TestSampling:
    def test_single_state_has_no_epochs(self):
        path = simulate_chain(RegimeChain([[0.0]]), 5.0, seed=3)
        assert path.epochs.size == 0
        assert np.all(path.state_at(np.linspace(0, 5, 11)) == 0)

    def test_seed_reproducible(self):
        ch = RegimeChain([[-2.0, 1.0, 1.0], [0.5, -1.0, 0.5], [1.0, 1.0, -2.0]])
        a, b = simulate_chain(ch, 3.0, 11), simulate_chain(ch, 3.0, 11)
        np.testing.assert_array_equal(a.epochs, b.epochs)
        np.testing.assert_array_equal(a.states, b.states)

    def test_mean_epoch_count(self):
        """E[#epochs] = sum_i (-lambda_ii) tau_i, the integrated exit rate."""
        ch = RegimeChain([[-1.0, 1.0], [2.5, -2.5]], 0)
        st_ = simulate_statistics(ch, LevyJumpSpec.none(2), SwitchJumpSpec.none(2), [2.0], 100_000, 5)
        counts = st_.transition_counts()[:, 0].sum(axis=(1, 2))
        mean, se = mean_and_stderr(counts)
        expected = occupation_expectation(ch, 2.0) @ ch.exit_rates
        assert abs(mean - expected) < 3 * se

    def test_state_before_and_at(self):
        ch = RegimeChain([[-1.0, 1.0], [1.0, -1.0]])
        path = ChainPath(ch, 2.0, [0.5, 1.5], [0, 1, 0])
        assert path.state_before(0.5) == 0 and path.state_at(0.5) == 1
        assert path.state_before(1.5) == 1 and path.state_at(1.5) == 0
        assert path.state_before(0.0) == 0


class TestIntensity:
    def test_zero_on_own_state(self):
        ch = RegimeChain([[-1.0, 1.0], [3.0, -3.0]])
        path = ChainPath(ch, 1.0, [], [0])
        assert lambda_j(path, 0, 0.5) == 0.0
        assert lambda_j(path, 1, 0.5) == 1.0

    def test_three_states(self):
        ch = RegimeChain([[-3.0, 1.0, 2.0], [0.7, -1.0, 0.3], [1.0, 1.0, -2.0]])
        path = ChainPath(ch, 1.0, [0.2], [0, 1])
        assert lambda_j(path, 0, 0.6) == 0.7

    def test_time_range(self):
        path = simulate_chain(RegimeChain([[-1.0, 1.0], [1.0, -1.0]]), 1.0, 0)
        with pytest.raises(ValueError):
            lambda_j(path, 0, 1.5)

    def test_compensator_without_epochs(self):
        ch = RegimeChain([[-0.7, 0.7], [1.0, -1.0]])
        path = ChainPath(ch, 2.0, [], [0])
        assert counting_and_compensator(path, 1, 1.5) == (0, pytest.approx(0.7 * 1.5, abs=1e-15))
        assert counting_and_compensator(path, 1, 0.0) == (0, 0.0)

    def test_compensated_count_mean_zero(self):
        ch = RegimeChain([[-1.2, 1.2], [0.8, -0.8]], 0)
        vals = [counting_and_compensator(simulate_chain(ch, 1.0, s), 1, 1.0) for s in range(4000)]
        bar = np.array([c - phi for c, phi in vals])
        mean, se = mean_and_stderr(bar)
        assert abs(mean) < 3 * se

    def test_compensated_count_mean_zero_batch(self):
        ch = RegimeChain([[-1.2, 1.2], [0.8, -0.8]], 0)
        st_ = simulate_statistics(ch, LevyJumpSpec.none(2), SwitchJumpSpec.none(2), [1.0], 100_000, 9)
        bar = st_.transition_counts()[:, 0, 0, 1] - st_.occupation[:, 0, 0] * 1.2
        mean, se = mean_and_stderr(bar)
        assert abs(mean) < 3 * se


class TestOccupation:
    def test_single_state(self):
        np.testing.assert_allclose(occupation_expectation(RegimeChain([[0.0]]), 2.5), [2.5])

    def test_symmetric_stationary(self):
        ch = RegimeChain([[-1.3, 1.3], [1.3, -1.3]], [0.5, 0.5])
        np.testing.assert_allclose(occupation_expectation(ch, 4.0), [2.0, 2.0], rtol=1e-13)

    def test_two_state_closed_form(self):
        ch = RegimeChain([[-0.7, 0.7], [1.9, -1.9]], 0)
        tau = occupation_expectation(ch, 3.0)
        expected = two_state_occupation(0.7, 1.9, 3.0)
        np.testing.assert_allclose(tau, [expected, 3.0 - expected], rtol=1e-12)

    def test_monte_carlo(self):
        ch = RegimeChain([[-1.0, 1.0], [2.0, -2.0]], 0)
        st_ = simulate_statistics(ch, LevyJumpSpec.none(2), SwitchJumpSpec.none(2), [1.0], 100_000, 21)
        mean, se = mean_and_stderr(st_.occupation[:, 0, 0])
        assert abs(mean - occupation_expectation(ch, 1.0)[0]) < 3 * se

    def test_transition_matrix_matches_expm(self):
        lam = np.array([[-2.0, 1.5, 0.5], [0.3, -0.4, 0.1], [1.0, 2.0, -3.0]])
        np.testing.assert_allclose(transition_matrix(RegimeChain(lam), 1.7), expm(1.7 * lam), atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(generators(), st.floats(0.1, 5.0))
def test_transition_matrix_stochastic(lam, t):
    p = transition_matrix(RegimeChain(lam), t)
    assert np.all(p >= -1e-15)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(generators(), st.floats(0.1, 5.0))
def test_occupation_sums_to_horizon(lam, t):
    tau = occupation_expectation(RegimeChain(lam), t)
    assert np.all(tau >= 0)
    assert tau.sum() == pytest.approx(t, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(generators(), st.integers(0, 2**31 - 1), st.floats(0.1, 3.0))
def test_path_occupation_consistent(lam, seed, horizon):
    path = simulate_chain(RegimeChain(lam), horizon, seed)
    occ = path.occupation(horizon)
    assert occ.sum() == pytest.approx(horizon, rel=1e-12)
    assert np.all(np.diff(path.epochs) > 0)
    sources, targets = path.transitions(horizon)
    assert np.all(sources != targets)
