#!/usr/bin/env python3
"""
Tests for the Backlog Chain (Method 2)
======================================
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from backlog_chain import (
    build_chain,
    chain_frame,
    expected_hitting_time_seconds,
    expected_visits,
    hitting_times,
    hitting_times_dense,
    simulate_absorption,
)
from errors import StableRegime
from protocol_models import Protocol, ProtocolParams, ServiceRateCurve, service_rate_curve

TOY_CURVE = ServiceRateCurve.from_rates([2.0, 0.5])


def random_chain(rng):
    """Unstable chain with 2 <= N' <= 6 and rho_x <= 0.95 below N'."""
    lam = float(rng.uniform(0.5, 2.0))
    n_prime = int(rng.integers(2, 7))
    above = np.sort(rng.uniform(1.05 * lam, 4.0 * lam, size=n_prime - 1))[::-1]
    below = rng.uniform(0.3 * lam, lam, size=int(rng.integers(1, 3)))
    rates = np.concatenate([above, np.sort(below)[::-1]])
    return build_chain(len(rates), lam, ServiceRateCurve.from_rates(rates))


class TestBuildChain:
    """Tests for transition probabilities."""

    def test_toy_probabilities(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        assert chain.N_prime == 2
        assert chain.up[1] == pytest.approx(1 / 3)
        assert chain.down[1] == pytest.approx(1 / 3)
        assert chain.stay[1] == pytest.approx(1 / 3)
        assert chain.rho == (0.5,)

    def test_empty_state_always_moves_up(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        assert (chain.up[0], chain.down[0], chain.stay[0]) == (1.0, 0.0, 0.0)

    def test_rows_partition(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            chain = random_chain(rng)
            for x in range(chain.N_prime):
                assert chain.up[x] + chain.down[x] + chain.stay[x] == pytest.approx(1.0, abs=1e-15)
                assert min(chain.up[x], chain.down[x], chain.stay[x]) >= 0.0

    def test_transition_matrix_stochastic(self):
        P = build_chain(2, 1.0, TOY_CURVE).transition_matrix()
        assert P.shape == (3, 3)
        np.testing.assert_allclose(P.sum(axis=1), 1.0)
        assert P[2, 2] == 1.0

    def test_stable_regime_rejected(self):
        with pytest.raises(StableRegime):
            build_chain(2, 1.0, ServiceRateCurve.from_rates([3.0, 2.0]))

    def test_short_curve_rejected(self):
        with pytest.raises(ValueError):
            build_chain(3, 1.0, TOY_CURVE)

    def test_event_rates(self):
        rates = build_chain(2, 1.0, TOY_CURVE).event_rates()
        np.testing.assert_allclose(rates, [2.0, 3.0])


class TestHittingTimes:
    """Tests for expected events to absorption."""

    def test_toy_chain(self):
        h = hitting_times(build_chain(2, 1.0, TOY_CURVE))
        np.testing.assert_allclose(h, [5.0, 4.0, 0.0])

    def test_immediate_absorption(self):
        chain = build_chain(3, 5.0, ServiceRateCurve.from_rates([2.0, 1.0, 0.5]))
        assert chain.N_prime == 1
        np.testing.assert_allclose(hitting_times(chain), [1.0, 0.0])

    def test_recursion_matches_dense_solve(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            chain = random_chain(rng)
            np.testing.assert_allclose(hitting_times(chain), hitting_times_dense(chain), rtol=1e-9)

    def test_visits_sum_to_h0(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        visits = expected_visits(chain)
        np.testing.assert_allclose(visits, [2.0, 3.0])
        assert visits.sum() == pytest.approx(hitting_times(chain)[0])

    def test_toy_time_to_absorption(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        assert expected_hitting_time_seconds(chain, hitting_times(chain)) == pytest.approx(2.0)

    def test_single_event_time(self):
        chain = build_chain(1, 1.0, ServiceRateCurve.from_rates([0.5]))
        assert expected_hitting_time_seconds(chain, hitting_times(chain)) == pytest.approx(1.0)

    def test_decreasing_in_lambda_on_dcf(self):
        curve = service_rate_curve(ProtocolParams.ieee80211b(Protocol.DCF, W=32, m=5), 50)
        h0 = [hitting_times(build_chain(50, lam, curve))[0] for lam in (7.5, 7.75, 8.0, 8.5, 9.0)]
        assert all(b < a for a, b in zip(h0, h0[1:]))


class TestSimulateAbsorption:
    """Monte Carlo cross-check of the recursion."""

    def test_toy_chain_events_and_time(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        estimate = simulate_absorption(chain, 100_000, seed=1)
        assert abs(estimate.mean_events - 5.0) <= 3 * estimate.stderr_events
        assert abs(estimate.mean_time - 2.0) <= 3 * estimate.stderr_time

    def test_random_chains(self):
        rng = np.random.default_rng(5)
        for seed in range(3):
            chain = random_chain(rng)
            h0 = hitting_times(chain)[0]
            estimate = simulate_absorption(chain, 100_000, seed=seed)
            assert abs(estimate.mean_events - h0) <= 3 * estimate.stderr_events

    def test_deterministic(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        assert simulate_absorption(chain, 500, seed=9) == simulate_absorption(chain, 500, seed=9)

    def test_runs_validated(self):
        with pytest.raises(ValueError):
            simulate_absorption(build_chain(2, 1.0, TOY_CURVE), 0)


class TestChainFrame:
    """Tests for the CSV view."""

    def test_columns_and_absorbing_row(self):
        chain = build_chain(2, 1.0, TOY_CURVE)
        frame = chain_frame(chain, hitting_times(chain))
        assert list(frame.columns) == ['x', 'up', 'down', 'stay', 'h']
        assert len(frame) == 3
        last = frame.iloc[-1]
        assert last['x'] == 2
        assert last['stay'] == 1.0
        assert last['h'] == 0.0
