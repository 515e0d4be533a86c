#!/usr/bin/env python3
"""
Tests for the Coupled Queue Simulator (Method 1)
================================================
"""

import logging
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from backlog_chain import build_chain, hitting_times
from coupled_sim import (
    CoupledConfig,
    Metric1Summary,
    metric1_mean,
    metric2_samples,
    records_frame,
    run_replication,
    run_replications,
    summarize_metric2,
    trajectory_frame,
)
from errors import AllCensored, AllUndefined
from protocol_models import Protocol, ProtocolParams, ServiceRateCurve, service_rate_curve
from replication import seed_for

TOY_CURVE = ServiceRateCurve.from_rates([2.0, 0.5])
FIVE_NODE_CURVE = ServiceRateCurve.from_rates([3.0, 2.5, 2.0, 1.5, 1.0])


class TestCoupledConfig:
    """Tests for configuration checks."""

    def test_default_threshold(self):
        config = CoupledConfig(N=2, Q=100, lam=1.0, curve=TOY_CURVE)
        assert config.threshold == 75.0
        assert config.n_prime == 2

    def test_theta_above_capacity(self):
        with pytest.raises(ValueError):
            CoupledConfig(N=2, Q=100, lam=1.0, curve=TOY_CURVE, theta=150.0)

    def test_preload_above_capacity(self):
        with pytest.raises(ValueError):
            CoupledConfig(N=2, Q=100, lam=1.0, curve=TOY_CURVE, preload=101)

    def test_curve_too_short(self):
        with pytest.raises(ValueError):
            CoupledConfig(N=3, Q=100, lam=1.0, curve=TOY_CURVE)

    def test_non_positive_lambda(self):
        with pytest.raises(ValueError):
            CoupledConfig(N=2, Q=100, lam=0.0, curve=TOY_CURVE)


class TestReplication:
    """Tests for a single Gillespie replication."""

    def test_deterministic_for_seed(self):
        config = CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=42)
        assert run_replication(config) == run_replication(config)

    def test_different_seeds_differ(self):
        a = run_replication(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=1))
        b = run_replication(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=2))
        assert a.total_events != b.total_events or a.T_theta != b.T_theta

    def test_time_ordering(self):
        records = run_replications(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=3), 20, workers=1)
        for r in records:
            assert r.reached_theta
            assert r.T_E is not None
            assert r.T_E <= r.T_theta
            if r.hit:
                assert r.hit_time <= r.T_E

    def test_occupancy_bounds(self):
        record = run_replication(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=4))
        assert record.trajectory_summary
        for _, low, mean, high in record.trajectory_summary:
            assert 0 <= low <= mean <= high <= 50

    def test_full_queue_drops_arrivals(self):
        config = CoupledConfig(N=1, Q=1, lam=10.0, curve=ServiceRateCurve.constant(1.0, 1),
                               theta=1.0, max_events=1000)
        record = run_replication(config)
        assert record.dropped > 0
        assert not record.reached_theta
        assert record.total_events == 1000
        assert record.mean_occupancy <= 1.0

    def test_immediate_hit_far_above_single_node_rate(self):
        config = CoupledConfig(N=3, Q=100, lam=1000.0, curve=ServiceRateCurve.constant(1.0, 3), stop_on_hit=True)
        assert config.n_prime == 1
        for index in range(5):
            assert run_replication(config, seed_index=index).hit_event_index == 1

    def test_preloaded_start_has_undefined_T_E(self):
        config = CoupledConfig(N=3, Q=10, lam=1.0, curve=ServiceRateCurve.constant(0.5, 3), preload=10)
        record = run_replication(config)
        assert record.T_theta == 0.0
        assert record.T_E is None
        assert record.hit_event_index == 0
        assert record.total_events == 0

    def test_bookkeeping_recount_under_debug(self, caplog):
        caplog.set_level(logging.DEBUG, logger='coupled_sim')
        config = CoupledConfig(N=5, Q=1000, lam=0.5, curve=FIVE_NODE_CURVE, seed=9, max_events=30_000)
        record = run_replication(config)
        assert record.total_events == 30_000
        assert not record.reached_theta
        assert "stopped at max_events=30000" in caplog.text

    def test_mm1_mean_occupancy(self):
        config = CoupledConfig(N=1, Q=10**6, lam=1.0, curve=ServiceRateCurve.constant(2.0, 1),
                               theta=10**6, max_events=10**6, record_trajectory=False, seed=17)
        record = run_replication(config)
        assert record.mean_occupancy == pytest.approx(1.0, rel=0.05)


class TestReplications:
    """Tests for seeding and batches."""

    def test_replication_seeds(self):
        config = CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=99)
        records = run_replications(config, 3, workers=1)
        assert [r.seed_index for r in records] == [0, 1, 2]
        assert [r.seed for r in records] == [seed_for(99, i) for i in range(3)]

    def test_independent_of_worker_count(self):
        config = CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=5)
        assert run_replications(config, 4, workers=1) == run_replications(config, 4, workers=2)

    def test_rejects_zero_replications(self):
        with pytest.raises(ValueError):
            run_replications(CoupledConfig(N=2, Q=10, lam=1.0, curve=TOY_CURVE), 0)


class TestMetric1:
    """Tests for the first time N' contenders are backlogged."""

    def test_toy_chain_exact_value(self):
        # from all-empty: h = 1 + E_1 with E_k = 4 + (1 + sqrt 2)(2 - sqrt 2)^k
        config = CoupledConfig(N=2, Q=10**6, lam=1.0, curve=TOY_CURVE, seed=2024, record_trajectory=False)
        summary = metric1_mean(config, 20_000, workers=1)
        assert summary.censored == 0
        assert summary.mean_events == pytest.approx(5.0 + math.sqrt(2.0), abs=0.25)

    def test_toy_chain_at_least_backlog_chain(self):
        config = CoupledConfig(N=2, Q=10**6, lam=1.0, curve=TOY_CURVE, seed=7, record_trajectory=False)
        summary = metric1_mean(config, 5_000, workers=1)
        h0 = hitting_times(build_chain(2, 1.0, TOY_CURVE))[0]
        assert h0 == pytest.approx(5.0)
        assert summary.mean_events > h0
        assert summary.accuracy_ratio(h0) > 1.0

    def test_stable_regime_all_censored(self):
        config = CoupledConfig(N=2, Q=100, lam=0.1, curve=TOY_CURVE, max_events=100)
        with pytest.raises(AllCensored) as exc:
            metric1_mean(config, 3, workers=1)
        assert exc.value.censored == 3

    def test_summary_row(self):
        summary = Metric1Summary(mean_events=10.0, mean_time=2.0, ci_events=1.0, ci_time=0.5,
                                 replications=4, censored=0)
        assert summary.accuracy_ratio(5.0) == 2.0
        assert summary.as_row()['mean_time_s'] == 2.0


class TestMetric2:
    """Tests for T_E samples."""

    def test_samples_sorted_and_positive(self):
        config = CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=8)
        result = metric2_samples(config, 10, workers=1)
        assert result.censored == 0
        assert np.all(np.diff(result.samples) >= 0)
        assert np.all(result.samples > 0)
        assert result.mean == pytest.approx(float(result.samples.mean()))

    def test_all_censored(self):
        config = CoupledConfig(N=5, Q=1000, lam=1.2, curve=FIVE_NODE_CURVE, max_events=10)
        with pytest.raises(AllCensored) as exc:
            metric2_samples(config, 3, workers=1)
        assert not isinstance(exc.value, AllUndefined)

    def test_all_undefined(self):
        config = CoupledConfig(N=3, Q=10, lam=1.0, curve=ServiceRateCurve.constant(0.5, 3), preload=10)
        with pytest.raises(AllUndefined):
            metric2_samples(config, 3, workers=1)

    def test_counts_censored_runs(self):
        records = run_replications(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE, seed=9), 4, workers=1)
        records[0].reached_theta = False
        result = summarize_metric2(records)
        assert result.censored == 1
        assert result.samples.size == 3


class TestFrames:
    """Tests for CSV views."""

    def test_records_frame(self):
        records = run_replications(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE), 2, workers=1)
        frame = records_frame(records)
        assert list(frame.columns) == ['seed_index', 'hit_events', 'hit_time_s', 'T_theta_s', 'T_E_s',
                                       'total_events', 'censored']
        assert len(frame) == 2

    def test_trajectory_frame(self):
        record = run_replication(CoupledConfig(N=5, Q=50, lam=1.2, curve=FIVE_NODE_CURVE))
        frame = trajectory_frame(record)
        assert list(frame.columns) == ['t_s', 'min', 'mean', 'max']
        assert len(frame) == len(record.trajectory_summary)


@pytest.mark.slow
class TestDcfAcceptance:
    """Acceptance-scale runs on the 802.11b DCF curve (W=32, m=5, N=50, Q=1000)."""

    @pytest.fixture(scope="class")
    def curve(self):
        return service_rate_curve(ProtocolParams.ieee80211b(Protocol.DCF, W=32, m=5), 50)

    @pytest.mark.parametrize("lam", [7.75, 8.0, 8.5])
    def test_coupled_mean_exceeds_chain(self, curve, lam):
        config = CoupledConfig(N=50, Q=1000, lam=lam, curve=curve, seed=1, record_trajectory=False)
        summary = metric1_mean(config, 200)
        h0 = hitting_times(build_chain(50, lam, curve))[0]
        assert summary.mean_events - summary.ci_events > h0

    @pytest.mark.parametrize("lam, expected", [(7.75, 112.0), (8.0, 66.0)])
    def test_mean_transient_time(self, curve, lam, expected):
        config = CoupledConfig(N=50, Q=1000, lam=lam, curve=curve, seed=2, record_trajectory=False)
        result = metric2_samples(config, 300)
        assert result.mean == pytest.approx(expected, rel=0.30)

    def test_transient_time_well_beyond_first_hit(self, curve):
        config = CoupledConfig(N=50, Q=1000, lam=7.75, curve=curve, seed=3, record_trajectory=False)
        records = [r for r in run_replications(config, 200) if r.hit and r.T_E is not None]
        assert records
        late = sum(1 for r in records if r.T_E > 2 * r.hit_time)
        assert late >= 0.1 * len(records)
