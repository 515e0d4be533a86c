#!/usr/bin/env python3
"""
Slot-Level DCF Simulator (Method 3)
===================================

N stations in mutual range run the DCF backoff procedure over a slotted
channel. A slot is either empty (sigma), a success (T_s) or a collision
(T_c); backoff counters of contending stations advance once per slot of any
kind, as in the renewal-reward model the simulator is checked against.

Features:
- Poisson, CBR and bursty arrivals into finite FIFO queues
- Queue preloading
- Instantaneous throughput and queue-occupancy traces
- T_theta / T_E detection for the transitory phase
- Optional exponential post-success hold during which a station does not contend
"""
import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from coupled_sim import Metric2Result, summarize_metric2
from errors import InvalidProtocol
from protocol_models import FrameTimings, Protocol, ProtocolParams, compute_timings
from replication import make_generator, run_parallel, seed_for

logger = logging.getLogger(__name__)

RANDOM_BLOCK = 16_384
DEFAULT_HORIZON = 24 * 3600.0
HEARTBEAT_INTERVAL = 600.0


class TrafficModel(str, Enum):
    POISSON = "poisson"
    CBR = "cbr"
    BURSTY = "bursty"


class DcfSimConfig(BaseModel):
    """One simulation run. Durations in seconds, rates in packets/s per station."""
    model_config = ConfigDict(frozen=True)

    params: ProtocolParams
    N: int = Field(..., ge=1)
    Q: int = Field(..., ge=1)
    lam: float = Field(..., ge=0, description="0 disables arrivals")
    theta: Optional[float] = Field(None, gt=0)
    preload: int = Field(0, ge=0)
    horizon: float = Field(DEFAULT_HORIZON, gt=0)
    throughput_bin: float = Field(1.0, gt=0)
    queue_sample_interval: Optional[float] = Field(None, gt=0)
    mitigation_mean_delay: Optional[float] = Field(None, gt=0)
    traffic: TrafficModel = TrafficModel.POISSON
    burst_size: int = Field(1, ge=1)
    burst_gap: Optional[float] = Field(None, gt=0)
    seed: int = Field(0, ge=0)
    stop_at_theta: bool = True
    heartbeat_interval: float = Field(HEARTBEAT_INTERVAL, gt=0)

    @model_validator(mode='after')
    def _check_bounds(self) -> 'DcfSimConfig':
        if self.threshold > self.Q:
            raise ValueError(f"theta ({self.threshold}) exceeds Q ({self.Q})")
        if self.preload > self.Q:
            raise ValueError(f"preload ({self.preload}) exceeds Q ({self.Q})")
        return self

    @property
    def threshold(self) -> float:
        return 0.75 * self.Q if self.theta is None else self.theta

    @property
    def mean_burst_gap(self) -> float:
        """Mean gap between bursts; defaults to the gap that keeps the packet rate at lambda."""
        if self.burst_gap is not None:
            return self.burst_gap
        return self.burst_size / self.lam


@dataclass(frozen=True)
class StationState:
    """Snapshot of one station: queued arrival timestamps, backoff counter (-1 = not drawn), stage, hold end."""
    queue: Tuple[float, ...]
    backoff_counter: int
    cw_stage: int
    holding_until: float


@dataclass
class SimTrace:
    """Outcome of one run. Throughput and delay arrays are per throughput bin."""
    seed: int
    throughput_bin: float
    bits_per_bin: np.ndarray
    delay_sum_per_bin: np.ndarray
    delivered_per_bin: np.ndarray
    queue_series: List[Tuple[float, int, float, int]]
    T_E: Optional[float]
    T_theta: Optional[float]
    elapsed: float
    delivered_packets: int
    collisions: int
    drops: int
    arrivals: int
    preloaded: int
    queued: int
    empty_slots: int
    success_slots: int
    collision_slots: int
    per_station_arrivals: np.ndarray
    per_station_delivered: np.ndarray
    per_station_drops: np.ndarray
    per_station_queued: np.ndarray

    @property
    def reached_theta(self) -> bool:
        return self.T_theta is not None

    @property
    def censored(self) -> bool:
        return not self.reached_theta

    def accounted_time(self, timings: FrameTimings) -> float:
        return (self.empty_slots * timings.sigma
                + self.success_slots * timings.T_s
                + self.collision_slots * timings.T_c)

    def bin_starts(self) -> np.ndarray:
        return np.arange(len(self.bits_per_bin)) * self.throughput_bin

    def throughput_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t_s': self.bin_starts(), 'bits': self.bits_per_bin})

    def queue_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.queue_series, columns=['t_s', 'min', 'mean', 'max'])

    def summary_row(self) -> dict:
        return {
            'seed': self.seed,
            'T_E_s': self.T_E,
            'T_theta_s': self.T_theta,
            'delivered': self.delivered_packets,
            'collisions': self.collisions,
            'drops': self.drops,
        }


class _RandomStream:
    """Buffered uniforms and unit exponentials from one Philox generator."""

    def __init__(self, seed: int):
        self.rng = make_generator(seed)
        self._uniforms = self.rng.random(RANDOM_BLOCK)
        self._exponentials = self.rng.standard_exponential(RANDOM_BLOCK, method='inv')
        self._u = 0
        self._e = 0

    def uniform(self) -> float:
        if self._u == RANDOM_BLOCK:
            self._uniforms = self.rng.random(RANDOM_BLOCK)
            self._u = 0
        value = self._uniforms[self._u]
        self._u += 1
        return float(value)

    def exponential(self) -> float:
        if self._e == RANDOM_BLOCK:
            self._exponentials = self.rng.standard_exponential(RANDOM_BLOCK, method='inv')
            self._e = 0
        value = self._exponentials[self._e]
        self._e += 1
        return float(value)


class _DcfSimulation:

    def __init__(self, config: DcfSimConfig):
        self.config = config
        self.params = config.params
        self.timings = compute_timings(config.params)
        self.random = _RandomStream(config.seed)
        N = config.N

        self.queues: List[Deque[float]] = [deque([0.0] * config.preload) for _ in range(N)]
        self.qlen = np.full(N, config.preload, dtype=np.int64)
        self.counter = np.full(N, -1, dtype=np.int64)
        self.stage = np.zeros(N, dtype=np.int64)
        self.hold_until = np.zeros(N)

        self.arrivals_heap: List[Tuple[float, int]] = []
        if config.lam > 0:
            for j in range(N):
                heapq.heappush(self.arrivals_heap, (self._first_arrival(), j))
        self.batch = config.burst_size if config.traffic == TrafficModel.BURSTY else 1

        n_bins = int(math.ceil(config.horizon / config.throughput_bin)) + 1
        self.bits = np.zeros(n_bins)
        self.delay_sum = np.zeros(n_bins)
        self.delivered_in_bin = np.zeros(n_bins, dtype=np.int64)
        self.queue_series: List[Tuple[float, int, float, int]] = []
        self.sample_interval = config.queue_sample_interval or config.throughput_bin
        self.next_sample = 0.0
        self.next_heartbeat = config.heartbeat_interval

        self.arrivals = np.zeros(N, dtype=np.int64)
        self.delivered = np.zeros(N, dtype=np.int64)
        self.drops = np.zeros(N, dtype=np.int64)
        self.empty_slots = 0
        self.success_slots = 0
        self.collision_slots = 0

        self.total = config.preload * N
        self.threshold_total = config.threshold * N
        self.empty_seen = config.preload == 0
        self.last_refill = 0.0
        self.T_theta: Optional[float] = 0.0 if self.total > self.threshold_total else None
        self.T_E: Optional[float] = None

    def station_state(self, j: int) -> StationState:
        return StationState(
            queue=tuple(self.queues[j]),
            backoff_counter=int(self.counter[j]),
            cw_stage=int(self.stage[j]),
            holding_until=float(self.hold_until[j]),
        )

    def _first_arrival(self) -> float:
        cfg = self.config
        if cfg.traffic == TrafficModel.CBR:
            return self.random.uniform() / cfg.lam
        if cfg.traffic == TrafficModel.BURSTY:
            return self.random.exponential() * cfg.mean_burst_gap
        return self.random.exponential() / cfg.lam

    def _next_arrival(self, previous: float) -> float:
        cfg = self.config
        if cfg.traffic == TrafficModel.CBR:
            return previous + 1.0 / cfg.lam
        if cfg.traffic == TrafficModel.BURSTY:
            return previous + self.random.exponential() * cfg.mean_burst_gap
        return previous + self.random.exponential() / cfg.lam

    def _arrivals_until(self, limit: float):
        heap = self.arrivals_heap
        Q = self.config.Q
        while heap and heap[0][0] <= limit:
            a, j = heap[0]
            heapq.heapreplace(heap, (self._next_arrival(a), j))
            queue = self.queues[j]
            for _ in range(self.batch):
                self.arrivals[j] += 1
                if self.qlen[j] == Q:
                    self.drops[j] += 1
                    continue
                if self.qlen[j] == 0:
                    self.last_refill = a
                queue.append(a)
                self.qlen[j] += 1
                self.total += 1
            if self.T_theta is None and self.total > self.threshold_total:
                self._cross_threshold(a)

    def _cross_threshold(self, t: float):
        self.T_theta = t
        if not self.empty_seen:
            self.T_E = None
        elif (self.qlen == 0).any():
            self.T_E = t
        else:
            self.T_E = self.last_refill
        logger.debug(f"Seed {self.config.seed}: theta crossed at {t:.1f}s, T_E={self.T_E}")

    def _next_change(self, t: float) -> float:
        """Earliest future instant at which the set of contending stations can change."""
        upcoming = self.arrivals_heap[0][0] if self.arrivals_heap else math.inf
        waiting = (self.qlen > 0) & (self.hold_until > t)
        if waiting.any():
            upcoming = min(upcoming, float(self.hold_until[waiting].min()))
        return upcoming

    def _skip_slots(self, t: float, limit: int) -> int:
        t_change = min(self._next_change(t), self.config.horizon)
        needed = max(1, math.ceil((t_change - t) / self.timings.sigma))
        return min(limit, needed)

    def _draw_backoff(self, j: int):
        window = self.params.W << int(self.stage[j])
        self.counter[j] = int(self.random.uniform() * window)

    def _record(self, t: float):
        while t >= self.next_sample:
            self.queue_series.append((self.next_sample, int(self.qlen.min()),
                                      float(self.qlen.mean()), int(self.qlen.max())))
            self.next_sample += self.sample_interval
        if t >= self.next_heartbeat:
            logger.info(f"Seed {self.config.seed}: t={t:.0f}s delivered={int(self.delivered.sum()):,} "
                        f"collisions={self.collision_slots:,} mean queue={self.qlen.mean():.1f}")
            self.next_heartbeat += self.config.heartbeat_interval

    def _success(self, j: int, t_end: float):
        arrived = self.queues[j].popleft()
        self.qlen[j] -= 1
        self.total -= 1
        self.delivered[j] += 1
        self.success_slots += 1

        b = int(t_end / self.config.throughput_bin)
        if b < len(self.bits):
            self.bits[b] += self.params.L
            self.delay_sum[b] += t_end - arrived
            self.delivered_in_bin[b] += 1

        self.stage[j] = 0
        self.counter[j] = -1
        if self.config.mitigation_mean_delay is not None:
            self.hold_until[j] = t_end + self.random.exponential() * self.config.mitigation_mean_delay
        if self.qlen[j] == 0:
            self.empty_seen = True

    def _collision(self, transmitters: np.ndarray):
        self.collision_slots += 1
        self.stage[transmitters] = np.minimum(self.stage[transmitters] + 1, self.params.m)
        self.counter[transmitters] = -1

    def run(self) -> SimTrace:
        cfg = self.config
        timings = self.timings
        sigma = timings.sigma
        t = 0.0

        while t < cfg.horizon:
            self._arrivals_until(t)
            if cfg.stop_at_theta and self.T_theta is not None:
                break
            self._record(t)

            active = (self.qlen > 0) & (self.hold_until <= t)
            if not active.any():
                slots = self._skip_slots(t, limit=2**62)
                t += slots * sigma
                self.empty_slots += slots
                continue

            for j in np.flatnonzero(active & (self.counter < 0)):
                self._draw_backoff(int(j))

            k_min = int(self.counter[active].min())
            if k_min > 0:
                slots = self._skip_slots(t, limit=k_min)
                self.counter[active] -= slots
                t += slots * sigma
                self.empty_slots += slots
                continue

            transmitters = np.flatnonzero(active & (self.counter == 0))
            self.counter[active] -= 1
            if len(transmitters) == 1:
                t_end = t + timings.T_s
                self._arrivals_until(t_end)
                self._success(int(transmitters[0]), t_end)
            else:
                t_end = t + timings.T_c
                self._collision(transmitters)
            t = t_end

        return self._trace(t)

    def _trace(self, t: float) -> SimTrace:
        cfg = self.config
        used_bins = min(len(self.bits), int(math.ceil(t / cfg.throughput_bin)))
        trace = SimTrace(
            seed=cfg.seed,
            throughput_bin=cfg.throughput_bin,
            bits_per_bin=self.bits[:used_bins].copy(),
            delay_sum_per_bin=self.delay_sum[:used_bins].copy(),
            delivered_per_bin=self.delivered_in_bin[:used_bins].copy(),
            queue_series=self.queue_series,
            T_E=self.T_E,
            T_theta=self.T_theta,
            elapsed=t,
            delivered_packets=int(self.delivered.sum()),
            collisions=self.collision_slots,
            drops=int(self.drops.sum()),
            arrivals=int(self.arrivals.sum()),
            preloaded=cfg.preload * cfg.N,
            queued=int(self.qlen.sum()),
            empty_slots=self.empty_slots,
            success_slots=self.success_slots,
            collision_slots=self.collision_slots,
            per_station_arrivals=self.arrivals.copy(),
            per_station_delivered=self.delivered.copy(),
            per_station_drops=self.drops.copy(),
            per_station_queued=self.qlen.copy(),
        )
        logger.debug(f"Seed {cfg.seed}: {trace.elapsed:.1f}s simulated, {trace.delivered_packets:,} delivered, "
                     f"{trace.collisions:,} collisions, T_E={trace.T_E}")
        return trace


def run(config: DcfSimConfig) -> SimTrace:
    if config.params.protocol != Protocol.DCF:
        raise InvalidProtocol(f"Slot simulator needs a DCF parameter set, got {config.params.protocol.value}")
    return _DcfSimulation(config).run()


def _run_indexed(task: Tuple[DcfSimConfig, int]) -> SimTrace:
    config, index = task
    return run(config.model_copy(update={'seed': seed_for(config.seed, index)}))


def run_replications_sim(config: DcfSimConfig, replications: int,
                         workers: Optional[int] = None) -> List[SimTrace]:
    """Independent runs seeded from config.seed; ordered by replication index."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    traces = run_parallel(_run_indexed, [(config, i) for i in range(replications)], workers)
    logger.info(f"Method 3 N={config.N} lambda={config.lam}: {replications} runs, "
                f"{sum(tr.delivered_packets for tr in traces):,} packets delivered")
    return traces


def mitigation_hold_mean(mu_sat: float, N: int, factor: float = 2.0) -> float:
    """
    Mean post-success hold: factor over the aggregate saturated packet rate N * mu(N).

    A per-station reading (factor / mu(N)) would cap every station below its
    own arrival rate right above the stability limit.
    """
    if mu_sat <= 0 or N < 1 or factor <= 0:
        raise ValueError(f"Need mu_sat > 0, N >= 1 and factor > 0, got {mu_sat}, {N}, {factor}")
    return factor / (N * mu_sat)


def metric2_samples_sim(config: DcfSimConfig, replications: int, workers: Optional[int] = None) -> Metric2Result:
    return summarize_metric2(run_replications_sim(config, replications, workers))


def _mean_rate(values: np.ndarray, bin_width: float) -> float:
    if values.size == 0:
        return float('nan')
    return float(values.mean() / bin_width)


def phase_throughput(trace: SimTrace) -> Tuple[float, float]:
    """Mean aggregate throughput (bit/s) over whole bins before and after T_E."""
    width = trace.throughput_bin
    starts = trace.bin_starts()
    complete = starts + width <= trace.elapsed
    if trace.T_E is None:
        return _mean_rate(trace.bits_per_bin[complete], width), float('nan')
    before = complete & (starts + width <= trace.T_E)
    after = complete & (starts >= trace.T_E)
    return _mean_rate(trace.bits_per_bin[before], width), _mean_rate(trace.bits_per_bin[after], width)


def phase_delay(trace: SimTrace) -> Tuple[float, float]:
    """Mean per-packet delay (s) of packets delivered before and after T_E."""
    starts = trace.bin_starts()
    split = math.inf if trace.T_E is None else trace.T_E
    before = starts + trace.throughput_bin <= split
    after = starts >= split

    def mean(mask: np.ndarray) -> float:
        count = trace.delivered_per_bin[mask].sum()
        return float(trace.delay_sum_per_bin[mask].sum() / count) if count else float('nan')

    return mean(before), mean(after)

