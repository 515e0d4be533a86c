#!/usr/bin/env python3
"""
Coupled Queue Simulator (Method 1)
==================================

Monte Carlo simulation of N finite queues that share the channel. Every queue
receives Poisson arrivals at rate lambda; each backlogged queue is served at
the state-dependent saturated rate mu(n_x), n_x being the number of backlogged
queues. Inter-event times follow Gillespie's direct method.

Each replication reports:
- Metric 1: first event (and clock time) at which n_x reaches N'
- Metric 2: T_E, the last instant before the mean occupancy crosses theta at
  which some queue was empty
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from errors import AllCensored, AllUndefined, DegenerateRates
from protocol_models import ServiceRateCurve
from replication import make_generator, run_parallel, seed_for
from stability import limiting_contenders

logger = logging.getLogger(__name__)

RANDOM_BLOCK = 65_536
FIRST_BLOCK = 1_024
MAX_TRAJECTORY_POINTS = 100_000
BOOKKEEPING_CHECK_EVERY = 10_000


@dataclass(frozen=True)
class CoupledConfig:
    """Configuration of one coupled-queue replication. ``seed`` doubles as master seed for batches."""
    N: int
    Q: int
    lam: float
    curve: ServiceRateCurve
    theta: Optional[float] = None
    preload: int = 0
    max_events: int = 100_000_000
    seed: int = 0
    stop_on_hit: bool = False
    record_trajectory: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.Q < 1:
            raise ValueError(f"Q must be >= 1, got {self.Q}")
        if self.lam <= 0:
            raise ValueError(f"Arrival rate must be positive, got {self.lam}")
        if len(self.curve) < self.N:
            raise ValueError(f"Service-rate curve covers {len(self.curve)} contenders, N={self.N}")
        if not 0 < self.threshold <= self.Q:
            raise ValueError(f"theta must lie in (0, Q], got {self.threshold}")
        if not 0 <= self.preload <= self.Q:
            raise ValueError(f"preload must lie in [0, Q], got {self.preload}")
        if self.max_events < 1:
            raise ValueError(f"max_events must be >= 1, got {self.max_events}")

    @property
    def threshold(self) -> float:
        return 0.75 * self.Q if self.theta is None else self.theta

    @property
    def n_prime(self) -> Optional[int]:
        return limiting_contenders(self.lam, self.curve.truncated(self.N))


@dataclass
class TransientRecord:
    """Outcome of one replication. Durations in seconds of the Gillespie clock."""
    seed_index: int
    seed: int
    hit_event_index: Optional[int]
    hit_time: Optional[float]
    T_theta: Optional[float]
    T_E: Optional[float]
    total_events: int
    reached_theta: bool
    dropped: int
    elapsed: float
    mean_occupancy: float
    trajectory_summary: List[Tuple[float, int, float, int]] = field(default_factory=list)

    @property
    def censored(self) -> bool:
        return not self.reached_theta

    @property
    def hit(self) -> bool:
        return self.hit_event_index is not None


def run_replication(config: CoupledConfig, seed_index: int = 0) -> TransientRecord:
    """Simulate until the mean occupancy exceeds theta (or N' is hit with stop_on_hit) or max_events elapse."""
    N = config.N
    Q = config.Q
    lam = config.lam
    mu = list(config.curve.mu[:N])
    if min(mu) <= 0:
        raise DegenerateRates(f"Service rates must be positive, got min {min(mu)}")

    arrival_rate = N * lam
    n_prime = config.n_prime
    threshold_total = config.threshold * N
    check_bookkeeping = logger.isEnabledFor(logging.DEBUG)

    rng = make_generator(config.seed)

    x = [config.preload] * N
    backlogged = list(range(N)) if config.preload > 0 else []
    n_x = len(backlogged)
    total = config.preload * N

    t = 0.0
    area = 0.0
    events = 0
    dropped = 0
    empty_seen = n_x < N
    last_all_backlogged = 0.0
    hit_event_index: Optional[int] = None
    hit_time: Optional[float] = None
    T_theta: Optional[float] = None
    T_E: Optional[float] = None
    trajectory: List[Tuple[float, int, float, int]] = []
    stride = max(1, math.ceil(config.max_events / MAX_TRAJECTORY_POINTS))

    if n_prime is not None and n_x >= n_prime:
        hit_event_index, hit_time = 0, 0.0
    if total > threshold_total:
        T_theta = 0.0

    block = FIRST_BLOCK
    gaps = rng.standard_exponential(block, method='inv')
    picks = rng.random(block)
    cursor = 0

    while T_theta is None and events < config.max_events:
        if config.stop_on_hit and hit_event_index is not None:
            break
        if cursor == block:
            # short runs stay cheap; long runs amortise draws over larger blocks
            block = min(2 * block, RANDOM_BLOCK)
            gaps = rng.standard_exponential(block, method='inv')
            picks = rng.random(block)
            cursor = 0

        service = mu[n_x - 1] if n_x else 0.0
        departure_rate = n_x * service
        rate = arrival_rate + departure_rate
        dt = gaps[cursor] / rate
        u = picks[cursor] * rate
        cursor += 1

        area += total * dt
        t += dt
        events += 1

        if u < arrival_rate:
            i = min(int(u / lam), N - 1)
            if x[i] == Q:
                dropped += 1
            else:
                if x[i] == 0:
                    backlogged.append(i)
                    n_x += 1
                    if n_x == N:
                        last_all_backlogged = t
                x[i] += 1
                total += 1
        else:
            j = min(int((u - arrival_rate) / service), n_x - 1)
            i = backlogged[j]
            x[i] -= 1
            total -= 1
            if x[i] == 0:
                moved = backlogged[-1]
                backlogged[j] = moved
                backlogged.pop()
                n_x -= 1
                empty_seen = True

        if hit_event_index is None and n_prime is not None and n_x >= n_prime:
            hit_event_index, hit_time = events, t

        if total > threshold_total:
            T_theta = t

        if config.record_trajectory and events % stride == 0:
            trajectory.append((t, min(x), total / N, max(x)))

        if check_bookkeeping and events % BOOKKEEPING_CHECK_EVERY == 0:
            recount = sum(1 for v in x if v > 0)
            if recount != n_x:
                raise RuntimeError(f"Backlog count drifted: tracked {n_x}, actual {recount} at event {events}")

    reached_theta = T_theta is not None
    if reached_theta and empty_seen:
        T_E = T_theta if n_x < N else last_all_backlogged

    if not reached_theta and not (config.stop_on_hit and hit_event_index is not None):
        logger.debug(f"Replication {seed_index} stopped at max_events={config.max_events} before theta")

    return TransientRecord(
        seed_index=seed_index,
        seed=config.seed,
        hit_event_index=hit_event_index,
        hit_time=hit_time,
        T_theta=T_theta,
        T_E=T_E,
        total_events=events,
        reached_theta=reached_theta,
        dropped=dropped,
        elapsed=t,
        mean_occupancy=area / t / N if t > 0 else float(config.preload),
        trajectory_summary=trajectory,
    )


def _run_indexed(task: Tuple[CoupledConfig, int]) -> TransientRecord:
    config, index = task
    return run_replication(replace(config, seed=seed_for(config.seed, index)), seed_index=index)


def run_replications(config: CoupledConfig, replications: int, workers: Optional[int] = None) -> List[TransientRecord]:
    """Independent replications seeded from config.seed; results ordered by replication index."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    records = run_parallel(_run_indexed, [(config, i) for i in range(replications)], workers)
    logger.info(f"Method 1 N={config.N} lambda={config.lam}: {replications} replications, "
                f"{sum(r.total_events for r in records):,} events")
    return records


@dataclass(frozen=True)
class Metric1Summary:
    mean_events: float
    mean_time: float
    ci_events: float
    ci_time: float
    replications: int
    censored: int

    def accuracy_ratio(self, h0: float) -> float:
        """Metric 1 from the coupled simulation relative to the backlog-chain estimate."""
        return self.mean_events / h0

    def as_row(self) -> dict:
        return {
            'mean_events': self.mean_events,
            'ci_events': self.ci_events,
            'mean_time_s': self.mean_time,
            'ci_time_s': self.ci_time,
            'replications': self.replications,
            'censored': self.censored,
        }


def _half_width(values: np.ndarray, confidence: float = 0.95) -> float:
    if len(values) < 2:
        return math.inf
    z = norm.ppf(0.5 + confidence / 2.0)
    return float(z * values.std(ddof=1) / math.sqrt(len(values)))


def summarize_metric1(records: Sequence[TransientRecord]) -> Metric1Summary:
    hits = [r for r in records if r.hit]
    if not hits:
        raise AllCensored(f"None of {len(records)} replications reached N'", censored=len(records))
    events = np.array([r.hit_event_index for r in hits], dtype=float)
    times = np.array([r.hit_time for r in hits], dtype=float)
    return Metric1Summary(
        mean_events=float(events.mean()),
        mean_time=float(times.mean()),
        ci_events=_half_width(events),
        ci_time=_half_width(times),
        replications=len(records),
        censored=len(records) - len(hits),
    )


def metric1_mean(config: CoupledConfig, replications: int, workers: Optional[int] = None) -> Metric1Summary:
    """Mean events and time to first reach N', with 95% normal confidence half-widths."""
    records = run_replications(replace(config, stop_on_hit=True), replications, workers)
    return summarize_metric1(records)


@dataclass(frozen=True)
class Metric2Result:
    samples: np.ndarray
    censored: int
    undefined: int

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def summarize_metric2(records: Sequence[TransientRecord]) -> Metric2Result:
    reached = [r for r in records if r.reached_theta]
    if not reached:
        raise AllCensored(f"None of {len(records)} replications reached theta", censored=len(records))
    samples = np.sort(np.array([r.T_E for r in reached if r.T_E is not None], dtype=float))
    if samples.size == 0:
        raise AllUndefined(f"All {len(reached)} replications started with every queue backlogged; T_E undefined",
                           censored=len(records) - len(reached))
    return Metric2Result(
        samples=samples,
        censored=len(records) - len(reached),
        undefined=len(reached) - samples.size,
    )


def metric2_samples(config: CoupledConfig, replications: int, workers: Optional[int] = None) -> Metric2Result:
    """Sorted T_E samples of the replications that crossed theta."""
    records = run_replications(replace(config, stop_on_hit=False), replications, workers)
    return summarize_metric2(records)


def records_frame(records: Sequence[TransientRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                'seed_index': r.seed_index,
                'hit_events': r.hit_event_index,
                'hit_time_s': r.hit_time,
                'T_theta_s': r.T_theta,
                'T_E_s': r.T_E,
                'total_events': r.total_events,
                'censored': r.censored,
            }
            for r in records
        ],
        columns=['seed_index', 'hit_events', 'hit_time_s', 'T_theta_s', 'T_E_s', 'total_events', 'censored'],
    )


def trajectory_frame(record: TransientRecord) -> pd.DataFrame:
    return pd.DataFrame(record.trajectory_summary, columns=['t_s', 'min', 'mean', 'max'])
