#!/usr/bin/env python3
"""
Backlog Chain (Method 2)
========================

Reduced absorbing Markov chain on the number x of backlogged stations. From
x < N' the chain moves up when an empty station receives a packet, down when a
served station empties, and stays when the served station remains backlogged
(probability rho_x = lambda / mu(x)). N' is absorbing.

Mean hitting times of N' count every event, self-loops included.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from errors import SingularSystem, StableRegime
from protocol_models import ServiceRateCurve
from replication import make_generator
from stability import limiting_contenders

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BacklogChain:
    """
    Transition probabilities for x = 0..N'-1. ``mu`` is indexed x = 1..N'
    (mu[0] is mu(1)); ``rho`` covers x = 1..N'-1.
    """
    N: int
    N_prime: int
    lam: float
    mu: Tuple[float, ...]
    rho: Tuple[float, ...]
    up: Tuple[float, ...]
    down: Tuple[float, ...]
    stay: Tuple[float, ...]

    def event_rates(self) -> np.ndarray:
        """Total event rate (N - x) lambda + x mu(x) in each transient state."""
        x = np.arange(self.N_prime)
        mu_x = np.array((0.0,) + self.mu[:self.N_prime - 1])
        return (self.N - x) * self.lam + x * mu_x

    def transition_matrix(self) -> np.ndarray:
        size = self.N_prime + 1
        P = np.zeros((size, size))
        for x in range(self.N_prime):
            P[x, x + 1] = self.up[x]
            P[x, x] = self.stay[x]
            if x > 0:
                P[x, x - 1] = self.down[x]
        P[self.N_prime, self.N_prime] = 1.0
        return P


def build_chain(N: int, lam: float, curve: ServiceRateCurve) -> BacklogChain:
    if lam <= 0:
        raise ValueError(f"Arrival rate must be positive, got {lam}")
    if len(curve) < N:
        raise ValueError(f"Service-rate curve covers {len(curve)} contenders, N={N}")

    n_prime = limiting_contenders(lam, curve.truncated(N))
    if n_prime is None:
        raise StableRegime(f"lambda={lam} is below mu(n) for every n <= {N}; no absorbing state")

    up, down, stay, rho = [1.0], [0.0], [0.0], []
    for x in range(1, n_prime):
        mu_x = curve.rate(x)
        rho_x = lam / mu_x
        denominator = (N - x) * lam + x * mu_x
        u = (N - x) * lam / denominator
        d = x * mu_x * (1.0 - rho_x) / denominator
        up.append(u)
        down.append(d)
        stay.append(1.0 - u - d)
        rho.append(rho_x)

    return BacklogChain(
        N=N,
        N_prime=n_prime,
        lam=lam,
        mu=tuple(curve.mu[:n_prime]),
        rho=tuple(rho),
        up=tuple(up),
        down=tuple(down),
        stay=tuple(stay),
    )


def hitting_times(chain: BacklogChain) -> np.ndarray:
    """
    Expected events to absorption h(0..N'), h(N') = 0.

    Self-loops are divided out, leaving a birth-death recursion on the
    increments h(x) - h(x+1), solved forward from h(0) - h(1) = 1.
    """
    n_prime = chain.N_prime
    increments = np.empty(n_prime)
    increments[0] = 1.0
    for x in range(1, n_prime):
        leave = 1.0 - chain.stay[x]
        up = chain.up[x] / leave
        if up <= 0:
            raise SingularSystem(f"No upward transition from x={x}")
        increments[x] = (1.0 / leave + chain.down[x] / leave * increments[x - 1]) / up

    h = np.zeros(n_prime + 1)
    h[:n_prime] = np.cumsum(increments[::-1])[::-1]
    return h


def hitting_times_dense(chain: BacklogChain) -> np.ndarray:
    """Same quantity from a dense solve of (I - P_TT) h = 1 over the transient states."""
    P = chain.transition_matrix()
    n_prime = chain.N_prime
    A = np.eye(n_prime) - P[:n_prime, :n_prime]
    try:
        h_transient = linalg.solve(A, np.ones(n_prime))
    except linalg.LinAlgError as e:
        raise SingularSystem(f"Hitting-time system is singular: {e}") from e
    return np.append(h_transient, 0.0)


def expected_visits(chain: BacklogChain) -> np.ndarray:
    """Expected visits to each transient state starting from x = 0 (first row of the fundamental matrix)."""
    P = chain.transition_matrix()
    n_prime = chain.N_prime
    A = np.eye(n_prime) - P[:n_prime, :n_prime]
    start = np.zeros(n_prime)
    start[0] = 1.0
    try:
        return linalg.solve(A.T, start)
    except linalg.LinAlgError as e:
        raise SingularSystem(f"Fundamental matrix is singular: {e}") from e


def expected_hitting_time_seconds(chain: BacklogChain, h: Sequence[float]) -> float:
    """Mean time to absorption: expected visits weighted by each state's mean holding time."""
    visits = expected_visits(chain)
    total_visits = float(visits.sum())
    if not np.isclose(total_visits, h[0], rtol=1e-8):
        logger.warning(f"Visit counts ({total_visits:.6g}) disagree with h(0) ({h[0]:.6g})")
    return float(np.sum(visits / chain.event_rates()))


@dataclass(frozen=True)
class AbsorptionEstimate:
    mean_events: float
    stderr_events: float
    mean_time: float
    stderr_time: float
    runs: int


def simulate_absorption(chain: BacklogChain, runs: int, seed: int = 0,
                        rng: Optional[np.random.Generator] = None) -> AbsorptionEstimate:
    """Monte Carlo absorption from x = 0, all runs advanced together."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    rng = rng or make_generator(seed)
    up = np.asarray(chain.up)
    down = np.asarray(chain.down)
    rates = chain.event_rates()

    state = np.zeros(runs, dtype=np.int64)
    events = np.zeros(runs, dtype=np.int64)
    elapsed = np.zeros(runs)
    active = np.arange(runs)
    while active.size:
        x = state[active]
        u = rng.random(active.size)
        elapsed[active] += rng.standard_exponential(active.size, method='inv') / rates[x]
        events[active] += 1
        step = np.where(u < up[x], 1, np.where(u < up[x] + down[x], -1, 0))
        state[active] = x + step
        active = active[state[active] < chain.N_prime]

    scale = np.sqrt(runs)
    return AbsorptionEstimate(
        mean_events=float(events.mean()),
        stderr_events=float(events.std(ddof=1) / scale) if runs > 1 else float('inf'),
        mean_time=float(elapsed.mean()),
        stderr_time=float(elapsed.std(ddof=1) / scale) if runs > 1 else float('inf'),
        runs=runs,
    )


def chain_frame(chain: BacklogChain, h: Sequence[float]) -> pd.DataFrame:
    rows = [
        {'x': x, 'up': chain.up[x], 'down': chain.down[x], 'stay': chain.stay[x], 'h': h[x]}
        for x in range(chain.N_prime)
    ]
    rows.append({'x': chain.N_prime, 'up': 0.0, 'down': 0.0, 'stay': 1.0, 'h': 0.0})
    return pd.DataFrame(rows, columns=['x', 'up', 'down', 'stay', 'h'])
