#!/usr/bin/env python3
"""
Renewal-Reward Models for Aloha and DCF
=======================================

Frame timings, the decoupled fixed-point system (attempt rate, collision
probability, queue occupancy, service time, idle slots) and the saturated
service-rate curve mu(n) consumed by the stability test and both coupled
queue methods.

The fixed point is found by damped successive substitution. Starting the
iteration from saturated or lightly loaded conditions may land on two
different solutions right above the stability limit; both are fixed points.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from errors import DegenerateRates, DomainError, NonConvergence

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 10_000
DEFAULT_DAMPING = 0.5
TWO_SOLUTION_GAP = 0.10

# keeps E[w] finite when tau starts at 0.5 with many contenders
P_CEILING = 1.0 - 1e-12


class Protocol(str, Enum):
    """Random access protocols covered by the analytical models."""
    ALOHA = "aloha"
    DCF = "dcf"


class InitMode(str, Enum):
    """Initial conditions handed to the fixed-point solver."""
    SATURATED_START = "saturated"
    LIGHT_START = "light"


# idle slots, queue occupancy, attempt rate
INITIAL_CONDITIONS: Dict[InitMode, Dict[str, float]] = {
    InitMode.SATURATED_START: {'I': 0.0, 'rho': 1.0, 'tau': 0.5},
    InitMode.LIGHT_START: {'I': 1000.0, 'rho': 0.0, 'tau': 1e-5},
}


class ProtocolParams(BaseModel):
    """PHY/MAC timing and contention constants. Sizes in bits, rates in bit/s, durations in s."""
    model_config = ConfigDict(frozen=True)

    protocol: Protocol
    W: int = Field(32, ge=1, description="Minimum contention window (slots)")
    m: int = Field(0, ge=0, description="Backoff stages (DCF only)")
    L: float = Field(12000.0, gt=0, description="Payload size")
    L_MACH: float = Field(272.0, gt=0, description="MAC header")
    L_PLCPPre: float = Field(144.0, gt=0, description="PLCP preamble")
    L_PLCPH: float = Field(48.0, gt=0, description="PLCP header")
    L_ack: float = Field(112.0, gt=0, description="ACK frame")
    R_data: float = Field(11e6, gt=0)
    R_basic: float = Field(1e6, gt=0)
    R_PHY: float = Field(1e6, gt=0)
    sigma_empty: float = Field(20e-6, gt=0, description="Empty slot duration")
    DIFS: float = Field(50e-6, gt=0)
    SIFS: float = Field(10e-6, gt=0)

    @classmethod
    def ieee80211b(cls, protocol: Protocol, W: int = 32, m: int = 0, L: float = 12000.0) -> 'ProtocolParams':
        """802.11b defaults with the given contention settings and payload."""
        return cls(protocol=Protocol(protocol), W=W, m=m, L=L)

    def label(self) -> str:
        if self.protocol == Protocol.DCF:
            return f"dcf_W{self.W}_m{self.m}"
        return f"aloha_W{self.W}"


@dataclass(frozen=True)
class FrameTimings:
    """Frame, ACK, success and collision durations in seconds."""
    T_fra: float
    T_ack: float
    T_s: float
    T_c: float
    slot_aloha: float
    sigma: float

    def backoff_slot(self, protocol: Protocol) -> float:
        # Aloha contends in frame-length slots; DCF in empty slots of sigma
        return self.slot_aloha if protocol == Protocol.ALOHA else self.sigma


def compute_timings(params: ProtocolParams) -> FrameTimings:
    plcp = (params.L_PLCPPre + params.L_PLCPH) / params.R_PHY
    T_fra = plcp + params.L_MACH / params.R_basic + params.L / params.R_data
    T_ack = plcp + params.L_ack / params.R_basic
    T_s = params.DIFS + T_fra + params.SIFS + T_ack
    return FrameTimings(
        T_fra=T_fra,
        T_ack=T_ack,
        T_s=T_s,
        T_c=T_s,
        slot_aloha=T_s,
        sigma=params.sigma_empty,
    )


def expected_backoff_slots(p: float, W: int, m: int) -> float:
    """
    Average backoff slots per attempt with binary exponential backoff capped at stage m.

    At p = 1/2 the closed form is 0/0; the analytic limit ((2+m)/2)(W/2) - 1/2 is returned.
    """
    if not 0.0 <= p < 1.0:
        raise DomainError(f"Collision probability {p} outside [0, 1)")

    denominator = 1.0 - 2.0 * p
    if abs(denominator) < 1e-12:
        factor = (2.0 + m) / 2.0
    else:
        factor = (1.0 - p - p * (2.0 * p) ** m) / denominator
    return factor * (W / 2.0) - 0.5


def slot_probabilities(tau: float, n: int) -> Tuple[float, float, float]:
    """(p_s, p_e, p_c) of a backoff slot seen by a tagged node among n contenders."""
    if n >= 2:
        p_s = (n - 1) * tau * (1.0 - tau) ** (n - 2)
    else:
        p_s = 0.0
    p_e = (1.0 - tau) ** (n - 1)
    p_c = 1.0 - p_s - p_e
    return p_s, p_e, p_c


@dataclass(frozen=True)
class FixedPointSolution:
    """Converged (or last) iterate of the decoupled model."""
    tau: float
    p: float
    rho: float
    n_t: float
    D: float
    I: float
    S: float
    init: InitMode
    converged: bool
    iterations: int
    residual: float
    N: int
    lam: Optional[float]
    E_w: Optional[float] = None
    alpha: Optional[float] = None

    @property
    def service_rate(self) -> float:
        return 1.0 / self.D

    def aggregate_throughput(self) -> float:
        return self.N * self.S

    def as_row(self) -> Dict:
        return {
            'N': self.N,
            'lambda': self.lam,
            'init': self.init.value,
            'S': self.S,
            'S_aggregate': self.aggregate_throughput(),
            'tau': self.tau,
            'p': self.p,
            'rho': self.rho,
            'D': self.D,
            'I': self.I,
            'converged': self.converged,
            'iterations': self.iterations,
            'residual': self.residual,
        }


class _DecoupledModel:
    """Model equations for one protocol, n contenders and one arrival rate."""

    def __init__(self, params: ProtocolParams, n: int, lam: Optional[float]):
        self.params = params
        self.n = n
        self.lam = lam
        self.timings = compute_timings(params)
        self.is_dcf = params.protocol == Protocol.DCF

    def collision_probability(self, tau: float) -> float:
        return min(1.0 - (1.0 - tau) ** (self.n - 1), P_CEILING)

    def backoff_slots(self, p: float) -> float:
        if self.is_dcf:
            return expected_backoff_slots(p, self.params.W, self.params.m)
        return self.params.W / 2.0

    def slot_duration(self, tau: float) -> float:
        t = self.timings
        if not self.is_dcf:
            return t.slot_aloha
        p_s, p_e, p_c = slot_probabilities(tau, self.n)
        return p_s * t.T_s + p_c * t.T_c + p_e * t.sigma

    def service_time(self, p: float, tau: float) -> float:
        t = self.timings
        n_t = 1.0 / (1.0 - p)
        backoff = self.backoff_slots(p) * self.slot_duration(tau)
        return (n_t - 1.0) * (backoff + t.T_c) + backoff + t.T_s

    def occupancy(self, D: float) -> float:
        return min(self.lam * D, 1.0)

    def idle_slots(self, rho: float, tau: float) -> float:
        # -expm1 keeps 1 - exp(-x) accurate for tiny lambda * slot
        return (1.0 - rho) / -math.expm1(-self.lam * self.slot_duration(tau))

    def attempt_rate(self, p: float, I: float) -> float:
        n_t = 1.0 / (1.0 - p)
        return n_t / (n_t * (self.backoff_slots(p) + 1.0) + I)


def _relative_change(old: float, new: float) -> float:
    scale = max(abs(old), abs(new))
    if scale < 1e-300:
        return 0.0
    return abs(new - old) / scale


def _iterate(
    model: _DecoupledModel,
    init: InitMode,
    saturated: bool,
    tolerance: float,
    max_iterations: int,
    damping: float,
) -> FixedPointSolution:
    start = INITIAL_CONDITIONS[init]
    tau = start['tau']
    rho = 1.0 if saturated else start['rho']
    I = 0.0 if saturated else start['I']
    p = model.collision_probability(tau)
    D = model.service_time(p, tau)

    residual = math.inf
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        p_new = model.collision_probability(tau)
        D_new = model.service_time(p, tau)
        if saturated:
            rho_new, I_new = 1.0, 0.0
        else:
            rho_new = model.occupancy(D)
            I_new = model.idle_slots(rho, tau)
        tau_new = model.attempt_rate(p, I)

        residual = max(
            _relative_change(tau, tau_new),
            _relative_change(p, p_new),
            _relative_change(rho, rho_new),
            _relative_change(D, D_new),
            _relative_change(I, I_new),
        )

        tau = (1.0 - damping) * tau + damping * tau_new
        p = (1.0 - damping) * p + damping * p_new
        rho = (1.0 - damping) * rho + damping * rho_new
        D = (1.0 - damping) * D + damping * D_new
        I = (1.0 - damping) * I + damping * I_new

        if residual < tolerance:
            break

    converged = residual < tolerance
    return _finalize(model, init, tau, saturated, converged, iterations, residual)


def _finalize(
    model: _DecoupledModel,
    init: InitMode,
    tau: float,
    saturated: bool,
    converged: bool,
    iterations: int,
    residual: float,
) -> FixedPointSolution:
    """Derive every other field from tau in a single consistent pass."""
    p = model.collision_probability(tau)
    D = model.service_time(p, tau)
    if saturated:
        rho, I = 1.0, 0.0
    else:
        rho = model.occupancy(D)
        I = model.idle_slots(rho, tau)
    return FixedPointSolution(
        tau=tau,
        p=p,
        rho=rho,
        n_t=1.0 / (1.0 - p),
        D=D,
        I=I,
        S=rho * model.params.L / D,
        init=init,
        converged=converged,
        iterations=iterations,
        residual=residual,
        N=model.n,
        lam=model.lam,
        E_w=model.backoff_slots(p) if model.is_dcf else None,
        alpha=model.slot_duration(tau) if model.is_dcf else None,
    )


def solve_fixed_point(
    params: ProtocolParams,
    N: int,
    lam: float,
    init: InitMode,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    damping: float = DEFAULT_DAMPING,
) -> FixedPointSolution:
    """
    Solve the decoupled model for N nodes offered lam packets/s each.

    Raises NonConvergence carrying the last iterate when the residual is still
    above tolerance after max_iterations.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if lam <= 0:
        raise ValueError(f"Arrival rate must be positive, got {lam}")

    model = _DecoupledModel(params, N, lam)
    solution = _iterate(model, InitMode(init), False, tolerance, max_iterations, damping)
    if not solution.converged:
        logger.warning(
            f"{params.label()} N={N} lambda={lam} {solution.init.value}: "
            f"no convergence after {solution.iterations} iterations (residual {solution.residual:.3e})"
        )
        raise NonConvergence(
            f"Fixed point not reached for N={N}, lambda={lam}, init={solution.init.value}",
            last_iterate=solution,
            residual=solution.residual,
            n=N,
        )
    logger.debug(f"{params.label()} N={N} lambda={lam} {solution.init.value}: "
                 f"S={solution.S:.1f} bit/s after {solution.iterations} iterations")
    return solution


def saturated_solution(
    params: ProtocolParams,
    n: int,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    damping: float = DEFAULT_DAMPING,
) -> FixedPointSolution:
    """Model solved with rho pinned to 1 and n permanent contenders."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")

    model = _DecoupledModel(params, n, None)
    solution = _iterate(model, InitMode.SATURATED_START, True, tolerance, max_iterations, damping)
    if not solution.converged:
        raise NonConvergence(
            f"Saturated model did not converge for n={n}",
            last_iterate=solution,
            residual=solution.residual,
            n=n,
        )
    return solution


def saturated_service_rate(params: ProtocolParams, n: int, **solver_options) -> float:
    return saturated_solution(params, n, **solver_options).service_rate


@dataclass(frozen=True)
class ServiceRateCurve:
    """
    Saturated service rates mu(n) for n = 1..N_max contenders (packets/s).

    ``params`` is None for hand-built curves (toy chains, M/M/1 checks).
    """
    mu: Tuple[float, ...]
    params: Optional[ProtocolParams] = None
    label: str = field(default="custom")

    def __post_init__(self):
        if not self.mu:
            raise ValueError("Service-rate curve must not be empty")
        bad = [i + 1 for i, rate in enumerate(self.mu) if not rate > 0]
        if bad:
            raise DegenerateRates(f"Non-positive service rate at n={bad[0]}")

    @classmethod
    def from_rates(cls, rates: Iterable[float], label: str = "custom") -> 'ServiceRateCurve':
        return cls(mu=tuple(float(r) for r in rates), label=label)

    @classmethod
    def constant(cls, rate: float, n_max: int) -> 'ServiceRateCurve':
        return cls(mu=(float(rate),) * n_max, label=f"constant_{rate:g}")

    @property
    def N_max(self) -> int:
        return len(self.mu)

    def __len__(self) -> int:
        return len(self.mu)

    def rate(self, n: int) -> float:
        """mu(n), 1-indexed."""
        if not 1 <= n <= len(self.mu):
            raise IndexError(f"n={n} outside curve range 1..{len(self.mu)}")
        return self.mu[n - 1]

    def truncated(self, n_max: int) -> 'ServiceRateCurve':
        if n_max > len(self.mu):
            raise ValueError(f"Curve holds {len(self.mu)} rates, {n_max} requested")
        return replace(self, mu=self.mu[:n_max])

    def as_rows(self) -> List[Dict]:
        return [{'n': i + 1, 'mu': rate} for i, rate in enumerate(self.mu)]


def service_rate_curve(params: ProtocolParams, N_max: int, **solver_options) -> ServiceRateCurve:
    if N_max < 1:
        raise ValueError(f"N_max must be >= 1, got {N_max}")

    rates = []
    for n in range(1, N_max + 1):
        try:
            rates.append(saturated_service_rate(params, n, **solver_options))
        except NonConvergence as e:
            raise NonConvergence(
                f"Service-rate curve failed at n={n}: {e}",
                last_iterate=e.last_iterate,
                residual=e.residual,
                n=n,
            ) from e

    logger.info(f"Service-rate curve {params.label()}: mu(1)={rates[0]:.3f}, mu({N_max})={rates[-1]:.3f} packets/s")
    return ServiceRateCurve(mu=tuple(rates), params=params, label=params.label())


def throughput_sweep(
    params: ProtocolParams,
    N: int,
    lambdas: Sequence[float],
    inits: Sequence[InitMode] = (InitMode.SATURATED_START, InitMode.LIGHT_START),
    **solver_options,
) -> List[FixedPointSolution]:
    """Solve every (lambda, init) pair; non-converged points are kept with converged=False."""
    solutions = []
    for lam in lambdas:
        for init in inits:
            try:
                solutions.append(solve_fixed_point(params, N, lam, init, **solver_options))
            except NonConvergence as e:
                solutions.append(e.last_iterate)
    return solutions


def split_solutions(
    solutions: Iterable[FixedPointSolution],
    rel_gap: float = TWO_SOLUTION_GAP,
) -> List[Tuple[float, FixedPointSolution, FixedPointSolution]]:
    """
    Pair saturated and light starts per arrival rate and keep the pairs whose
    throughputs are more than rel_gap apart. Non-converged pairs are skipped.
    """
    by_lambda: Dict[float, Dict[InitMode, FixedPointSolution]] = {}
    for sol in solutions:
        by_lambda.setdefault(sol.lam, {})[sol.init] = sol

    window = []
    for lam, pair in by_lambda.items():
        saturated = pair.get(InitMode.SATURATED_START)
        light = pair.get(InitMode.LIGHT_START)
        if saturated is None or light is None or not (saturated.converged and light.converged):
            continue
        top = max(saturated.S, light.S)
        if top > 0 and abs(light.S - saturated.S) / top > rel_gap:
            window.append((lam, saturated, light))
    return window


def two_solution_window(
    params: ProtocolParams,
    N: int,
    lambdas: Sequence[float],
    rel_gap: float = TWO_SOLUTION_GAP,
    **solver_options,
) -> List[Tuple[float, FixedPointSolution, FixedPointSolution]]:
    """Arrival rates at which saturated and light starts converge to throughputs more than rel_gap apart."""
    return split_solutions(throughput_sweep(params, N, lambdas, **solver_options), rel_gap)
