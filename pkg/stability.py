#!/usr/bin/env python3
"""
Stability test for homogeneous random access networks.

The network of N queues is stable iff the per-node arrival rate stays strictly
below the saturated service rate mu(N). The limiting contender count N' is the
smallest n at which lambda < mu(n) no longer holds; Methods 1 and 2 absorb there.
"""
import logging
from dataclasses import dataclass
from typing import Optional

from protocol_models import ServiceRateCurve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StabilityReport:
    lam: float
    mu_sat: float
    stable: bool
    N_prime: Optional[int]
    margin: float

    def as_row(self) -> dict:
        return {
            'lambda': self.lam,
            'mu_sat': self.mu_sat,
            'stable': self.stable,
            'N_prime': self.N_prime,
            'margin': self.margin,
        }


def limiting_contenders(lam: float, curve: ServiceRateCurve) -> Optional[int]:
    """Smallest n with lam >= mu(n); a tie counts as unstable."""
    for n, rate in enumerate(curve.mu, start=1):
        if lam >= rate:
            return n
    return None


def assess(lam: float, curve: ServiceRateCurve) -> StabilityReport:
    if lam <= 0:
        raise ValueError(f"Arrival rate must be positive, got {lam}")

    mu_sat = curve.mu[-1]
    n_prime = limiting_contenders(lam, curve)
    report = StabilityReport(
        lam=lam,
        mu_sat=mu_sat,
        stable=lam < mu_sat,
        N_prime=n_prime,
        margin=lam - mu_sat,
    )
    logger.debug(f"lambda={lam}: mu_sat={mu_sat:.4f}, stable={report.stable}, N'={n_prime}")
    return report


def stability_limit(curve: ServiceRateCurve) -> float:
    """mu(N): every arrival rate strictly below it is stable."""
    return curve.mu[-1]
