#!/usr/bin/env python3
"""
Empirical CDFs and maximum-likelihood fits for transient durations.

Two families are fitted: the inverse Gaussian (first-passage law of a drifted
random walk, a good match for short transients) and the exponential (long,
memoryless transients). Fits are compared by negative log-likelihood in nats.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats as sps

from errors import DegenerateSample, EmptySample

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

# relative floor on sum(1/x - 1/mean) below which the sample has no dispersion
DISPERSION_FLOOR = 1e-12


class Family(str, Enum):
    INVERSE_GAUSSIAN = "inverse_gaussian"
    EXPONENTIAL = "exponential"


# tie-break order when two fits have the same nll
FAMILY_ORDER = {Family.INVERSE_GAUSSIAN: 0, Family.EXPONENTIAL: 1}


def _as_sample(samples: ArrayLike) -> np.ndarray:
    values = np.asarray(samples, dtype=float).ravel()
    if values.size == 0:
        raise EmptySample("Sample is empty")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("Durations must be finite and strictly positive")
    return values


@dataclass(frozen=True)
class EcdfSample:
    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.values.size)

    def cdf(self, x: ArrayLike) -> np.ndarray:
        """Fraction of the sample <= x."""
        return np.searchsorted(self.values, x, side='right') / self.n

    def points(self):
        """(x, F(x)) at every sample point."""
        return self.values, self.cdf(self.values)

    def frame(self) -> pd.DataFrame:
        x, F = self.points()
        return pd.DataFrame({'x': x, 'F': F})


def ecdf(samples: ArrayLike) -> EcdfSample:
    return EcdfSample(values=np.sort(_as_sample(samples)))


@dataclass(frozen=True)
class FitResult:
    """Fitted family with its parameters; ``nll`` is the negative log-likelihood of the fitted sample."""
    family: Family
    params: Dict[str, float]
    nll: float
    n: int

    def distribution(self):
        """Frozen scipy distribution for the fitted parameters."""
        if self.family == Family.INVERSE_GAUSSIAN:
            mu, shape = self.params['mu'], self.params['lambda_shape']
            # scipy's invgauss(m, scale=s) has mean m*s and shape s
            return sps.invgauss(mu / shape, scale=shape)
        return sps.expon(scale=1.0 / self.params['rate'])

    def logpdf(self, x: ArrayLike) -> np.ndarray:
        return self.distribution().logpdf(x)

    def cdf(self, x: ArrayLike) -> np.ndarray:
        return self.distribution().cdf(x)

    def as_dict(self) -> dict:
        return {'family': self.family.value, **self.params, 'nll': self.nll, 'n': self.n}


def inverse_gaussian_nll(samples: ArrayLike, mu: float, lambda_shape: float) -> float:
    x = _as_sample(samples)
    return float(-np.sum(sps.invgauss.logpdf(x, mu / lambda_shape, scale=lambda_shape)))


def exponential_nll(samples: ArrayLike, rate: float) -> float:
    x = _as_sample(samples)
    return float(-np.sum(sps.expon.logpdf(x, scale=1.0 / rate)))


def fit_inverse_gaussian(samples: ArrayLike) -> FitResult:
    """Closed-form MLE: mu = sample mean, lambda = n / sum(1/x - 1/mu)."""
    x = _as_sample(samples)
    mu = float(x.mean())
    reciprocal = 1.0 / x
    dispersion = float(np.sum(reciprocal - 1.0 / mu))
    if dispersion <= DISPERSION_FLOOR * float(np.sum(reciprocal)):
        raise DegenerateSample(f"All {x.size} values are (numerically) equal; inverse Gaussian shape undefined")

    shape = x.size / dispersion
    nll = inverse_gaussian_nll(x, mu, shape)
    logger.debug(f"Inverse Gaussian fit: mu={mu:.4g}, lambda={shape:.4g}, nll={nll:.4f} (n={x.size})")
    return FitResult(Family.INVERSE_GAUSSIAN, {'mu': mu, 'lambda_shape': shape}, nll, int(x.size))


def fit_exponential(samples: ArrayLike) -> FitResult:
    x = _as_sample(samples)
    rate = 1.0 / float(x.mean())
    nll = exponential_nll(x, rate)
    logger.debug(f"Exponential fit: rate={rate:.4g}, nll={nll:.4f} (n={x.size})")
    return FitResult(Family.EXPONENTIAL, {'rate': rate}, nll, int(x.size))


def compare_fits(samples: ArrayLike) -> List[FitResult]:
    """Both fits ordered by ascending nll; ties go to the inverse Gaussian."""
    fits = [fit_inverse_gaussian(samples), fit_exponential(samples)]
    return sorted(fits, key=lambda fit: (fit.nll, FAMILY_ORDER[fit.family]))


def fits_frame(fits: Sequence[FitResult]) -> pd.DataFrame:
    return pd.DataFrame([fit.as_dict() for fit in fits], columns=['family', 'mu', 'lambda_shape', 'rate', 'nll', 'n'])
