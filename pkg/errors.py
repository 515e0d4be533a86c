#!/usr/bin/env python3
"""
Exception hierarchy for the transient-analysis toolkit.

Every error carries an ``exit_code`` category so the CLI can map failures to
a process status without inspecting messages.
"""
from typing import Any, Optional


class ToolkitError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class ConfigError(ToolkitError):
    """Scenario file could not be parsed or failed validation."""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class ModelError(ToolkitError):
    """Analytical model or chain could not be evaluated."""
    exit_code = 3


class DomainError(ModelError):
    """Argument outside the domain of a closed-form expression."""


class NonConvergence(ModelError):
    """Fixed-point iteration stopped before reaching the tolerance."""

    def __init__(self, message: str, last_iterate: Any = None, residual: float = float('nan'), n: Optional[int] = None):
        self.last_iterate = last_iterate
        self.residual = residual
        self.n = n
        super().__init__(message)


class DegenerateRates(ModelError):
    """A service rate needed by a simulation is not strictly positive."""


class StableRegime(ModelError):
    """The arrival rate is below every saturated service rate: nothing absorbs."""


class SingularSystem(ModelError):
    """Linear system for hitting times or visit counts is singular."""


class InvalidProtocol(ModelError):
    """Operation requested for a protocol it does not support."""


class SamplingError(ToolkitError):
    """Replication outcomes or samples cannot support the requested statistic."""
    exit_code = 4


class AllCensored(SamplingError):
    """No replication reached the occupancy threshold."""

    def __init__(self, message: str, censored: int = 0):
        self.censored = censored
        super().__init__(message)


class AllUndefined(AllCensored):
    """Replications reached the threshold but no queue was ever empty, so T_E is undefined."""


class EmptySample(SamplingError):
    """Statistic requested on an empty sample."""


class DegenerateSample(SamplingError):
    """Sample has no dispersion (all values equal)."""
