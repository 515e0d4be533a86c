#!/usr/bin/env python3
"""
Scenario Validation Module
==========================
Schema, loading and checking of TOML scenario files.

A scenario is a flat TOML document with at most one level of tables:
``[[protocols]]`` entries, an optional ``[sweep]`` and an optional ``[traffic]``.
"""
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, List, Literal, Optional, Sequence, Tuple

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dcf_sim import TrafficModel
from errors import ConfigError
from protocol_models import InitMode, Protocol, ProtocolParams

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
MONTE_CARLO_MIN_REPLICATIONS = 30


class Method(str, Enum):
    """Experiment kinds a scenario can request."""
    FIXED_POINT = "fixed_point"
    STABILITY = "stability"
    METHOD1 = "method1"
    METHOD2 = "method2"
    METHOD3 = "method3"
    MITIGATION = "mitigation"


class ProtocolSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    protocol: Protocol
    label: Optional[str] = None
    W: int = Field(32, ge=1)
    m: int = Field(0, ge=0)
    L: float = Field(12000.0, gt=0, description="Payload size in bits")
    sigma_empty: Optional[float] = Field(None, gt=0)
    DIFS: Optional[float] = Field(None, gt=0)
    SIFS: Optional[float] = Field(None, gt=0)
    R_data: Optional[float] = Field(None, gt=0)
    R_basic: Optional[float] = Field(None, gt=0)
    R_PHY: Optional[float] = Field(None, gt=0)

    def to_params(self) -> ProtocolParams:
        values = self.model_dump(exclude={'label'}, exclude_none=True)
        return ProtocolParams(**values)

    @property
    def name(self) -> str:
        return self.label or self.to_params().label()


class SweepSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    variable: Literal['lambda', 'N']
    values: List[float] = Field(..., min_length=1)

    @model_validator(mode='after')
    def check_values(self) -> 'SweepSection':
        if self.variable == 'lambda' and any(v <= 0 for v in self.values):
            raise ValueError("lambda sweep values must be positive")
        if self.variable == 'N' and any(v < 2 or v != int(v) for v in self.values):
            raise ValueError("N sweep values must be integers >= 2")
        return self


class TrafficSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model: TrafficModel = TrafficModel.POISSON
    burst_size: int = Field(1, ge=1)
    burst_gap: Optional[float] = Field(None, gt=0)


class Scenario(BaseModel):
    """One reproducible experiment."""
    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    name: str = Field(..., min_length=1)
    description: str = ""
    method: Method
    protocols: List[ProtocolSection] = Field(..., min_length=1)
    N: int = Field(50, ge=2)
    lam: Optional[float] = Field(None, alias='lambda', gt=0)
    Q: int = Field(1000, ge=1)
    theta_fraction: float = Field(0.75, gt=0, le=1)
    preload: int = Field(0, ge=0)
    replications: int = Field(1, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "results"
    horizon: float = Field(86_400.0, gt=0)
    throughput_bin: float = Field(1.0, gt=0)
    mitigation_factor: float = Field(2.0, gt=0, description="Hold mean is factor / (N * mu(N))")
    max_events: int = Field(100_000_000, ge=1)
    trajectories: int = Field(0, ge=0, description="Trajectory summaries kept per sweep point")
    inits: List[InitMode] = Field(default_factory=lambda: [InitMode.SATURATED_START, InitMode.LIGHT_START])
    stop_at_theta: bool = True
    sweep: Optional[SweepSection] = None
    traffic: TrafficSection = Field(default_factory=TrafficSection)

    @field_validator('name')
    @classmethod
    def validate_name(cls, v: str) -> str:
        if not re.fullmatch(r'[A-Za-z0-9_\-]+', v):
            raise ValueError("name may only contain letters, digits, '_' and '-'")
        return v

    @model_validator(mode='after')
    def check_consistency(self) -> 'Scenario':
        if self.preload > self.Q:
            raise ValueError(f"preload ({self.preload}) exceeds Q ({self.Q})")
        needs_lambda = self.method != Method.STABILITY or self.sweep is not None
        if needs_lambda and self.lam is None and not (self.sweep and self.sweep.variable == 'lambda'):
            raise ValueError(f"method '{self.method.value}' needs 'lambda' or a lambda sweep")
        if self.method in (Method.METHOD3, Method.MITIGATION):
            if any(p.protocol != Protocol.DCF for p in self.protocols):
                raise ValueError(f"method '{self.method.value}' simulates DCF only")
        return self

    @property
    def theta(self) -> float:
        return self.theta_fraction * self.Q

    def lambdas(self) -> List[float]:
        if self.sweep is not None and self.sweep.variable == 'lambda':
            return list(self.sweep.values)
        return [self.lam] if self.lam is not None else []

    def n_values(self) -> List[int]:
        if self.sweep is not None and self.sweep.variable == 'N':
            return [int(v) for v in self.sweep.values]
        return [self.N]

    def points(self) -> List[Tuple[int, float]]:
        """Sweep points as (N, lambda) pairs."""
        return [(n, lam) for n in self.n_values() for lam in self.lambdas()]

    def resolved_output_dir(self) -> Path:
        base = os.environ.get('TRANSIENT_OUTPUT_DIR')
        return Path(base) / self.name if base else Path(self.output_dir)


@dataclass
class ValidationResult:
    """Result of a validation check."""
    is_valid: bool
    value: Any = None
    error_message: Optional[str] = None
    warnings: List[str] = field(default_factory=list)


def _locate(text: str, loc: Sequence[Any]) -> Optional[int]:
    """Best-effort 1-based line of the key named by a pydantic error location."""
    lines = text.splitlines()
    start = 0
    keys = [str(part) for part in loc if not isinstance(part, int)]
    if not keys:
        return None
    if len(loc) >= 2 and loc[0] == 'protocols' and isinstance(loc[1], int):
        headers = [i for i, line in enumerate(lines) if line.strip() == '[[protocols]]']
        if loc[1] < len(headers):
            start = headers[loc[1]]
    elif keys[0] in ('sweep', 'traffic'):
        for i, line in enumerate(lines):
            if line.strip() == f'[{keys[0]}]':
                start = i
                break

    key = 'lambda' if keys[-1] == 'lam' else keys[-1]
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*=')
    for i in range(start, len(lines)):
        if pattern.match(lines[i]):
            return i + 1
    return start + 1 if start else None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        raw = toml.loads(text)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"{source}: {e.msg}", line=e.lineno) from e

    try:
        return Scenario.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        loc = error.get('loc', ())
        path = ".".join(str(part) for part in loc) or None
        raise ConfigError(f"{source}: {error['msg']}", field=path, line=_locate(text, loc)) from e


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read scenario {path}: {e}") from e
    scenario = parse_scenario(text, source=str(path))
    logger.debug(f"Loaded scenario '{scenario.name}' ({scenario.method.value}) from {path}")
    return scenario


def validate_scenario_file(path) -> ValidationResult:
    """Load a scenario and collect non-fatal warnings."""
    try:
        scenario = load_scenario(path)
    except ConfigError as e:
        return ValidationResult(False, None, str(e))

    warnings = []
    monte_carlo = (Method.METHOD1, Method.METHOD3, Method.MITIGATION)
    if scenario.method in monte_carlo and scenario.replications < MONTE_CARLO_MIN_REPLICATIONS:
        warnings.append(f"Only {scenario.replications} replications; confidence intervals will be wide")
    lambdas = scenario.lambdas()
    if lambdas != sorted(lambdas):
        warnings.append("lambda sweep values are not sorted")
    if scenario.preload >= scenario.theta:
        warnings.append("preload is at or above theta; T_E will be undefined")
    if scenario.method == Method.METHOD3 and scenario.horizon < 600:
        warnings.append(f"horizon {scenario.horizon}s is shorter than typical transients")

    return ValidationResult(True, scenario, warnings=warnings)


def list_scenarios(directory: Optional[Path] = None) -> List[Tuple[str, str, str, Path]]:
    """(name, method, description, path) for every scenario file in the directory."""
    directory = Path(directory) if directory else SCENARIO_DIR
    entries = []
    for path in sorted(directory.glob('*.toml')):
        try:
            scenario = load_scenario(path)
        except ConfigError as e:
            logger.warning(f"Skipping {path.name}: {e}")
            continue
        entries.append((scenario.name, scenario.method.value, scenario.description, path))
    return entries
