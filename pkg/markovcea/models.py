"""
Shared data models for markovcea: closed vocabularies and analysis records
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import MarkovCeaError, ModelDefinitionError


class CountingMethod(str, Enum):
    """Within-cycle membership rule applied before valuing states"""

    START = "start"
    END = "end"
    LIFE_TABLE = "life-table"


class SexCode(str, Enum):
    """Sex codes of the mortality tables (WHO Global Health Observatory codes)"""

    MALE = "MLE"
    FEMALE = "FMLE"
    BOTH = "BTSX"

    @property
    def numeric(self) -> float:
        """Numeric value the code takes inside expressions"""
        return float(list(SexCode).index(self) + 1)

    @classmethod
    def from_numeric(cls, value: float) -> "SexCode":
        for code in cls:
            if code.numeric == value:
                return code
        raise ValueError(f"no sex code has numeric value {value}")


class DominanceKind(str, Enum):
    """Why a strategy left the efficiency frontier"""

    STRICT = "strict"
    EXTENDED = "extended"


class Bound(str, Enum):
    """Side of a deterministic sensitivity range"""

    LOW = "low"
    HIGH = "high"


class StrategyTotals(BaseModel):
    """Total expected cost and effect of one strategy, plus its other value totals"""

    model_config = ConfigDict(frozen=True)

    strategy: str = Field(description="Strategy name")
    cost: float = Field(description="Total cost")
    effect: float = Field(description="Total effect (QALYs or other units)")
    values: Dict[str, float] = Field(default_factory=dict, description="Totals of every state value")

    @field_validator("cost", "effect")
    @classmethod
    def _finite(cls, value: float) -> float:
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("totals must be finite")
        return value


class FrontierStep(BaseModel):
    """One move along the efficiency frontier"""

    model_config = ConfigDict(frozen=True)

    strategy: str
    reference: str
    cost_diff: float
    effect_diff: float
    icer: float


class DominatedStrategy(BaseModel):
    """Strategy excluded from the frontier"""

    model_config = ConfigDict(frozen=True)

    strategy: str
    kind: DominanceKind
    by: str = Field(description="Strategy (or frontier neighbour) responsible for the exclusion")


class FrontierResult(BaseModel):
    """Non-dominated strategies ordered by effect, with incremental ratios"""

    model_config = ConfigDict(frozen=True)

    frontier: List[str]
    steps: List[FrontierStep] = Field(default_factory=list)
    dominated: List[DominatedStrategy] = Field(default_factory=list)

    @model_validator(mode="after")
    def _increasing(self) -> "FrontierResult":
        if len(self.steps) != max(len(self.frontier) - 1, 0):
            raise ValueError("one step per frontier move is required")
        for before, after in zip(self.steps, self.steps[1:]):
            if not after.icer > before.icer:
                raise ValueError("ICERs must strictly increase along the frontier")
        return self

    def icer_of(self, strategy: str) -> Optional[float]:
        for step in self.steps:
            if step.strategy == strategy:
                return step.icer
        return None


class DsaEntry(BaseModel):
    """Low/high bounds of one parameter"""

    model_config = ConfigDict(frozen=True)

    parameter: str
    low: float
    high: float

    @model_validator(mode="after")
    def _ordered(self) -> "DsaEntry":
        if self.low > self.high:
            raise ValueError(f"DSA bounds for '{self.parameter}': low must not exceed high")
        return self


class DsaSpec(BaseModel):
    """Deterministic sensitivity analysis definition"""

    model_config = ConfigDict(frozen=True)

    entries: List[DsaEntry]

    @field_validator("entries")
    @classmethod
    def _unique(cls, entries: List[DsaEntry]) -> List[DsaEntry]:
        names = [entry.parameter for entry in entries]
        if len(set(names)) != len(names):
            raise ValueError("each parameter may appear only once in a DSA")
        return entries


def unwrap_validation_error(exc: ValidationError) -> Exception:
    """Recover the domain error raised inside a validator, or summarise the failure"""
    for error in exc.errors():
        original = (error.get("ctx") or {}).get("error")
        if isinstance(original, MarkovCeaError):
            return original
    messages = "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or 'model'}: {error['msg']}" for error in exc.errors()
    )
    return ModelDefinitionError(messages)
