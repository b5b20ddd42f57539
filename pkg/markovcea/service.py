"""
Model service used by the command line and the HTTP API
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import pandas as pd

from .document import ModelDocument
from .engine import ModelSpec, RunResult, run_model
from .errors import ModelDefinitionError
from .models import CountingMethod
from .transitions import to_dot
from .uncertainty import (
    DEFAULT_THRESHOLDS,
    HeterogeneityResult,
    PsaResult,
    run_dsa,
    run_psa,
    update_heterogeneity,
)

logger = logging.getLogger(__name__)


class CohortModelService:
    """
    Runs the analyses of one model document
    """

    def __init__(self, document: ModelDocument, workers: int = 1):
        """
        Initialize the service

        Args:
            document: Loaded model document
            workers: Worker processes for DSA, PSA and heterogeneity runs
        """
        if workers < 1:
            raise ModelDefinitionError("threads must be >= 1")
        self.document = document
        self.workers = workers

    @classmethod
    def from_path(cls, path: Union[str, Path], workers: int = 1) -> "CohortModelService":
        return cls(ModelDocument.load(path), workers)

    @classmethod
    def from_text(
        cls,
        text: str,
        base_dir: Union[str, Path] = ".",
        workers: int = 1,
        root: Optional[Union[str, Path]] = None,
    ) -> "CohortModelService":
        return cls(ModelDocument.from_text(text, base_dir=base_dir, root=root), workers)

    @property
    def spec(self) -> ModelSpec:
        return self.document.spec

    def configured(self, cycles: Optional[int] = None, method: Optional[str] = None) -> ModelSpec:
        """
        The model with command-line overrides applied

        Args:
            cycles: Replacement number of cycles
            method: Replacement counting method

        Returns:
            Re-validated ModelSpec (the document's own when nothing changes)
        """
        if cycles is None and method is None:
            return self.spec
        changes: Dict[str, Any] = {"cycles": cycles}
        if method is not None:
            try:
                changes["method"] = CountingMethod(method)
            except ValueError:
                choices = ", ".join(m.value for m in CountingMethod)
                raise ModelDefinitionError(f"unknown counting method '{method}'; expected one of {choices}") from None
        return self.spec.with_settings(**changes)

    def thresholds(self, override: Optional[Sequence[float]] = None) -> Sequence[float]:
        """Willingness-to-pay grid: flag, then document, then the default grid"""
        if override:
            return tuple(override)
        return self.document.thresholds or DEFAULT_THRESHOLDS

    def validate(self) -> Dict[str, Any]:
        return self.document.info()

    def run(self, cycles: Optional[int] = None, method: Optional[str] = None) -> RunResult:
        spec = self.configured(cycles, method)
        logger.info("Running %d strategies for %d cycles", len(spec.strategies), spec.cycles)
        return run_model(spec)

    def dsa(self, cycles: Optional[int] = None, method: Optional[str] = None) -> pd.DataFrame:
        if self.document.dsa is None:
            raise ModelDefinitionError("the model document has no [dsa] section")
        return run_dsa(self.configured(cycles, method), self.document.dsa, self.workers)

    def psa(
        self, draws: int, seed: int, cycles: Optional[int] = None, method: Optional[str] = None
    ) -> PsaResult:
        if self.document.psa is None:
            raise ModelDefinitionError("the model document has no [psa] section")
        return run_psa(self.configured(cycles, method), self.document.psa, draws, seed, self.workers)

    def update(
        self,
        population: Union[None, str, Path, pd.DataFrame] = None,
        cycles: Optional[int] = None,
        method: Optional[str] = None,
    ) -> HeterogeneityResult:
        """
        Heterogeneity analysis over a population table

        Args:
            population: CSV path or table; defaults to the document's [population]
        """
        if population is None:
            population = self.document.population
        if population is None:
            raise ModelDefinitionError("no population table: pass one or add a [population] section")
        if not isinstance(population, pd.DataFrame):
            try:
                population = pd.read_csv(population)
            except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
                raise ModelDefinitionError(f"cannot read population table: {exc}") from None
        return update_heterogeneity(self.configured(cycles, method), population, self.workers)

    def diagram(self, strategy: str) -> str:
        if strategy not in self.spec.strategies:
            raise ModelDefinitionError(
                f"unknown strategy '{strategy}'; expected one of {', '.join(self.spec.strategy_names)}"
            )
        return to_dot(self.spec.strategies[strategy])

    def initial_counts(self) -> Dict[str, float]:
        return dict(zip(self.spec.state_names, (float(v) for v in self.spec.initial_counts())))
