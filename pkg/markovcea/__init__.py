"""
markovcea: Markov cohort models and cost-effectiveness analysis from declarative model documents
"""

__version__ = "0.1.0"

from .analysis import best_strategies, efficiency_frontier, icer, nmb
from .document import ModelDocument, load_model
from .engine import ModelSpec, RunResult, define_model, run_model
from .errors import (
    AnalysisError,
    DocumentError,
    EvaluationError,
    ExpressionSyntaxError,
    LifeTableError,
    MarkovCeaError,
    ModelDefinitionError,
    ParameterError,
    PsaDrawError,
    SamplingError,
    SurvivalError,
    TransitionError,
)
from .expr import parse_expression
from .lifetable import LifeTable
from .models import CountingMethod, DsaEntry, DsaSpec, SexCode, StrategyTotals
from .params import build_parameter_set, modify_parameter_set
from .sampling import define_psa
from .service import CohortModelService
from .transitions import define_strategy
from .uncertainty import ceac, evpi, run_dsa, run_psa, update_heterogeneity

__all__ = [
    "AnalysisError",
    "CohortModelService",
    "CountingMethod",
    "DocumentError",
    "DsaEntry",
    "DsaSpec",
    "EvaluationError",
    "ExpressionSyntaxError",
    "LifeTable",
    "LifeTableError",
    "MarkovCeaError",
    "ModelDefinitionError",
    "ModelDocument",
    "ModelSpec",
    "ParameterError",
    "PsaDrawError",
    "RunResult",
    "SamplingError",
    "SexCode",
    "StrategyTotals",
    "SurvivalError",
    "TransitionError",
    "best_strategies",
    "build_parameter_set",
    "ceac",
    "define_model",
    "define_psa",
    "define_strategy",
    "efficiency_frontier",
    "evpi",
    "icer",
    "load_model",
    "modify_parameter_set",
    "nmb",
    "parse_expression",
    "run_dsa",
    "run_model",
    "run_psa",
    "update_heterogeneity",
]
