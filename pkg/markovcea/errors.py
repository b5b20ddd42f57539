"""
Exception hierarchy for model definition, evaluation and analysis failures
"""

from typing import Iterable, Optional


class MarkovCeaError(ValueError):
    """Base class for every user-facing error raised by markovcea"""


class ExpressionSyntaxError(MarkovCeaError):
    """Malformed expression text"""

    def __init__(self, message: str, *, text: str, offset: int, expected: Iterable[str] = ()):
        self.text = text
        self.offset = offset
        self.expected = tuple(sorted(expected))
        hint = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"syntax error at offset {offset}: {message}{hint}")


class EvaluationError(MarkovCeaError):
    """Expression could not be evaluated in the given context"""


class ParameterError(EvaluationError):
    """Evaluation failure annotated with the offending parameter"""

    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(f"parameter '{parameter}': {message}")


class SurvivalError(MarkovCeaError):
    """Invalid survival distribution or survival evaluation"""


class LifeTableError(MarkovCeaError):
    """Invalid life table or lookup outside its coverage"""


class ModelDefinitionError(MarkovCeaError):
    """Inconsistent states, strategies or run settings"""


class TransitionError(MarkovCeaError):
    """Transition matrix entries that do not form a valid probability row"""

    def __init__(self, message: str, *, cycle: int, state: str, value: float):
        self.cycle = cycle
        self.state = state
        self.value = value
        super().__init__(f"cycle {cycle}, row '{state}': {message} (value {value:.12g})")


class AnalysisError(MarkovCeaError):
    """Undefined decision-analysis quantity (e.g. ICER with equal effects)"""


class SamplingError(MarkovCeaError):
    """Invalid PSA distribution or correlation structure"""


class PsaDrawError(MarkovCeaError):
    """A PSA draw produced an invalid model"""

    def __init__(self, draw: int, reason: str):
        self.draw = draw
        self.reason = reason
        super().__init__(f"PSA draw {draw}: {reason}")


class DocumentError(MarkovCeaError):
    """Model document problem located by file, section and key"""

    def __init__(
        self,
        message: str,
        *,
        file: str,
        section: Optional[str] = None,
        key: Optional[str] = None,
        offset: Optional[int] = None,
    ):
        self.file = file
        self.section = section
        self.key = key
        self.offset = offset
        location = file
        if section:
            location += f" [{section}]"
        if key:
            location += f" {key}"
        if offset is not None:
            location += f" @{offset}"
        super().__init__(f"{location}: {message}")
