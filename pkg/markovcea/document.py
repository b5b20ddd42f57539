"""
Model documents: TOML files describing parameters, survival data, states, strategies,
run settings and optional DSA / PSA / population sections.

Every problem is reported as a DocumentError naming the file, section and key (and
the byte offset inside an expression when parsing failed).
"""

import logging
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from .engine import ModelSpec, define_model
from .errors import DocumentError, ExpressionSyntaxError, LifeTableError, MarkovCeaError, ParameterError
from .expr import Expr, Number, parse_expression
from .lifetable import LifeTable
from .models import CountingMethod, DsaEntry, DsaSpec
from .params import ParameterSet, build_parameter_set
from .sampling import PsaSpec, define_psa
from .survival import (
    FAMILY_PARAMETERS,
    SurvivalDeclaration,
    constant,
    fit_parametric,
    km_estimate,
    read_survival_data,
)
from .transitions import StrategySpec, define_strategy

logger = logging.getLogger(__name__)

SECTIONS = ("strategies", "parameters", "survival", "states", "transition", "run", "dsa", "psa", "population")
RUN_KEYS = (
    "cycles",
    "cost",
    "effect",
    "method",
    "init",
    "inflow",
    "state_cycle_limit",
    "discount_first_cycle",
    "thresholds",
    "lifetable",
)
KM_DISTRIBUTION = "km"


class _Reader:
    """Section-aware helpers that turn failures into located DocumentErrors"""

    def __init__(self, file: str, base_dir: Path, root: Optional[Path] = None):
        self.file = file
        self.base_dir = base_dir
        self.root = root.resolve() if root is not None else None

    def error(self, message: str, section: Optional[str] = None, key: Optional[str] = None, offset=None):
        return DocumentError(message, file=self.file, section=section, key=key, offset=offset)

    def expression(self, value: Any, section: str, key: str) -> Expr:
        if isinstance(value, bool):
            raise self.error("expected a number or an expression string", section, key)
        if isinstance(value, (int, float)):
            return Number(float(value))
        if not isinstance(value, str):
            raise self.error("expected a number or an expression string", section, key)
        try:
            return parse_expression(value)
        except ExpressionSyntaxError as exc:
            raise self.error(str(exc), section, key, exc.offset) from None

    def table(self, value: Any, section: str) -> Dict[str, Any]:
        if not isinstance(value, dict):
            raise self.error("expected a table", section)
        return value

    def path(self, value: Any, section: str, key: str) -> Path:
        if not isinstance(value, str) or not value:
            raise self.error("expected a file path", section, key)
        path = (self.base_dir / value).resolve()
        if self.root is not None and not path.is_relative_to(self.root):
            raise self.error(f"path outside the data root: {value}", section, key)
        if not path.is_file():
            raise self.error(f"file not found: {path}", section, key)
        return path


class ModelDocument:
    """
    A loaded model document

    Attributes:
        spec: Validated model
        dsa: Deterministic sensitivity bounds, if declared
        psa: Probabilistic sensitivity distributions, if declared
        population: Heterogeneity table, if declared
        thresholds: Willingness-to-pay values for NMB and CEAC/EVPI
    """

    def __init__(
        self,
        spec: ModelSpec,
        *,
        path: Optional[Path] = None,
        dsa: Optional[DsaSpec] = None,
        psa: Optional[PsaSpec] = None,
        population: Optional[pd.DataFrame] = None,
        thresholds: Tuple[float, ...] = (),
    ):
        self.spec = spec
        self.path = path
        self.dsa = dsa
        self.psa = psa
        self.population = population
        self.thresholds = thresholds

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelDocument":
        """
        Read and validate a document file

        Args:
            path: TOML document; relative data paths resolve against its directory

        Returns:
            ModelDocument with every expression parsed
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DocumentError(f"cannot read document: {exc.strerror or exc}", file=str(path)) from None
        document = cls.from_text(text, base_dir=path.parent, file=str(path))
        document.path = path
        return document

    @classmethod
    def from_text(
        cls,
        text: str,
        base_dir: Union[str, Path] = ".",
        file: str = "<document>",
        root: Optional[Union[str, Path]] = None,
    ) -> "ModelDocument":
        """Parse document text; relative paths resolve against `base_dir` and must stay under `root` when given"""
        reader = _Reader(file, Path(base_dir), Path(root) if root is not None else None)
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise reader.error(f"invalid TOML: {exc}") from None
        unknown = [key for key in raw if key not in SECTIONS]
        if unknown:
            raise reader.error(f"unknown section(s): {', '.join(unknown)}; expected {', '.join(SECTIONS)}")
        if "run" not in raw:
            raise reader.error("missing [run] section", "run")

        parameters = _parameters(reader, raw.get("parameters", {}))
        survival = _survival(reader, raw.get("survival", {}))
        strategies = _strategies(reader, raw)
        settings, thresholds = _run_settings(reader, raw["run"], strategies)
        try:
            spec = define_model(parameters=parameters, strategies=strategies, survival=survival, **settings)
        except DocumentError:
            raise
        except MarkovCeaError as exc:
            raise reader.error(str(exc), "model") from None

        dsa = _dsa(reader, raw["dsa"], spec) if "dsa" in raw else None
        psa = _psa(reader, raw["psa"], spec) if "psa" in raw else None
        population = _population(reader, raw["population"]) if "population" in raw else None
        logger.debug("Loaded %s: %d strategies, %d parameters", file, len(strategies), len(parameters))
        return cls(spec, dsa=dsa, psa=psa, population=population, thresholds=thresholds)

    def info(self) -> Dict[str, Any]:
        """Overview of the model, used by `validate`"""
        return {
            "strategies": list(self.spec.strategy_names),
            "states": list(self.spec.state_names),
            "values": list(self.spec.value_names),
            "parameters": list(self.spec.parameters.names),
            "survival": list(self.spec.survival),
            "cycles": self.spec.cycles,
            "method": self.spec.method.value,
            "dsa": [entry.parameter for entry in self.dsa.entries] if self.dsa else [],
            "psa": self.psa.names if self.psa else [],
            "population_rows": 0 if self.population is None else len(self.population),
        }


def load_model(path: Union[str, Path]) -> ModelDocument:
    """Functional form of `ModelDocument.load`"""
    return ModelDocument.load(path)


def _parameters(reader: _Reader, section: Any) -> ParameterSet:
    section = reader.table(section, "parameters")
    pairs = [(name, reader.expression(value, "parameters", name)) for name, value in section.items()]
    try:
        return build_parameter_set(pairs)
    except ParameterError as exc:
        raise reader.error(str(exc), "parameters", exc.parameter) from None
    except MarkovCeaError as exc:
        raise reader.error(str(exc), "parameters") from None


def _survival(reader: _Reader, section: Any) -> Dict[str, SurvivalDeclaration]:
    section = reader.table(section, "survival")
    declarations = {}
    for name, value in section.items():
        where = f"survival.{name}"
        try:
            if isinstance(value, str):
                declarations[name] = SurvivalDeclaration(name, expression=reader.expression(value, "survival", name))
                continue
            table = reader.table(value, where)
            distribution = table.get("distribution")
            if not isinstance(distribution, str):
                raise reader.error("missing 'distribution'", where, "distribution")
            data = read_survival_data(reader.path(table["data"], where, "data")) if "data" in table else None
            fit = table.get("fit", False)
            if not isinstance(fit, bool):
                raise reader.error("expected true or false", where, "fit")
            if fit:
                if data is None:
                    raise reader.error("fitting needs 'data'", where, "data")
                extra = set(table) - {"distribution", "data", "fit"}
                if extra:
                    raise reader.error(f"fitted distributions take no parameters: {', '.join(sorted(extra))}", where)
                fitted = fit_parametric(distribution, *data)
                parameters = [(key, constant(value)) for key, value in fitted.parameters]
                declarations[name] = SurvivalDeclaration(name, distribution, parameters, km=fitted.km)
                continue
            km = km_estimate(*data) if data is not None else None
            if distribution == KM_DISTRIBUTION:
                if km is None:
                    raise reader.error("Kaplan-Meier declarations need 'data'", where, "data")
                declarations[name] = SurvivalDeclaration(name, km=km)
                continue
            if distribution not in FAMILY_PARAMETERS:
                raise reader.error(
                    f"unknown distribution '{distribution}'; expected {', '.join(FAMILY_PARAMETERS)} or km",
                    where,
                    "distribution",
                )
            parameters = []
            for key in FAMILY_PARAMETERS[distribution]:
                if key not in table:
                    raise reader.error(f"{distribution} needs parameter '{key}'", where, key)
                parameters.append((key, reader.expression(table[key], where, key)))
            extra = set(table) - set(FAMILY_PARAMETERS[distribution]) - {"distribution", "data", "fit"}
            if extra:
                raise reader.error(f"unexpected key(s): {', '.join(sorted(extra))}", where)
            declarations[name] = SurvivalDeclaration(name, family=distribution, parameters=parameters, km=km)
        except DocumentError:
            raise
        except MarkovCeaError as exc:
            raise reader.error(str(exc), where) from None
    return declarations


def _strategies(reader: _Reader, raw: Mapping[str, Any]) -> List[StrategySpec]:
    states = reader.table(raw.get("states", {}), "states")
    transitions = reader.table(raw.get("transition", {}), "transition")
    if not transitions:
        raise reader.error("at least one [transition.<strategy>] table is required", "transition")
    names = raw.get("strategies", list(transitions))
    if not isinstance(names, list) or not all(isinstance(name, str) for name in names) or not names:
        raise reader.error("expected a non-empty list of strategy names", "strategies")
    for name in transitions:
        if name not in names:
            raise reader.error(f"transition for '{name}' is not listed in strategies", f"transition.{name}")

    values: Dict[str, Dict[str, Expr]] = {}
    for state, table in states.items():
        table = reader.table(table, f"states.{state}")
        values[state] = {key: reader.expression(value, f"states.{state}", key) for key, value in table.items()}

    strategies = []
    for name in names:
        where = f"transition.{name}"
        if name not in transitions:
            raise reader.error(f"no transition matrix for strategy '{name}'", where)
        table = reader.table(transitions[name], where)
        order = table.get("states", list(values))
        if not isinstance(order, list) or not all(isinstance(state, str) for state in order):
            raise reader.error("expected a list of state names", where, "states")
        missing = [state for state in order if state not in values]
        if missing:
            raise reader.error(f"state(s) without a [states.<name>] table: {', '.join(missing)}", where, "states")
        matrix = table.get("matrix")
        if not isinstance(matrix, list) or not all(isinstance(row, list) for row in matrix):
            raise reader.error("expected 'matrix' as a list of rows", where, "matrix")
        rows = []
        for i, row in enumerate(matrix):
            cells = []
            for j, cell in enumerate(row):
                key = f"matrix[{i}][{j}]"
                if isinstance(cell, str) and cell.strip() == "C":
                    cells.append(cell)
                else:
                    cells.append(reader.expression(cell, where, key))
            rows.append(cells)
        try:
            strategies.append(define_strategy(name, {state: values[state] for state in order}, rows, order))
        except MarkovCeaError as exc:
            raise reader.error(str(exc), where, "matrix") from None
    return strategies


def _run_settings(
    reader: _Reader, section: Any, strategies: List[StrategySpec]
) -> Tuple[Dict[str, Any], Tuple[float, ...]]:
    section = reader.table(section, "run")
    unknown = [key for key in section if key not in RUN_KEYS]
    if unknown:
        raise reader.error(f"unknown key(s): {', '.join(unknown)}", "run")
    settings: Dict[str, Any] = {}

    cycles = section.get("cycles")
    if not isinstance(cycles, int) or isinstance(cycles, bool) or cycles < 1:
        raise reader.error("'cycles' must be an integer >= 1", "run", "cycles")
    settings["cycles"] = cycles

    value_names = set(strategies[0].value_names)
    for key in ("cost", "effect"):
        name = section.get(key)
        if not isinstance(name, str):
            raise reader.error(f"'{key}' must name a state value", "run", key)
        if name not in value_names:
            raise reader.error(f"no state value named '{name}'", "run", key)
        settings[key] = name

    if "method" in section:
        try:
            settings["method"] = CountingMethod(section["method"])
        except ValueError:
            choices = ", ".join(method.value for method in CountingMethod)
            raise reader.error(f"unknown counting method; expected one of {choices}", "run", "method") from None

    states = strategies[0].state_names
    if "init" in section:
        init = section["init"]
        if not isinstance(init, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in init):
            raise reader.error("expected a list of counts", "run", "init")
        if len(init) != len(states):
            raise reader.error(f"expected {len(states)} counts ({', '.join(states)})", "run", "init")
        settings["init"] = tuple(float(v) for v in init)
    if "inflow" in section:
        inflow = section["inflow"]
        if not isinstance(inflow, list) or len(inflow) != len(states):
            raise reader.error(f"expected {len(states)} expressions ({', '.join(states)})", "run", "inflow")
        settings["inflow"] = [reader.expression(value, "run", f"inflow[{i}]") for i, value in enumerate(inflow)]

    if "state_cycle_limit" in section:
        limit = section["state_cycle_limit"]
        valid = isinstance(limit, int) and not isinstance(limit, bool)
        valid = valid or (isinstance(limit, dict) and all(isinstance(v, int) for v in limit.values()))
        if not valid:
            raise reader.error("expected an integer or a table of state = integer", "run", "state_cycle_limit")
        settings["state_cycle_limit"] = limit

    if "discount_first_cycle" in section:
        flag = section["discount_first_cycle"]
        if not isinstance(flag, bool):
            raise reader.error("expected true or false", "run", "discount_first_cycle")
        settings["first_cycle_undiscounted"] = not flag

    try:
        if "lifetable" in section:
            settings["lifetable"] = LifeTable.from_csv(reader.path(section["lifetable"], "run", "lifetable"))
        else:
            settings["lifetable"] = LifeTable.bundled()
    except LifeTableError as exc:
        raise reader.error(str(exc), "run", "lifetable") from None

    thresholds: Tuple[float, ...] = ()
    if "thresholds" in section:
        values = section["thresholds"]
        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in values
        ):
            raise reader.error("expected a list of non-negative numbers", "run", "thresholds")
        thresholds = tuple(float(v) for v in values)
    return settings, thresholds


def _dsa(reader: _Reader, section: Any, spec: ModelSpec) -> DsaSpec:
    section = reader.table(section, "dsa")
    entries = []
    for name, bounds in section.items():
        if name not in spec.parameters:
            raise reader.error(f"'{name}' is not a model parameter", "dsa", name)
        if not isinstance(bounds, list) or len(bounds) != 2:
            raise reader.error("expected [low, high]", "dsa", name)
        try:
            entries.append(DsaEntry(parameter=name, low=bounds[0], high=bounds[1]))
        except ValidationError as exc:
            raise reader.error(exc.errors()[0]["msg"], "dsa", name) from None
    return DsaSpec(entries=entries)


def _psa(reader: _Reader, section: Any, spec: ModelSpec) -> PsaSpec:
    section = dict(reader.table(section, "psa"))
    correlation = section.pop("correlation", [])
    distributions = {}
    for name, text in section.items():
        if name not in spec.parameters:
            raise reader.error(f"'{name}' is not a model parameter", "psa", name)
        if not isinstance(text, str):
            raise reader.error('expected a distribution such as "normal(20, 5)"', "psa", name)
        distributions[name] = text
    if not isinstance(correlation, list) or not all(isinstance(item, list) for item in correlation):
        raise reader.error("expected a list of [parameter, parameter, coefficient]", "psa", "correlation")
    try:
        return define_psa(distributions, correlation)
    except MarkovCeaError as exc:
        raise reader.error(str(exc), "psa") from None


def _population(reader: _Reader, section: Any) -> pd.DataFrame:
    section = reader.table(section, "population")
    path = reader.path(section.get("path"), "population", "path")
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise reader.error(f"cannot read population table: {exc}", "population", "path") from None
