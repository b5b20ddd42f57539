"""
Tests for parameter sets and their evaluation
"""

import sys
from pathlib import Path
import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from markovcea.errors import ModelDefinitionError, ParameterError
from markovcea.evaluator import EvalContext
from markovcea.expr import Number, parse_expression
from markovcea.params import ParameterTable, build_parameter_set, evaluate_parameters, modify_parameter_set, names_read


@pytest.fixture
def parameters():
    """Fixture to provide a small chain of parameters"""
    return build_parameter_set(
        [
            ("age_base", 20),
            ("age_cycle", "model_time + age_base"),
            ("cost_surg", 20000),
            ("cost_surg_cycle", "ifelse(state_time == 1, cost_surg, 0)"),
            ("double_surg", "cost_surg_cycle * 2"),
        ]
    )


class TestParameterSet:
    """Test cases for building and modifying parameter sets"""

    def test_order_kept(self, parameters):
        """Test that declaration order is preserved"""
        assert parameters.names == ("age_base", "age_cycle", "cost_surg", "cost_surg_cycle", "double_surg")
        assert len(parameters) == 5
        assert "age_cycle" in parameters
        assert parameters["age_base"] == Number(20.0)

    def test_mapping_input(self):
        """Test building from a dict"""
        params = build_parameter_set({"a": 1, "b": "a + 1"})
        assert params.names == ("a", "b")

    def test_forward_reference(self):
        """Test that parameters must be declared before use"""
        with pytest.raises(ModelDefinitionError, match="before definition"):
            build_parameter_set([("b", "a + 1"), ("a", 1)])

    def test_duplicate(self):
        """Test that names are unique"""
        with pytest.raises(ModelDefinitionError, match="defined twice"):
            build_parameter_set([("a", 1), ("a", 2)])

    @pytest.mark.parametrize("name", ["model_time", "state_time", "markov_cycle", "MLE"])
    def test_reserved_names(self, name):
        """Test that reserved names cannot be parameters"""
        with pytest.raises(ModelDefinitionError, match="reserved"):
            build_parameter_set([(name, 1)])

    def test_syntax_error_names_parameter(self):
        """Test that a malformed definition reports its parameter"""
        with pytest.raises(ParameterError) as info:
            build_parameter_set([("a", "1 +")])
        assert info.value.parameter == "a"

    def test_modify_replaces_in_place(self, parameters):
        """Test that modified parameters keep their position and new ones are appended"""
        modified = modify_parameter_set(parameters, {"age_base": 30, "extra": "age_base * 2"})
        assert modified.names == parameters.names + ("extra",)
        assert modified["age_base"] == Number(30.0)
        assert parameters["age_base"] == Number(20.0)

    def test_modify_keeps_order_rules(self, parameters):
        """Test that a modification cannot introduce a forward reference"""
        with pytest.raises(ModelDefinitionError):
            parameters.modify({"age_base": "age_cycle"})

    def test_state_time_dependent(self, parameters):
        """Test transitive state_time dependency"""
        assert parameters.state_time_dependent() == frozenset({"cost_surg_cycle", "double_surg"})

    def test_dependents_of(self, parameters):
        """Test the closure of parameters affected by a change"""
        assert parameters.dependents_of(["cost_surg"]) == frozenset({"cost_surg", "cost_surg_cycle", "double_surg"})

    def test_dependency_through_survival(self):
        """Test dependencies reaching a parameter through a survival declaration"""
        parameters = build_parameter_set(
            [("sc", "4 + state_time"), ("p", "compute_surv(d, time = model_time)"), ("q", "p * 2")]
        )
        assert parameters.state_time_dependent() == frozenset({"sc"})
        assert parameters.state_time_dependent({"d": {"sc"}}) == frozenset({"sc", "p", "q"})
        assert names_read(parameters["p"], {"d": {"sc"}}) == frozenset({"model_time", "sc"})
        assert names_read(parameters["p"]) == frozenset({"model_time"})

    def test_subset(self, parameters):
        """Test keeping a subset in declaration order"""
        assert parameters.subset({"age_cycle", "age_base"}).names == ("age_base", "age_cycle")


class TestEvaluation:
    """Test cases for evaluate_parameters"""

    def test_columns(self, parameters):
        """Test per-cycle values of time-independent parameters"""
        ctx = EvalContext(cycles=4)
        table = evaluate_parameters(parameters.subset({"age_base", "age_cycle", "cost_surg"}), ctx)
        np.testing.assert_array_equal(table["age_cycle"], [21, 22, 23, 24])
        np.testing.assert_array_equal(table["age_base"], np.full(4, 20.0))
        assert table.names == ("age_base", "age_cycle", "cost_surg")

    def test_state_time_columns(self, parameters):
        """Test evaluation inside a tunnel state reusing base columns"""
        ctx = EvalContext(cycles=3)
        base = evaluate_parameters(parameters.subset({"age_base", "age_cycle", "cost_surg"}), ctx)
        first = evaluate_parameters(parameters, ctx.at_state_time(1), base=base)
        second = evaluate_parameters(parameters, ctx.at_state_time(2), base=base)
        np.testing.assert_array_equal(first["double_surg"], np.full(3, 40000.0))
        np.testing.assert_array_equal(second["cost_surg_cycle"], np.zeros(3))
        assert first["age_cycle"] is base["age_cycle"]

    def test_failure_names_parameter(self, parameters):
        """Test that failures are annotated with the parameter name"""
        with pytest.raises(ParameterError) as info:
            evaluate_parameters(parameters, EvalContext(cycles=3))
        assert info.value.parameter == "cost_surg_cycle"
        assert "state_time" in str(info.value)

    def test_table_length_checked(self):
        """Test that columns need one value per cycle"""
        with pytest.raises(ModelDefinitionError):
            ParameterTable(3, {"a": np.ones(2)})

    def test_parsed_trees_accepted(self):
        """Test definitions given as parsed trees"""
        params = build_parameter_set([("x", parse_expression("2 * 3"))])
        table = evaluate_parameters(params, EvalContext(cycles=2))
        np.testing.assert_array_equal(table["x"], [6.0, 6.0])
