"""
Tests for vectorized expression evaluation
"""

import math
import sys
from pathlib import Path
import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from markovcea.errors import EvaluationError
from markovcea.evaluator import EvalContext, eval_expression
from markovcea.expr import parse_expression
from markovcea.lifetable import LifeTable
from markovcea.survival import SurvivalDeclaration, constant


@pytest.fixture
def ctx():
    """Fixture to provide a five-cycle context with a few bindings"""
    return EvalContext(
        cycles=5,
        strategy="med",
        bindings={
            "cost_med": np.full(5, 5000.0),
            "dr": np.full(5, 0.05),
            "age": np.array([20.0, 21.0, 22.0, 23.0, 24.0]),
        },
    )


def evaluate(text, ctx):
    return eval_expression(parse_expression(text), ctx)


class TestArithmetic:
    """Test cases for operators and names"""

    def test_scalar_broadcast(self, ctx):
        """Test that constants fill every cycle"""
        np.testing.assert_array_equal(evaluate("1 + 2 * 3", ctx), np.full(5, 7.0))

    def test_model_time_starts_at_one(self, ctx):
        """Test model_time and its alias markov_cycle"""
        np.testing.assert_array_equal(evaluate("model_time", ctx), [1, 2, 3, 4, 5])
        np.testing.assert_array_equal(evaluate("markov_cycle", ctx), [1, 2, 3, 4, 5])

    def test_power(self, ctx):
        """Test exponentiation"""
        np.testing.assert_array_equal(evaluate("2 ^ model_time", ctx), [2, 4, 8, 16, 32])

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("model_time == 3", [0, 0, 1, 0, 0]),
            ("model_time != 3", [1, 1, 0, 1, 1]),
            ("model_time < 3", [1, 1, 0, 0, 0]),
            ("model_time <= 3", [1, 1, 1, 0, 0]),
            ("model_time > 3", [0, 0, 0, 1, 1]),
            ("model_time >= 3", [0, 0, 1, 1, 1]),
            ("model_time > 1 && model_time < 4", [0, 1, 1, 0, 0]),
            ("model_time < 2 || model_time > 4", [1, 0, 0, 0, 1]),
            ("!(model_time == 1)", [0, 1, 1, 1, 1]),
        ],
    )
    def test_comparisons_and_logic(self, ctx, text, expected):
        """Test that comparisons and logic yield 0/1"""
        np.testing.assert_array_equal(evaluate(text, ctx), expected)

    def test_sex_constants(self, ctx):
        """Test the numeric sex codes"""
        assert evaluate("MLE", ctx)[0] == 1.0
        assert evaluate("FMLE", ctx)[0] == 2.0
        assert evaluate("BTSX", ctx)[0] == 3.0

    def test_unknown_name(self, ctx):
        """Test that unresolved names fail"""
        with pytest.raises(EvaluationError, match="unknown name 'missing'"):
            evaluate("missing + 1", ctx)

    def test_division_by_zero(self, ctx):
        """Test that division by zero fails instead of producing inf"""
        with pytest.raises(EvaluationError, match="division by zero"):
            evaluate("1 / (model_time - 2)", ctx)

    def test_non_finite_result(self, ctx):
        """Test that non-finite values are rejected"""
        with pytest.raises(EvaluationError, match="non-finite"):
            evaluate("10 ^ 400", ctx)

    def test_state_time_outside_state(self, ctx):
        """Test that state_time needs a state context"""
        with pytest.raises(EvaluationError, match="state_time"):
            evaluate("state_time + 1", ctx)

    def test_state_time_in_tunnel(self, ctx):
        """Test state_time inside a tunnel state context"""
        np.testing.assert_array_equal(evaluate("state_time * 2", ctx.at_state_time(3)), np.full(5, 6.0))


class TestFunctions:
    """Test cases for builtin functions and special forms"""

    def test_ifelse(self, ctx):
        """Test element-wise selection"""
        np.testing.assert_array_equal(evaluate("ifelse(model_time <= 2, 10, 20)", ctx), [10, 10, 20, 20, 20])

    def test_dispatch_strategy(self, ctx):
        """Test that the branch of the running strategy is used"""
        np.testing.assert_array_equal(evaluate("dispatch_strategy(base = 0, med = cost_med)", ctx), np.full(5, 5000))

    def test_dispatch_strategy_missing_branch(self, ctx):
        """Test that a strategy without branch fails"""
        with pytest.raises(EvaluationError, match="no branch"):
            evaluate("dispatch_strategy(base = 0, surg = 1)", ctx)

    def test_discount_default(self, ctx):
        """Test discount with the first cycle undiscounted"""
        result = evaluate("discount(100, r = dr)", ctx)
        np.testing.assert_allclose(result, 100.0 / 1.05 ** np.arange(5))

    def test_discount_first_cycle(self, ctx):
        """Test that a nonzero `first` discounts cycle 1 too"""
        result = evaluate("discount(100, r = dr, first = 1)", ctx)
        np.testing.assert_allclose(result, 100.0 / 1.05 ** np.arange(1, 6))

    def test_discount_context_convention(self, ctx):
        """Test the model-wide discounting convention"""
        discounted = EvalContext(cycles=5, bindings=ctx.bindings, first_cycle_undiscounted=False)
        result = evaluate("discount(100, dr)", discounted)
        assert result[0] == pytest.approx(100.0 / 1.05)

    def test_combine_probs(self, ctx):
        """Test the variadic builtin"""
        assert evaluate("combine_probs(0.1, 0.2, 0.5)", ctx)[0] == pytest.approx(1 - 0.9 * 0.8 * 0.5)

    def test_named_builtin_arguments(self, ctx):
        """Test builtins called with named arguments and defaults"""
        assert evaluate("rate_to_prob(r = 0.1)", ctx)[0] == pytest.approx(1 - math.exp(-0.1))
        assert evaluate("rescale_prob(0.4, from = 5, to = 1)", ctx)[0] == pytest.approx(1 - 0.6**0.2)

    @pytest.mark.parametrize(
        "text,value",
        [
            ("exp(0)", 1.0),
            ("log(exp(2))", 2.0),
            ("sqrt(16)", 4.0),
            ("abs(-3)", 3.0),
            ("min(3, 1, 2)", 1.0),
            ("max(3, 1, 2)", 3.0),
        ],
    )
    def test_math(self, ctx, text, value):
        """Test mathematical builtins"""
        assert evaluate(text, ctx)[0] == pytest.approx(value)

    def test_min_is_element_wise(self, ctx):
        """Test min over a vector and a constant"""
        np.testing.assert_array_equal(evaluate("min(model_time, 3)", ctx), [1, 2, 3, 3, 3])

    @pytest.mark.parametrize("text", ["log(0)", "sqrt(-1)", "unknown_function(1)", "exp(1, 2)", "exp(y = 1)"])
    def test_invalid_calls(self, ctx, text):
        """Test domain errors, unknown functions and bad arguments"""
        with pytest.raises(EvaluationError):
            evaluate(text, ctx)


class TestSurvivalAndMortality:
    """Test cases for compute_surv and mortality_prob"""

    @pytest.fixture
    def survival_ctx(self, ctx):
        """Context with a Weibull(shape 1.5, scale 5) declaration and the bundled life table"""
        declaration = SurvivalDeclaration(
            "disease_surg", family="weibull", parameters=[("shape", constant(1.5)), ("scale", constant(5))]
        )
        return EvalContext(
            cycles=5,
            strategy="surg",
            bindings=ctx.bindings,
            survival={"disease_surg": declaration},
            lifetable=LifeTable.bundled(),
        )

    def test_compute_surv_first_cycle(self, survival_ctx):
        """Test p_1 = 1 - exp(-(1/5)^1.5)"""
        result = evaluate("compute_surv(disease_surg, time = model_time)", survival_ctx)
        assert result[0] == pytest.approx(1 - math.exp(-(0.2**1.5)))
        assert result[0] == pytest.approx(0.08556, abs=1e-5)

    def test_compute_surv_conditional(self, survival_ctx):
        """Test p_k = 1 - S(k) / S(k - 1)"""
        result = evaluate("compute_surv(disease_surg, time = model_time)", survival_ctx)

        def s(t):
            return math.exp(-((t / 5) ** 1.5))

        expected = [1 - s(k) / s(k - 1) for k in range(1, 6)]
        np.testing.assert_allclose(result, expected)

    def test_compute_surv_at_state_time(self, survival_ctx):
        """Test probabilities in a tunnel state are constant over model time"""
        result = evaluate("compute_surv(disease_surg, time = state_time)", survival_ctx.at_state_time(2))
        expected = 1 - math.exp(-((2 / 5) ** 1.5)) / math.exp(-((1 / 5) ** 1.5))
        np.testing.assert_allclose(result, np.full(5, expected))

    def test_compute_surv_unknown_distribution(self, survival_ctx):
        """Test that the first argument must be a declared distribution"""
        with pytest.raises(EvaluationError, match="unknown survival distribution"):
            evaluate("compute_surv(other, time = model_time)", survival_ctx)

    def test_mortality_prob(self, survival_ctx):
        """Test life-table lookup by age and sex"""
        result = evaluate("mortality_prob(age = age, sex = MLE)", survival_ctx)
        np.testing.assert_allclose(result, [0.000451] * 5)

    def test_mortality_prob_needs_sex_code(self, survival_ctx):
        """Test that the sex argument must be a sex code"""
        with pytest.raises(EvaluationError, match="sex"):
            evaluate("mortality_prob(age = age, sex = 7)", survival_ctx)

    def test_mortality_prob_without_table(self, ctx):
        """Test that mortality_prob needs a life table"""
        with pytest.raises(EvaluationError, match="life table"):
            evaluate("mortality_prob(age = age, sex = MLE)", ctx)


class TestContext:
    """Test cases for EvalContext validation"""

    def test_cycles_positive(self):
        """Test that at least one cycle is required"""
        with pytest.raises(EvaluationError):
            EvalContext(cycles=0)

    def test_binding_length(self):
        """Test that bindings must have one value per cycle"""
        with pytest.raises(EvaluationError):
            EvalContext(cycles=3, bindings={"x": np.ones(2)})

    def test_reserved_binding(self):
        """Test that reserved names cannot be bound"""
        with pytest.raises(EvaluationError):
            EvalContext(cycles=3, bindings={"model_time": np.ones(3)})
