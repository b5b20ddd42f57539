"""
Tests for survival distributions and per-cycle probabilities
"""

import math
import sys
from pathlib import Path
import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from markovcea.errors import SurvivalError
from markovcea.expr import parse_expression
from markovcea.survival import (
    SurvivalDeclaration,
    add_hazards,
    apply_af,
    apply_hr,
    apply_or,
    compute_surv,
    constant,
    fit_parametric,
    join,
    km_estimate,
    km_from_csv,
    parametric,
    pool,
    read_survival_data,
    survival_at,
)

DATA_DIR = Path(__file__).parent.parent / "markovcea" / "data"


@pytest.fixture
def weibull():
    """Fixture to provide Weibull(shape 1.5, scale 5)"""
    return parametric("weibull", shape=1.5, scale=5)


@pytest.fixture
def survival_data():
    """Fixture to provide the bundled (time, status) data"""
    return read_survival_data(DATA_DIR / "tab_surv.csv")


def weibull_sf(t, shape=1.5, scale=5.0):
    return math.exp(-((t / scale) ** shape))


class TestParametric:
    """Test cases for parametric families"""

    def test_weibull(self, weibull):
        """Test S(t) = exp(-(t / scale)^shape)"""
        np.testing.assert_allclose(weibull.survival(np.array([0.0, 1.0, 5.0])), [1.0, weibull_sf(1), math.exp(-1)])

    def test_exponential(self):
        """Test S(t) = exp(-rate t)"""
        dist = parametric("exponential", rate=0.2)
        assert survival_at(dist, 3.0) == pytest.approx(math.exp(-0.6))

    def test_lognormal(self):
        """Test that the median of a lognormal is exp(meanlog)"""
        dist = parametric("lognormal", meanlog=1.0, sdlog=0.5)
        assert survival_at(dist, math.e) == pytest.approx(0.5)

    def test_gamma_with_shape_one_is_exponential(self):
        """Test gamma(1, rate) against exponential(rate)"""
        t = np.linspace(0, 10, 11)
        np.testing.assert_allclose(
            parametric("gamma", shape=1, rate=0.3).survival(t), parametric("exponential", rate=0.3).survival(t)
        )

    def test_gompertz(self):
        """Test S(t) = exp(-(rate / shape)(exp(shape t) - 1))"""
        dist = parametric("gompertz", shape=0.1, rate=0.05)
        assert survival_at(dist, 4.0) == pytest.approx(math.exp(-(0.05 / 0.1) * (math.exp(0.4) - 1)))

    @pytest.mark.parametrize(
        "family,params",
        [
            ("weibull", {"shape": -1.0, "scale": 5.0}),
            ("weibull", {"shape": 1.5}),
            ("exponential", {"rate": 0.0}),
            ("unknown", {"rate": 1.0}),
        ],
    )
    def test_invalid_parameters(self, family, params):
        """Test rejected families and parameter values"""
        with pytest.raises(SurvivalError):
            parametric(family, **params)

    def test_negative_time(self, weibull):
        """Test that times must be non-negative"""
        with pytest.raises(SurvivalError):
            weibull.survival(np.array([-1.0]))


class TestKaplanMeier:
    """Test cases for Kaplan-Meier estimates"""

    def test_first_event(self, survival_data):
        """Test S(0.4) = 24/25 on the bundled data"""
        km = km_estimate(*survival_data)
        np.testing.assert_allclose(km.survival(np.array([0.0, 0.39, 0.4])), [1.0, 1.0, 0.96], atol=1e-12)

    def test_step_function(self, survival_data):
        """Test values between events and at follow-up end"""
        km = km_from_csv(DATA_DIR / "tab_surv.csv")
        # deaths at 0.4, 0.5 and 1.0 among 25, 24 and 23 at risk
        assert km.survival(np.array([1.0]))[0] == pytest.approx(22 / 25)
        # 15 deaths, ten censored at 10
        assert km.survival(np.array([10.0]))[0] == pytest.approx(10 / 25)

    def test_beyond_follow_up(self, survival_data):
        """Test that the estimate is not extrapolated"""
        km = km_estimate(*survival_data)
        with pytest.raises(SurvivalError, match="beyond"):
            km.survival(np.array([10.5]))

    @pytest.mark.parametrize(
        "times,status",
        [
            ([], []),
            ([1.0, 2.0], [1]),
            ([0.0, 2.0], [1, 1]),
            ([1.0, 2.0], [1, 2]),
        ],
    )
    def test_invalid_data(self, times, status):
        """Test rejected survival data"""
        with pytest.raises(SurvivalError):
            km_estimate(times, status)

    def test_data_columns(self, tmp_path):
        """Test that survival data needs time and status columns"""
        path = tmp_path / "bad.csv"
        path.write_text("t,event\n1,1\n")
        with pytest.raises(SurvivalError, match="time"):
            read_survival_data(path)

    @pytest.mark.parametrize(
        "content,message",
        [
            ("", "cannot read survival data"),
            ("time,status\nabc,1\n", "column 'time' is not numeric at row 1"),
            ("time,status\n1,1\n2,maybe\n", "column 'status' is not numeric at row 2"),
        ],
        ids=["empty", "time-text", "status-text"],
    )
    def test_malformed_data(self, tmp_path, content, message):
        """Test that malformed files raise SurvivalError naming the file"""
        path = tmp_path / "data.csv"
        path.write_text(content)
        with pytest.raises(SurvivalError, match=message) as info:
            read_survival_data(path)
        assert "data.csv" in str(info.value)

    def test_text_times(self):
        """Test that non-numeric times are rejected"""
        with pytest.raises(SurvivalError, match="numbers"):
            km_estimate(["a", "b"], [1, 0])


class TestFitting:
    """Test cases for maximum-likelihood fits"""

    def test_exponential_rate(self, survival_data):
        """Test the closed-form exponential estimate: events / total follow-up"""
        fitted = fit_parametric("exponential", *survival_data)
        assert fitted.parameter("rate") == pytest.approx(15 / 162.5, rel=1e-3)

    def test_weibull_fit(self, survival_data):
        """Test that a Weibull fit is valid and carries the Kaplan-Meier estimate"""
        fitted = fit_parametric("weibull", *survival_data)
        assert fitted.family == "weibull"
        assert fitted.parameter("shape") > 0
        assert fitted.parameter("scale") > 0
        assert fitted.km is not None
        assert fitted.km.max_time == 10.0

    def test_unsupported_family(self, survival_data):
        """Test that only some families can be fitted"""
        with pytest.raises(SurvivalError, match="cannot fit"):
            fit_parametric("gompertz", *survival_data)


class TestAlgebra:
    """Test cases for treatment effects and combinations"""

    def test_hazard_ratio(self, weibull):
        """Test S_hr(t) = S(t)^hr"""
        assert survival_at(apply_hr(weibull, 0.5), 3.0) == pytest.approx(weibull_sf(3.0) ** 0.5)

    def test_odds_ratio(self, weibull):
        """Test that the odds of the event are multiplied"""
        s = weibull_sf(3.0)
        result = float(survival_at(apply_or(weibull, 2.0), 3.0))
        assert (1 - result) / result == pytest.approx(2.0 * (1 - s) / s)

    def test_acceleration_factor(self, weibull):
        """Test S_af(t) = S(t / af)"""
        assert survival_at(apply_af(weibull, 2.0), 4.0) == pytest.approx(weibull_sf(2.0))

    @pytest.mark.parametrize("effect", [apply_hr, apply_or, apply_af])
    def test_effects_must_be_positive(self, weibull, effect):
        """Test that treatment effects must be positive"""
        with pytest.raises(SurvivalError):
            effect(weibull, 0.0)

    def test_join_is_continuous(self, weibull):
        """Test the conditional splice at the cut time"""
        first = parametric("exponential", rate=0.1)
        joined = join(first, weibull, at=3.0)
        t = np.array([2.0, np.nextafter(3.0, 0.0), 3.0, np.nextafter(3.0, 4.0), 6.0])
        values = joined.survival(t)
        assert values[0] == pytest.approx(math.exp(-0.2))
        assert values[2] == pytest.approx(math.exp(-0.3))
        assert abs(values[1] - values[2]) <= 1e-12
        assert abs(values[3] - values[2]) <= 1e-12
        assert values[4] == pytest.approx(math.exp(-0.3) * weibull_sf(6.0) / weibull_sf(3.0))

    def test_join_validation(self, weibull):
        """Test cut-time and count checks"""
        with pytest.raises(SurvivalError):
            join(weibull, at=1.0)
        with pytest.raises(SurvivalError):
            join(weibull, weibull, at=0.0)
        with pytest.raises(SurvivalError):
            join(weibull, weibull, weibull, at=[2.0, 1.0])

    def test_pool_is_a_mixture(self, weibull):
        """Test S(t) = sum of w_i S_i(t)"""
        other = parametric("exponential", rate=0.3)
        pooled = pool(weibull, other, weights=[0.25, 0.75])
        assert survival_at(pooled, np.array([2.0]))[0] == pytest.approx(0.25 * weibull_sf(2.0) + 0.75 * math.exp(-0.6))

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.0, 0.0], [1.0]])
    def test_pool_weights(self, weibull, weights):
        """Test that weights are positive, sum to one and match the curves"""
        with pytest.raises(SurvivalError):
            pool(weibull, weibull, weights=weights)

    def test_add_hazards(self):
        """Test that independent hazards add up"""
        combined = add_hazards(parametric("exponential", rate=0.1), parametric("exponential", rate=0.2))
        assert survival_at(combined, np.array([2.0]))[0] == pytest.approx(math.exp(-0.6))


def composite_trees():
    """Distribution trees built from every combinator"""
    weibull = parametric("weibull", shape=1.5, scale=5)
    exponential = parametric("exponential", rate=0.2)
    km = km_from_csv(DATA_DIR / "tab_surv.csv")
    return {
        "or": apply_or(weibull, 2.0),
        "af-of-pool": apply_af(pool(weibull, exponential, weights=[0.25, 0.75]), 1.5),
        "join-km-parametric": join(km, weibull, at=5.0),
        "add-hazards": add_hazards(weibull, parametric("exponential", rate=0.1)),
        "hr-of-join": apply_hr(join(exponential, parametric("gompertz", shape=0.1, rate=0.05), at=2.0), 0.7),
    }


TREES = composite_trees()


class TestInvariants:
    """Test cases for properties every distribution tree keeps"""

    @pytest.mark.parametrize("name", list(TREES))
    def test_monotone_within_unit_interval(self, name):
        """Test 1 >= S(t1) >= S(t2) >= 0 for t1 < t2"""
        values = TREES[name].survival(np.linspace(0.0, 10.0, 401))
        assert values[0] == pytest.approx(1.0)
        assert np.all((values >= 0.0) & (values <= 1.0))
        assert np.all(np.diff(values) <= 1e-15)

    @pytest.mark.parametrize("name", list(TREES))
    def test_product_reconstructs_survival(self, name):
        """Test prod(1 - p_k) = S(k * cycle_length) / S(0)"""
        dist = TREES[name]
        probs = compute_surv(dist, np.arange(1.0, 21.0), cycle_length=0.5)
        assert np.all((probs >= 0.0) & (probs <= 1.0))
        expected = dist.survival(np.arange(1.0, 21.0) * 0.5) / dist.survival(np.array([0.0]))[0]
        np.testing.assert_allclose(np.cumprod(1 - probs), expected, rtol=1e-10)

    def test_acceleration_factor_random_pairs(self):
        """Test apply_af(d, a) at t equals d at t / a"""
        rng = np.random.default_rng(7)
        base = TREES["af-of-pool"]
        for a, t in zip(rng.uniform(0.2, 5.0, 100), rng.uniform(0.0, 20.0, 100)):
            expected = base.survival(np.array([t / a]))[0]
            assert apply_af(base, a).survival(np.array([t]))[0] == pytest.approx(expected, rel=1e-12)

    def test_pool_of_one(self, weibull):
        """Test that a pool with all weight on one child equals that child"""
        t = np.linspace(0.0, 10.0, 11)
        np.testing.assert_allclose(pool(weibull, weights=[1.0]).survival(t), weibull.survival(t), rtol=1e-15)


class TestComputeSurv:
    """Test cases for compute_surv"""

    def test_first_cycle(self, weibull):
        """Test p_1 = 1 - exp(-0.2^1.5)"""
        assert compute_surv(weibull, np.array([1.0]))[0] == pytest.approx(0.08556, abs=1e-5)

    def test_product_reconstructs_survival(self, weibull):
        """Test that prod(1 - p_k) over k = 1..T equals S(T)"""
        probs = compute_surv(weibull, np.arange(1.0, 11.0))
        assert np.prod(1 - probs) == pytest.approx(weibull_sf(10.0))

    def test_cycle_length(self, weibull):
        """Test cycles shorter than the time unit"""
        probs = compute_surv(weibull, np.array([1.0, 2.0]), cycle_length=0.5)
        assert probs[1] == pytest.approx(1 - weibull_sf(1.0) / weibull_sf(0.5))

    def test_km_limit(self, survival_data):
        """Test that the Kaplan-Meier estimate is used before km_limit"""
        fitted = fit_parametric("weibull", *survival_data)
        probs = compute_surv(fitted, np.array([1.0, 2.0]), km_limit=5)
        assert probs[0] == pytest.approx(1 - 22 / 25)
        without = compute_surv(fitted, np.array([1.0]))
        assert without[0] == pytest.approx(1 - survival_at(fitted, 1.0))

    def test_km_limit_continuity(self, survival_data):
        """Test that probabilities after km_limit follow the parametric tail"""
        fitted = fit_parametric("weibull", *survival_data)
        probs = compute_surv(fitted, np.array([7.0]), km_limit=5)
        assert probs[0] == pytest.approx(1 - survival_at(fitted, 7.0) / survival_at(fitted, 6.0))

    def test_time_below_one(self, weibull):
        """Test that time values start at 1"""
        with pytest.raises(SurvivalError):
            compute_surv(weibull, np.array([0.0]))


class TestDeclarations:
    """Test cases for SurvivalDeclaration"""

    @staticmethod
    def scalar(expr):
        return expr.value

    def test_parametric_declaration(self):
        """Test a family with literal parameters"""
        parameters = [("shape", constant(1.5)), ("scale", constant(5))]
        declaration = SurvivalDeclaration("d", family="weibull", parameters=parameters)
        dist = declaration.build({"d": declaration}, self.scalar)
        assert survival_at(dist, 5.0) == pytest.approx(math.exp(-1))

    def test_expression_declaration(self):
        """Test survival algebra over earlier declarations"""
        base = SurvivalDeclaration("base", family="exponential", parameters=[("rate", constant(0.1))])
        treated = SurvivalDeclaration("treated", expression=parse_expression("apply_hr(base, hr = 0.5)"))
        registry = {"base": base, "treated": treated}
        assert treated.references == frozenset({"base"})
        dist = treated.build(registry, self.scalar)
        assert survival_at(dist, 2.0) == pytest.approx(math.exp(-0.1))

    def test_pool_expression(self):
        """Test pool with a c() weight vector"""
        a = SurvivalDeclaration("a", family="exponential", parameters=[("rate", constant(0.1))])
        b = SurvivalDeclaration("b", family="exponential", parameters=[("rate", constant(0.3))])
        mixed = SurvivalDeclaration("mixed", expression=parse_expression("pool(a, b, weights = c(0.5, 0.5))"))
        dist = mixed.build({"a": a, "b": b, "mixed": mixed}, self.scalar)
        assert survival_at(dist, 1.0) == pytest.approx(0.5 * math.exp(-0.1) + 0.5 * math.exp(-0.3))

    def test_dependencies(self):
        """Test that parameter names read by arguments are reported"""
        parameters = [("shape", parse_expression("shape")), ("scale", parse_expression("scale * 2"))]
        declaration = SurvivalDeclaration("d", family="weibull", parameters=parameters)
        assert declaration.dependencies == frozenset({"shape", "scale"})

    def test_circular(self):
        """Test that circular declarations are detected"""
        a = SurvivalDeclaration("a", expression=parse_expression("apply_hr(b, hr = 2)"))
        b = SurvivalDeclaration("b", expression=parse_expression("apply_hr(a, hr = 2)"))
        with pytest.raises(SurvivalError, match="circular"):
            a.build({"a": a, "b": b}, self.scalar)

    def test_not_a_distribution_expression(self):
        """Test that arithmetic is not survival algebra"""
        with pytest.raises(SurvivalError):
            SurvivalDeclaration("x", expression=parse_expression("1 + 2"))

    def test_empty_declaration(self):
        """Test that something must be declared"""
        with pytest.raises(SurvivalError):
            SurvivalDeclaration("x")
