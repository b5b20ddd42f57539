"""
Tests for PSA distributions and correlated sampling
"""

import sys
from pathlib import Path
import numpy as np
import pandas as pd
import pytest
from scipy import stats

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from markovcea.errors import SamplingError
from markovcea.sampling import Binomial, Gamma, LogNormal, Normal, Poisson, define_psa, parse_marginal, sample_psa


DISTRIBUTIONS = {
    "age_base": "normal(mean = 20, sd = 5)",
    "p_disease": "binomial(prob = 0.25, size = 500)",
    "effect": "lognormal(mean = 0.5, sd = 0.1)",
    "cost": "gamma(mean = 5000, sd = 1000)",
    "years": "poisson(mean = 9)",
    "shape": "normal(1.5, 0.2)",
    "scale": "normal(5, 1)",
}


@pytest.fixture
def psa():
    """Fixture to provide one parameter per family and a negative correlation"""
    return define_psa(DISTRIBUTIONS, [("shape", "scale", -0.5)])


@pytest.fixture(scope="module")
def large_sample():
    """Fixture to provide 10000 draws of every family"""
    return sample_psa(define_psa(DISTRIBUTIONS, [("shape", "scale", -0.5)]), 10000, seed=2024)


class TestParseMarginal:
    """Test cases for parse_marginal"""

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("normal(20, 5)", Normal(20.0, 5.0)),
            ("normal(mean = -1, sd = 2)", Normal(-1.0, 2.0)),
            ("lognormal(mean = 0.5, sd = 0.1)", LogNormal(0.5, 0.1)),
            ("gamma(5000, sd = 1000)", Gamma(5000.0, 1000.0)),
            ("binomial(prob = 0.25, size = 500)", Binomial(0.25, 500)),
            ("poisson(mean = 9)", Poisson(9.0)),
        ],
    )
    def test_families(self, text, expected):
        """Test positional and keyword arguments"""
        assert parse_marginal(text) == expected

    @pytest.mark.parametrize(
        "text",
        [
            "uniform(0, 1)",
            "normal(1)",
            "normal(1, 2, 3)",
            "normal(mean = x, sd = 1)",
            "normal(1, sd = 2, sd = 3)",
            "normal(1, -2)",
            "gamma(-5, 1)",
            "binomial(prob = 1.5, size = 10)",
            "binomial(prob = 0.5, size = 2.5)",
            "poisson(0)",
            "normal(",
            "20",
        ],
    )
    def test_invalid(self, text):
        """Test rejected distribution texts"""
        with pytest.raises(SamplingError):
            parse_marginal(text)

    def test_moments(self):
        """Test the stated mean and sd of each family"""
        assert Binomial(0.25, 100).sd == pytest.approx(np.sqrt(0.25 * 0.75 / 100))
        assert Poisson(9.0).sd == pytest.approx(3.0)
        assert LogNormal(0.5, 0.1).mean == 0.5


class TestPsaSpec:
    """Test cases for correlations and their validation"""

    def test_names_and_matrix(self, psa):
        """Test declaration order and a symmetric correlation matrix"""
        assert psa.names[0] == "age_base"
        matrix = psa.correlation_matrix()
        i, j = psa.names.index("shape"), psa.names.index("scale")
        assert matrix[i, j] == matrix[j, i] == -0.5
        np.testing.assert_array_equal(np.diag(matrix), np.ones(len(psa.names)))

    def test_not_positive_definite(self):
        """Test inconsistent pairwise correlations"""
        with pytest.raises(SamplingError, match="positive definite"):
            define_psa(
                {"a": "normal(0, 1)", "b": "normal(0, 1)", "c": "normal(0, 1)"},
                [("a", "b", 0.9), ("a", "c", 0.9), ("b", "c", -0.9)],
            )

    @pytest.mark.parametrize(
        "correlations",
        [
            [("a", "z", 0.1)],
            [("a", "a", 0.1)],
            [("a", "b", 1.5)],
            [("a", "b", 0.1), ("b", "a", 0.2)],
            [("a", "b")],
            [("a", "b", "x")],
            [("a", "b", True)],
        ],
        ids=["unknown", "self", "range", "twice", "pair", "text-coefficient", "boolean-coefficient"],
    )
    def test_invalid_correlations(self, correlations):
        """Test rejected correlation triples"""
        with pytest.raises(SamplingError):
            define_psa({"a": "normal(0, 1)", "b": "normal(0, 1)"}, correlations)

    def test_empty(self):
        """Test that a PSA needs a distribution"""
        with pytest.raises(SamplingError):
            define_psa({})


class TestSampling:
    """Test cases for sample_psa"""

    def test_frame(self, psa):
        """Test index and columns"""
        frame = sample_psa(psa, 5, seed=1)
        assert list(frame.index) == [1, 2, 3, 4, 5]
        assert frame.index.name == "draw"
        assert list(frame.columns) == psa.names

    def test_deterministic(self, psa):
        """Test that the same seed gives the same draws"""
        pd.testing.assert_frame_equal(sample_psa(psa, 20, seed=7), sample_psa(psa, 20, seed=7))
        assert not sample_psa(psa, 20, seed=7).equals(sample_psa(psa, 20, seed=8))

    def test_draws_independent_of_count(self, psa):
        """Test that draw i does not depend on how many draws are taken"""
        pd.testing.assert_frame_equal(sample_psa(psa, 5, seed=3), sample_psa(psa, 12, seed=3).head(5))

    @pytest.mark.parametrize(
        "column,mean,tolerance",
        [
            ("age_base", 20.0, 0.2),
            ("p_disease", 0.25, 0.002),
            ("effect", 0.5, 0.005),
            ("cost", 5000.0, 50.0),
            ("years", 9.0, 0.1),
        ],
    )
    def test_sample_means(self, large_sample, column, mean, tolerance):
        """Test sample means against the stated means"""
        assert large_sample[column].mean() == pytest.approx(mean, abs=tolerance)

    def test_sample_spread(self, large_sample):
        """Test sample standard deviations"""
        assert large_sample["age_base"].std() == pytest.approx(5.0, rel=0.05)
        assert large_sample["cost"].std() == pytest.approx(1000.0, rel=0.05)
        assert large_sample["effect"].std() == pytest.approx(0.1, rel=0.05)

    def test_supports(self, large_sample):
        """Test values allowed by each family"""
        assert (large_sample["cost"] > 0).all()
        assert (large_sample["effect"] > 0).all()
        np.testing.assert_allclose(large_sample["years"], np.round(large_sample["years"]))
        np.testing.assert_allclose(large_sample["p_disease"] * 500, np.round(large_sample["p_disease"] * 500))

    def test_rank_correlation(self, large_sample):
        """Test the Spearman correlation induced by the copula"""
        rho = stats.spearmanr(large_sample["shape"], large_sample["scale"])[0]
        assert -0.55 <= rho <= -0.41
        independent = stats.spearmanr(large_sample["age_base"], large_sample["cost"])[0]
        assert abs(independent) < 0.05

    @pytest.mark.parametrize("draws,seed", [(0, 1), (10, -1)])
    def test_invalid_arguments(self, psa, draws, seed):
        """Test that draws and seed are checked"""
        with pytest.raises(SamplingError):
            sample_psa(psa, draws, seed)
