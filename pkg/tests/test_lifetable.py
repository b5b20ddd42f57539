"""
Tests for life tables
"""

import sys
from pathlib import Path
import numpy as np
import pandas as pd
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from markovcea.errors import LifeTableError
from markovcea.lifetable import LifeTable, mortality_prob
from markovcea.models import SexCode


@pytest.fixture
def small_table():
    """Fixture to provide a two-band table for one sex"""
    return LifeTable(
        pd.DataFrame(
            {
                "age_lo": [0, 50],
                "age_hi": [50, np.nan],
                "sex": ["FMLE", "FMLE"],
                "prob": [0.01, 0.1],
            }
        )
    )


class TestBundledTable:
    """Test cases for the bundled demonstration table"""

    def test_sexes(self):
        """Test that every sex code is present"""
        assert set(LifeTable.bundled().sexes) == set(SexCode)

    def test_lookup(self):
        """Test band lookup with lower-inclusive bounds"""
        table = LifeTable.bundled()
        np.testing.assert_allclose(table.mortality_prob([20, 24.9], "MLE"), [0.000451, 0.000451])
        assert table.mortality_prob(19.99, SexCode.MALE) == pytest.approx(0.000290)

    def test_open_last_band(self):
        """Test that the last band covers every older age"""
        table = LifeTable.bundled()
        assert table.mortality_prob(120, "MLE") == pytest.approx(0.137398)

    def test_probabilities_increase_with_age(self):
        """Test that adult mortality grows with age"""
        table = LifeTable.bundled()
        probs = table.mortality_prob(np.arange(10, 90, 5), "BTSX")
        assert np.all(np.diff(probs) >= 0)


class TestLookup:
    """Test cases for lookups outside coverage"""

    def test_functional_form(self, small_table):
        """Test mortality_prob(table, age, sex)"""
        np.testing.assert_allclose(mortality_prob(small_table, [0, 49, 50, 99], "FMLE"), [0.01, 0.01, 0.1, 0.1])

    def test_missing_sex(self, small_table):
        """Test a sex code absent from the table"""
        with pytest.raises(LifeTableError, match="not present"):
            small_table.mortality_prob(30, "MLE")

    def test_unknown_sex(self, small_table):
        """Test a value that is not a sex code"""
        with pytest.raises(LifeTableError, match="unknown sex code"):
            small_table.mortality_prob(30, "X")

    def test_negative_age(self, small_table):
        """Test that ages must be non-negative"""
        with pytest.raises(LifeTableError):
            small_table.mortality_prob(-1, "FMLE")

    def test_beyond_closed_table(self):
        """Test ages past a closed last band"""
        table = LifeTable(pd.DataFrame({"age_lo": [0], "age_hi": [10], "sex": ["MLE"], "prob": [0.1]}))
        with pytest.raises(LifeTableError, match="beyond"):
            table.mortality_prob(np.array([5.0, 10.0]), "MLE")


class TestValidation:
    """Test cases for malformed tables"""

    @pytest.mark.parametrize(
        "frame",
        [
            pd.DataFrame({"age_lo": [5], "age_hi": [np.nan], "sex": ["MLE"], "prob": [0.1]}),
            pd.DataFrame({"age_lo": [0, 10], "age_hi": [5, np.nan], "sex": ["MLE", "MLE"], "prob": [0.1, 0.2]}),
            pd.DataFrame({"age_lo": [0, 5], "age_hi": [np.nan, np.nan], "sex": ["MLE", "MLE"], "prob": [0.1, 0.2]}),
            pd.DataFrame({"age_lo": [0], "age_hi": [np.nan], "sex": ["MLE"], "prob": [1.5]}),
            pd.DataFrame({"age_lo": [0], "age_hi": [np.nan], "sex": ["XX"], "prob": [0.1]}),
            pd.DataFrame({"age_lo": [0], "sex": ["MLE"], "prob": [0.1]}),
        ],
        ids=["not-from-zero", "gap", "open-middle", "prob-above-one", "unknown-sex", "missing-column"],
    )
    def test_invalid_tables(self, frame):
        """Test that invalid tables are rejected"""
        with pytest.raises(LifeTableError):
            LifeTable(frame)

    def test_from_csv(self, tmp_path):
        """Test reading a CSV with an empty upper bound"""
        path = tmp_path / "table.csv"
        path.write_text("age_lo,age_hi,sex,prob\n0,40,BTSX,0.002\n40,,BTSX,0.05\n")
        table = LifeTable.from_csv(path)
        assert table.mortality_prob(45, "BTSX") == pytest.approx(0.05)

    def test_from_missing_csv(self, tmp_path):
        """Test that unreadable files raise LifeTableError"""
        with pytest.raises(LifeTableError):
            LifeTable.from_csv(tmp_path / "missing.csv")

    @pytest.mark.parametrize(
        "content,message",
        [
            ("", "cannot read life table"),
            ("age_lo,age_hi,sex,prob\n0,,MLE,abc\n", "column 'prob'"),
            ("age_lo,age_hi,sex,prob\n0,forty,MLE,0.1\n40,,MLE,0.2\n", "column 'age_hi'"),
        ],
        ids=["empty", "prob-text", "age-text"],
    )
    def test_malformed_csv(self, tmp_path, content, message):
        """Test that malformed files raise LifeTableError naming the file"""
        path = tmp_path / "table.csv"
        path.write_text(content)
        with pytest.raises(LifeTableError, match=message) as info:
            LifeTable.from_csv(path)
        assert "table.csv" in str(info.value)
