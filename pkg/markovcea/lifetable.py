"""
Local mortality lookup: annual death probability by age band and sex
"""

import logging
from importlib import resources
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd

from .errors import LifeTableError
from .models import SexCode

logger = logging.getLogger(__name__)

COLUMNS = ["age_lo", "age_hi", "sex", "prob"]
DEMO_TABLE = "lifetable_synthetic.csv"


class LifeTable:
    """
    Piecewise-constant death probabilities per sex

    Bands are lower-inclusive and upper-exclusive; an empty `age_hi` marks the
    open-ended last band.
    """

    def __init__(self, frame: pd.DataFrame):
        missing = [column for column in COLUMNS if column not in frame.columns]
        if missing:
            raise LifeTableError(f"life table is missing columns: {', '.join(missing)}")
        self._bands: Dict[SexCode, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        frame = frame[COLUMNS].copy()
        frame["sex"] = frame["sex"].astype(str).str.strip()
        for sex, rows in frame.groupby("sex", sort=False):
            try:
                code = SexCode(sex)
            except ValueError:
                raise LifeTableError(f"unknown sex code '{sex}' in life table") from None
            self._bands[code] = self._validate(code, rows)

    @staticmethod
    def _validate(code: SexCode, rows: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        for column in ("age_lo", "prob"):
            if pd.to_numeric(rows[column], errors="coerce").isna().any():
                raise LifeTableError(f"{code.value}: column '{column}' must hold numbers")
        blank = rows["age_hi"].isna() | (rows["age_hi"].astype(str).str.strip() == "")
        if pd.to_numeric(rows["age_hi"][~blank], errors="coerce").isna().any():
            raise LifeTableError(f"{code.value}: column 'age_hi' must hold numbers or be empty")
        lo = pd.to_numeric(rows["age_lo"]).to_numpy(dtype=np.float64)
        hi = pd.to_numeric(rows["age_hi"], errors="coerce").to_numpy(dtype=np.float64)
        prob = pd.to_numeric(rows["prob"]).to_numpy(dtype=np.float64)
        order = np.argsort(lo, kind="stable")
        lo, hi, prob = lo[order], hi[order], prob[order]
        if lo[0] != 0:
            raise LifeTableError(f"{code.value}: bands must start at age 0")
        if np.any(np.isnan(hi[:-1])):
            raise LifeTableError(f"{code.value}: only the last band may be open-ended")
        if np.any(hi[:-1] != lo[1:]):
            raise LifeTableError(f"{code.value}: bands must be contiguous and non-overlapping")
        if np.any(hi[~np.isnan(hi)] <= lo[~np.isnan(hi)]):
            raise LifeTableError(f"{code.value}: every band needs age_hi > age_lo")
        if np.any((prob < 0) | (prob > 1)) or np.any(np.isnan(prob)):
            raise LifeTableError(f"{code.value}: probabilities must lie in [0, 1]")
        return lo, hi, prob

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "LifeTable":
        """Read a table with columns age_lo, age_hi, sex, prob"""
        try:
            frame = pd.read_csv(path, dtype={"sex": str}, keep_default_na=False, na_values={"age_hi": [""]})
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise LifeTableError(f"cannot read life table '{path}': {exc}") from exc
        logger.debug("Loaded life table from %s (%d rows)", path, len(frame))
        try:
            return cls(frame)
        except LifeTableError as exc:
            raise LifeTableError(f"life table '{path}': {exc}") from None

    @classmethod
    def bundled(cls) -> "LifeTable":
        """Synthetic demonstration table shipped with the package (not WHO data)"""
        with resources.as_file(resources.files("markovcea") / "data" / DEMO_TABLE) as path:
            return cls.from_csv(path)

    @property
    def sexes(self) -> Tuple[SexCode, ...]:
        return tuple(self._bands)

    def mortality_prob(self, age, sex: Union[SexCode, str]) -> np.ndarray:
        """
        Death probability for each age

        Args:
            age: Ages in years (scalar or sequence)
            sex: Sex code present in the table

        Returns:
            Array of probabilities shaped like `age`
        """
        try:
            code = SexCode(sex)
        except ValueError:
            raise LifeTableError(f"unknown sex code '{sex}'") from None
        if code not in self._bands:
            raise LifeTableError(f"sex code '{code.value}' is not present in the life table")
        lo, hi, prob = self._bands[code]
        age = np.asarray(age, dtype=np.float64)
        if np.any(age < 0) or np.any(np.isnan(age)):
            raise LifeTableError("ages must be >= 0")
        index = np.searchsorted(lo, age, side="right") - 1
        upper = hi[index]
        beyond = ~np.isnan(upper) & (age >= upper)
        if np.any(beyond):
            raise LifeTableError(f"age {age[beyond].max():g} is beyond the life table coverage")
        return prob[index]


def mortality_prob(table: LifeTable, age, sex: Union[SexCode, str]) -> np.ndarray:
    """Functional form of `LifeTable.mortality_prob`"""
    return table.mortality_prob(age, sex)
