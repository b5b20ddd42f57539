"""
CSV reports with fixed headers and the plain-text summary blocks printed by the CLI
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from .engine import RunResult
from .errors import AnalysisError
from .models import DominanceKind, FrontierResult, StrategyTotals
from .uncertainty import HeterogeneityResult, PsaResult, PsaSummary, ceac, evpi, export_psa, psa_plane

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

COUNTS_COLUMNS = ["strategy", "cycle", "state", "count"]
VALUES_COLUMNS = ["strategy", "cycle", "value_name", "amount"]
TOTALS_COLUMNS = ["strategy", "value_name", "total"]
FRONTIER_COLUMNS = ["strategy", "status", "reference", "cost_diff", "effect_diff", "icer"]
HETEROGENEITY_COLUMNS = ["row", "weight", "strategy", "cost", "effect"]

DOMINANCE_TEXT = {DominanceKind.STRICT: "strictly dominated", DominanceKind.EXTENDED: "extendedly dominated"}


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write without index, with shortest round-trip float text and LF line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


# Long tables


def counts_table(result: RunResult) -> pd.DataFrame:
    """State membership a_0..a_T of every strategy"""
    frames = []
    for run in result.runs.values():
        frame = run.counts.reset_index().melt(id_vars="cycle", var_name="state", value_name="count")
        frame.insert(0, "strategy", run.strategy)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)[COUNTS_COLUMNS]


def values_table(result: RunResult) -> pd.DataFrame:
    """Per-cycle totals of every state value"""
    frames = []
    for run in result.runs.values():
        frame = run.values.reset_index().melt(id_vars="cycle", var_name="value_name", value_name="amount")
        frame.insert(0, "strategy", run.strategy)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)[VALUES_COLUMNS]


def totals_table(result: RunResult) -> pd.DataFrame:
    rows = [
        {"strategy": run.strategy, "value_name": name, "total": total}
        for run in result.runs.values()
        for name, total in run.totals.values.items()
    ]
    return pd.DataFrame(rows, columns=TOTALS_COLUMNS)


def frontier_table(totals: Sequence[StrategyTotals], frontier: FrontierResult) -> pd.DataFrame:
    """Frontier members in effect order, then dominated strategies with their dominance kind"""
    by_name = {t.strategy: t for t in totals}
    rows = []
    for i, name in enumerate(frontier.frontier):
        row = {"strategy": name, "status": "frontier", "reference": "", "cost_diff": np.nan}
        row.update({"effect_diff": np.nan, "icer": np.nan})
        if i > 0:
            step = frontier.steps[i - 1]
            row.update(
                {
                    "reference": step.reference,
                    "cost_diff": step.cost_diff,
                    "effect_diff": step.effect_diff,
                    "icer": step.icer,
                }
            )
        rows.append(row)
    for dominated in frontier.dominated:
        target, reference = by_name[dominated.strategy], by_name[dominated.by]
        rows.append(
            {
                "strategy": dominated.strategy,
                "status": dominated.kind.value,
                "reference": dominated.by,
                "cost_diff": target.cost - reference.cost,
                "effect_diff": target.effect - reference.effect,
                "icer": np.nan,
            }
        )
    return pd.DataFrame(rows, columns=FRONTIER_COLUMNS)


def read_totals(path: Union[str, Path], cost: str, effect: str) -> List[StrategyTotals]:
    """
    Re-read a totals.csv into StrategyTotals

    Args:
        path: File written by `write_run_reports`
        cost: Value name holding costs
        effect: Value name holding effects

    Returns:
        Totals in the file's strategy order
    """
    table = pd.read_csv(path, float_precision="round_trip", dtype={"strategy": str, "value_name": str})
    missing = [column for column in TOTALS_COLUMNS if column not in table.columns]
    if missing:
        raise AnalysisError(f"'{path}' is missing columns: {', '.join(missing)}")
    totals = []
    for name, rows in table.groupby("strategy", sort=False):
        values = dict(zip(rows["value_name"], rows["total"].astype(float)))
        for key in (cost, effect):
            if key not in values:
                raise AnalysisError(f"'{path}': strategy '{name}' has no '{key}' total")
        totals.append(StrategyTotals(strategy=name, cost=values[cost], effect=values[effect], values=values))
    return totals


# Writers per subcommand


def write_run_reports(
    result: RunResult, out_dir: Union[str, Path], thresholds: Sequence[float] = ()
) -> Dict[str, Path]:
    """counts.csv, values.csv, totals.csv and frontier.csv (plus nmb.csv when thresholds are given)"""
    out_dir = Path(out_dir)
    paths = {
        "counts": write_csv(counts_table(result), out_dir / "counts.csv"),
        "values": write_csv(values_table(result), out_dir / "values.csv"),
        "totals": write_csv(totals_table(result), out_dir / "totals.csv"),
        "frontier": write_csv(frontier_table(result.totals(), result.frontier()), out_dir / "frontier.csv"),
    }
    if thresholds:
        paths["nmb"] = write_csv(result.nmb(thresholds), out_dir / "nmb.csv")
    return paths


def write_dsa_reports(table: pd.DataFrame, out_dir: Union[str, Path]) -> Dict[str, Path]:
    return {"dsa": write_csv(table, Path(out_dir) / "dsa.csv")}


def write_psa_reports(
    result: PsaResult, out_dir: Union[str, Path], thresholds: Sequence[float]
) -> Dict[str, Path]:
    """psa.csv, ceac.csv, evpi.csv and psa_plane.csv"""
    out_dir = Path(out_dir)
    return {
        "psa": write_csv(export_psa(result), out_dir / "psa.csv"),
        "ceac": write_csv(ceac(result, thresholds), out_dir / "ceac.csv"),
        "evpi": write_csv(evpi(result, thresholds), out_dir / "evpi.csv"),
        "psa_plane": write_csv(psa_plane(result), out_dir / "psa_plane.csv"),
    }


def write_heterogeneity_reports(result: HeterogeneityResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    return {"heterogeneity": write_csv(result.rows[HETEROGENEITY_COLUMNS], Path(out_dir) / "heterogeneity.csv")}


# Summary text


def _format_number(value: float) -> str:
    return f"{value:.7g}"


def _block(title: str, body: str) -> str:
    return f"{title}:\n\n{body}\n"


def _frontier_blocks(frontier: FrontierResult, per: float) -> List[str]:
    blocks = [_block("Efficiency frontier", " -> ".join(frontier.frontier))]
    if frontier.dominated:
        lines = [f"{d.strategy} ({DOMINANCE_TEXT[d.kind]} by {d.by})" for d in frontier.dominated]
        blocks.append(_block("Dominated strategies", "\n".join(lines)))
    if frontier.steps:
        table = pd.DataFrame(
            {
                "Cost Diff.": [step.cost_diff / per for step in frontier.steps],
                "Effect Diff.": [step.effect_diff / per for step in frontier.steps],
                "ICER": [step.icer for step in frontier.steps],
                "Ref.": [step.reference for step in frontier.steps],
            },
            index=[step.strategy for step in frontier.steps],
        )
        blocks.append(_block("Differences", table.to_string(float_format=_format_number)))
    return blocks


def _nmb_block(totals: Sequence[StrategyTotals], nmb_table: pd.DataFrame, per: float) -> str:
    table = nmb_table.pivot(index="strategy", columns="lambda", values="difference") / per
    table = table.loc[[t.strategy for t in totals]]
    table.columns = [f"{value:g}" for value in table.columns]
    table.index.name = None
    return _block("Net monetary benefit difference", table.to_string(float_format=lambda v: f"{v:.3f}"))


def format_run_summary(result: RunResult, initial: Dict[str, float], thresholds: Sequence[float] = ()) -> str:
    """
    Plain-text summary of a deterministic run

    Values are whole-cohort totals; NMB differences and frontier differences are per
    person (divided by the initial cohort size).
    """
    totals = result.totals()
    per = result.cohort_size if result.cohort_size > 0 else 1.0
    counts = "\n".join(f"{state} = {_format_number(count)}" for state, count in initial.items())
    blocks = [
        f"{len(totals)} strategies run for {result.cycles} cycles.\n",
        _block("Initial state counts", counts),
        f"Counting method: '{result.method.value}'.\n",
        _block("Values", result.totals_frame().to_string(float_format=_format_number)),
    ]
    if thresholds:
        blocks.append(_nmb_block(totals, result.nmb(thresholds), per))
    blocks.extend(_frontier_blocks(result.frontier(), per))
    return "\n".join(blocks)


def format_psa_summary(summary: PsaSummary, draws: int, cohort_size: float) -> str:
    """Mean-based summary of a PSA"""
    per = cohort_size if cohort_size > 0 else 1.0
    frame = pd.DataFrame({t.strategy: t.values or {"cost": t.cost, "effect": t.effect} for t in summary.totals}).T
    blocks = [
        f"{len(summary.totals)} strategies run for {draws} PSA draws.\n",
        _block("Mean values", frame.to_string(float_format=_format_number)),
    ]
    blocks.extend(_frontier_blocks(summary.frontier, per))
    return "\n".join(blocks)


def format_heterogeneity_summary(result: HeterogeneityResult, cohort_size: float) -> str:
    """Weighted-mean summary of a heterogeneity analysis, with min/mean/max per strategy"""
    per = cohort_size if cohort_size > 0 else 1.0
    rows = result.rows["row"].nunique()
    frame = pd.DataFrame({t.strategy: t.values for t in result.totals}).T
    spread = result.spread.copy()
    spread.columns = [f"{value} {stat}" for value, stat in spread.columns]
    blocks = [
        f"{len(result.totals)} strategies run for {rows} population rows.\n",
        _block("Weighted values", frame.to_string(float_format=_format_number)),
        _block("Distribution across rows", spread.to_string(float_format=_format_number)),
    ]
    blocks.extend(_frontier_blocks(result.frontier, per))
    return "\n".join(blocks)


def format_dsa_summary(table: pd.DataFrame) -> str:
    """Cost and effect range per parameter and strategy (tornado order: widest cost range first)"""
    ok = table[table["error"] == ""]
    if ok.empty:
        return _block("DSA", "every run failed")
    grouped = ok.groupby(["strategy", "parameter"], sort=False).agg(
        cost_low=("cost", "min"),
        cost_high=("cost", "max"),
        effect_low=("effect", "min"),
        effect_high=("effect", "max"),
    )
    grouped["cost_range"] = grouped["cost_high"] - grouped["cost_low"]
    grouped = grouped.sort_values(["strategy", "cost_range"], ascending=[True, False], kind="stable")
    failed = len(table) - len(ok)
    body = grouped.to_string(float_format=_format_number)
    if failed:
        body += f"\n\n{failed} run(s) failed; see the error column of dsa.csv"
    return _block("DSA ranges", body)
