"""
Deterministic decision outputs: ICERs, dominance, efficiency frontier and net monetary benefit
"""

import logging
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .errors import AnalysisError
from .models import DominanceKind, DominatedStrategy, FrontierResult, FrontierStep, StrategyTotals

logger = logging.getLogger(__name__)

NMB_TIE_TOLERANCE = 1e-9


def icer(reference: StrategyTotals, candidate: StrategyTotals) -> float:
    """
    Incremental cost-effectiveness ratio of `candidate` versus `reference`

    Returns:
        (C_candidate - C_reference) / (E_candidate - E_reference)

    Raises:
        AnalysisError: when both strategies have the same effect
    """
    return icer_from_differences(candidate.cost - reference.cost, candidate.effect - reference.effect)


def icer_from_differences(cost_diff: float, effect_diff: float) -> float:
    if effect_diff == 0:
        raise AnalysisError("ICER undefined: strategies have equal effects")
    return cost_diff / effect_diff


def _dominator(index: int, totals: Sequence[StrategyTotals]) -> int:
    """Model-order index of a strategy dominating totals[index], or -1"""
    target = totals[index]
    for j, other in enumerate(totals):
        if j == index:
            continue
        if other.cost <= target.cost and other.effect >= target.effect:
            # identical results: the earlier strategy is kept
            if other.cost < target.cost or other.effect > target.effect or j < index:
                return j
    return -1


def efficiency_frontier(totals: Sequence[StrategyTotals]) -> FrontierResult:
    """
    Non-dominated strategies with their incremental ratios

    Strategies are sorted by effect (then cost), strictly dominated ones are removed,
    then any strategy whose ICER is not lower than the next one's is removed until
    ICERs strictly increase.

    Args:
        totals: Cost and effect of each strategy, in model order

    Returns:
        FrontierResult ordered from least to most effective
    """
    if not totals:
        raise AnalysisError("efficiency frontier needs at least one strategy")
    names = [t.strategy for t in totals]
    if len(set(names)) != len(names):
        raise AnalysisError("strategy names must be unique")

    dominated: List[DominatedStrategy] = []
    order = sorted(range(len(totals)), key=lambda i: (totals[i].effect, totals[i].cost, i))
    frontier: List[StrategyTotals] = []
    for i in order:
        j = _dominator(i, totals)
        if j >= 0:
            dominated.append(DominatedStrategy(strategy=names[i], kind=DominanceKind.STRICT, by=names[j]))
        else:
            frontier.append(totals[i])

    removed = True
    while removed:
        removed = False
        for k in range(1, len(frontier) - 1):
            before = icer(frontier[k - 1], frontier[k])
            after = icer(frontier[k], frontier[k + 1])
            if before >= after:
                logger.debug("%s is extendedly dominated (ICER %.6g >= %.6g)", frontier[k].strategy, before, after)
                dominated.append(
                    DominatedStrategy(
                        strategy=frontier[k].strategy, kind=DominanceKind.EXTENDED, by=frontier[k + 1].strategy
                    )
                )
                del frontier[k]
                removed = True
                break

    steps = [
        FrontierStep(
            strategy=current.strategy,
            reference=previous.strategy,
            cost_diff=current.cost - previous.cost,
            effect_diff=current.effect - previous.effect,
            icer=icer(previous, current),
        )
        for previous, current in zip(frontier, frontier[1:])
    ]
    return FrontierResult(frontier=[t.strategy for t in frontier], steps=steps, dominated=dominated)


def _preference(totals: Sequence[StrategyTotals]) -> np.ndarray:
    """Tie-break rank: frontier position first, then model order"""
    frontier = efficiency_frontier(totals).frontier
    rank = np.empty(len(totals))
    for i, t in enumerate(totals):
        rank[i] = frontier.index(t.strategy) if t.strategy in frontier else len(totals) + i
    return rank


def nmb(totals: Sequence[StrategyTotals], thresholds: Sequence[float]) -> pd.DataFrame:
    """
    Net monetary benefit λ·E − C for every strategy and willingness-to-pay threshold

    Args:
        totals: Cost and effect of each strategy
        thresholds: Willingness-to-pay values λ >= 0

    Returns:
        Long DataFrame with columns lambda, strategy, nmb, difference, best where
        `difference` is best-minus-strategy NMB (0 for the best strategy)
    """
    thresholds = [float(value) for value in thresholds]
    if any(value < 0 for value in thresholds):
        raise AnalysisError("willingness-to-pay thresholds must be >= 0")
    rank = _preference(totals)
    cost = np.array([t.cost for t in totals])
    effect = np.array([t.effect for t in totals])
    rows = []
    for value in thresholds:
        benefit = value * effect - cost
        best = best_index(benefit, rank)
        for i, t in enumerate(totals):
            rows.append(
                {
                    "lambda": value,
                    "strategy": t.strategy,
                    "nmb": benefit[i],
                    "difference": benefit[best] - benefit[i],
                    "best": i == best,
                }
            )
    return pd.DataFrame(rows, columns=["lambda", "strategy", "nmb", "difference", "best"])


def best_index(benefit: np.ndarray, rank: np.ndarray) -> int:
    """Index of the highest benefit; near-ties go to the lowest rank"""
    top = benefit.max()
    tied = np.flatnonzero(np.isclose(benefit, top, rtol=NMB_TIE_TOLERANCE, atol=NMB_TIE_TOLERANCE))
    return int(tied[np.argmin(rank[tied])])


def best_strategies(totals: Sequence[StrategyTotals], thresholds: Sequence[float]) -> Dict[float, str]:
    """Strategy with the highest NMB at each threshold"""
    frame = nmb(totals, thresholds)
    best = frame[frame["best"]]
    return dict(zip(best["lambda"], best["strategy"]))
