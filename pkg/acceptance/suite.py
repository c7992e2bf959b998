# acceptance/suite.py
import time
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

from acceptance import criteria
from schemas.acceptance.schemas import ACCEPTANCE_COLUMNS, AcceptanceBudget, AcceptanceConfig, CriterionResult
from utils.logger import get_logger
from utils.reporting import write_csv

logger = get_logger(__name__)

CheckFn = Callable[[AcceptanceBudget, int, int], criteria.Check]

CRITERIA: Dict[int, Tuple[str, CheckFn]] = {
    1: ("load_balance_exactness", criteria.load_balance_exactness),
    2: ("balancing_efficacy", criteria.balancing_efficacy),
    3: ("z_loss_analytic", criteria.z_loss_analytic),
    4: ("gradient_suite", criteria.gradient_suite),
    5: ("mtp_decoupling", criteria.mtp_decoupling),
    6: ("mixed_loss_sft", criteria.mixed_loss_sft),
    7: ("otpo", criteria.otpo_checks),
    8: ("reward_model", criteria.reward_model),
    9: ("reference_cache", criteria.reference_cache),
    10: ("mixture_search", criteria.mixture_search),
    11: ("quantizer", criteria.quantizer),
    12: ("planner", criteria.planner),
    13: ("determinism", criteria.determinism),
}


def run_acceptance(
    config: AcceptanceConfig,
    seed: int,
    quick: bool = False,
    selected: Optional[Iterable[int]] = None,
    jobs: int = 1,
) -> List[CriterionResult]:
    """Run the selected criteria in id order. Wall time is logged but never part of the results."""
    budget = config.quick if quick else config.full
    ids = sorted(set(selected or config.criteria or CRITERIA))
    results = []
    for criterion in ids:
        name, check = CRITERIA[criterion]
        started = time.perf_counter()
        outcome = check(budget, seed, jobs)
        logger.info(
            "criterion %d %s: %s (%.1fs)",
            criterion, name, "pass" if outcome.passed else "FAIL", time.perf_counter() - started,
        )
        results.append(
            CriterionResult(
                criterion=criterion,
                name=name,
                passed=bool(outcome.passed),
                value=float(outcome.value),
                detail=outcome.detail,
            )
        )
    return results


def acceptance_rows(results: Iterable[CriterionResult]) -> List[Dict[str, object]]:
    return [result.model_dump() for result in results]


def write_acceptance(results: Iterable[CriterionResult], path: Union[str, Path]) -> Path:
    return write_csv(path, acceptance_rows(results), columns=ACCEPTANCE_COLUMNS)


def acceptance_metrics(results: Iterable[CriterionResult]) -> Dict[str, float]:
    metrics: Dict[str, float] = {}
    for result in results:
        metrics[f"criterion_{result.criterion:02d}_passed"] = int(result.passed)
        metrics[f"criterion_{result.criterion:02d}_value"] = result.value
    return metrics
