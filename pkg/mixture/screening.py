# mixture/screening.py
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from mixture.sweep import BENCHMARK_STREAM, valid_runs
from schemas.mixture.schemas import ProxyRun, ScreeningEntry, ScreeningReport
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

MIN_SCREENING_RUNS = 10


def correlate(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """(Pearson, Spearman); a constant input has no correlation and scores 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    require(x.shape == y.shape, LabErrorReason.SHAPE_MISMATCH, "paired samples differ in length")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, 0.0
    pearson = float(stats.pearsonr(x, y)[0])
    spearman = float(stats.spearmanr(x, y)[0])
    return pearson, spearman


def screen_validation_sets(
    runs: Sequence[ProxyRun],
    candidates: Optional[Sequence[str]] = None,
    benchmark: str = BENCHMARK_STREAM,
    threshold: float = 0.7,
    cross_scale_spearman: Optional[float] = None,
) -> ScreeningReport:
    """
    Correlate each candidate validation set's loss with the benchmark loss across
    mixtures; sets with |Spearman| >= threshold are retained.
    """
    usable = [run for run in valid_runs(runs) if benchmark in run.eval_losses]
    require(
        len(usable) >= MIN_SCREENING_RUNS,
        LabErrorReason.TOO_FEW_RUNS,
        f"screening needs {MIN_SCREENING_RUNS} runs, got {len(usable)}",
        n_runs=len(usable),
    )
    names = candidates
    if names is None:
        names = sorted(set(usable[0].eval_losses) - {benchmark})
    bench = [run.eval_losses[benchmark] for run in usable]
    entries = []
    for name in names:
        pearson, spearman = correlate([run.eval_losses[name] for run in usable], bench)
        entries.append(
            ScreeningEntry(name=name, pearson=pearson, spearman=spearman, retained=abs(spearman) >= threshold)
        )
        logger.debug("screen %s: pearson=%.3f spearman=%.3f", name, pearson, spearman)
    logger.info("%d of %d validation sets retained", sum(e.retained for e in entries), len(entries))
    return ScreeningReport(
        threshold=threshold,
        n_runs=len(usable),
        entries=entries,
        cross_scale_spearman=cross_scale_spearman,
    )


def cross_scale_spearman(small: Sequence[ProxyRun], large: Sequence[ProxyRun]) -> float:
    """Spearman between small- and large-proxy losses on the mixtures both sweeps trained."""
    small_by_index: Dict[int, float] = {run.index: run.val_loss for run in valid_runs(small)}
    large_by_index: Dict[int, float] = {run.index: run.val_loss for run in valid_runs(large)}
    shared = sorted(set(small_by_index) & set(large_by_index))
    require(len(shared) >= 2, LabErrorReason.TOO_FEW_RUNS, "cross-scale check needs two shared mixtures")
    _, spearman = correlate([small_by_index[i] for i in shared], [large_by_index[i] for i in shared])
    return spearman
