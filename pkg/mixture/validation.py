# mixture/validation.py
from typing import Dict, Sequence

import numpy as np

from core.prng import Prng
from mixture.corpus import Shard
from mixture.sweep import BASELINE_STREAM, train_proxy
from schemas.mixture.schemas import MixtureSpec, SweepConfig, ValidationReport
from schemas.moe.schemas import MoEConfig
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

# every validation model shares one run stream, so chosen and baselines start from the same weights
VALIDATION_INDEX = 0


def validate_selection(
    chosen: MixtureSpec,
    baselines: Sequence[MixtureSpec],
    larger: MoEConfig,
    config: SweepConfig,
    shards: Sequence[Shard],
    streams: Dict[str, np.ndarray],
    seed: int,
) -> ValidationReport:
    """
    Train the larger model on ``chosen`` and on each random baseline with identical
    seeds; passes when the chosen loss is at most the median baseline loss.
    """
    require(len(baselines) >= 1, LabErrorReason.EMPTY_INPUT, "no baseline mixtures")
    run_seed = int(Prng(seed).split(BASELINE_STREAM).generator().integers(0, 2 ** 63 - 1))

    def loss_of(mixture: MixtureSpec) -> float:
        run = train_proxy(
            mixture, VALIDATION_INDEX, config, shards, streams, run_seed, larger, steps=config.validation_steps
        )
        return run.val_loss

    chosen_loss = loss_of(chosen)
    baseline_losses = [loss_of(m) for m in baselines]
    median = float(np.median(baseline_losses))
    delta = chosen_loss - median
    passed = bool(np.isfinite(chosen_loss) and delta <= 0.0)
    logger.info("validation: chosen %.4f vs median baseline %.4f (delta %.4f)", chosen_loss, median, delta)
    return ValidationReport(
        chosen=chosen,
        chosen_loss=chosen_loss,
        baseline_losses=baseline_losses,
        median_baseline_loss=median,
        delta=delta,
        passed=passed,
    )
