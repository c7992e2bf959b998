# mixture/search.py
"""
End-to-end mixture search: sweep proxies over sampled mixtures, fit the
regressor, pick the predicted-best mixture, then check the pick against the
sweep's own ground truth, the correlation screen and a larger model.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from core.prng import Prng
from mixture.corpus import Shard
from mixture.regressor import Regressor, fit_regressor, loss_percentile, select_mixture
from mixture.sampling import dirichlet_draws, sample_mixtures
from mixture.screening import cross_scale_spearman, screen_validation_sets
from mixture.sweep import (
    BASELINE_STREAM,
    MIXTURE_STREAM,
    POOL_STREAM,
    build_eval_streams,
    run_proxy_sweep,
    scaled_proxy,
    split_shards,
    sweep_rows,
    target_mixture,
    train_proxy,
    valid_runs,
)
from mixture.validation import validate_selection
from schemas.mixture.schemas import MixtureSpec, ProxyRun, ScreeningReport, SweepConfig, ValidationReport
from utils.logger import get_logger
from utils.reporting import write_csv, write_json

logger = get_logger(__name__)


@dataclass
class MixtureSearchResult:
    target: MixtureSpec
    runs: List[ProxyRun]
    regressor: Regressor
    chosen: MixtureSpec
    chosen_run: ProxyRun
    # fraction of sweep losses strictly below the chosen mixture's true loss
    chosen_percentile: float
    screening: ScreeningReport
    large_runs: List[ProxyRun] = field(default_factory=list)
    validation: Optional[ValidationReport] = None

    def metrics(self) -> Dict[str, float]:
        losses = [run.val_loss for run in valid_runs(self.runs)]
        metrics = {
            "n_runs": len(self.runs),
            "n_diverged": sum(run.diverged for run in self.runs),
            "regressor_train_mse": self.regressor.train_mse,
            "chosen_true_loss": self.chosen_run.val_loss,
            "chosen_percentile": self.chosen_percentile,
            "best_sweep_loss": float(np.min(losses)),
            "median_sweep_loss": float(np.median(losses)),
            "n_retained_sets": sum(e.retained for e in self.screening.entries),
        }
        if self.screening.cross_scale_spearman is not None:
            metrics["cross_scale_spearman"] = self.screening.cross_scale_spearman
        if self.validation is not None:
            metrics["validation_delta"] = self.validation.delta
            metrics["validation_passed"] = int(self.validation.passed)
        return metrics


def run_mixture_search(config: SweepConfig, shards: Sequence[Shard], seed: int, jobs: int = 1) -> MixtureSearchResult:
    n_shards = len(shards)
    train, heldout = split_shards(shards, config.heldout_fraction)
    target = target_mixture(config, n_shards, seed)
    streams = build_eval_streams(heldout, target, config.eval_tokens, seed, config.chunk_len)

    n_draws = max(1, config.n_mixtures - n_shards)
    mixtures = sample_mixtures(n_shards, n_draws, Prng(seed).split(MIXTURE_STREAM).generator())
    runs = run_proxy_sweep(mixtures, config, train, streams, seed, jobs)

    regressor = fit_regressor(runs, config.regressor, config.n_trees, config.learning_rate)
    chosen = select_mixture(regressor, config.pool_size, Prng(seed).split(POOL_STREAM).generator())
    chosen_run = train_proxy(chosen, len(mixtures), config, train, streams, seed)
    percentile = loss_percentile(chosen_run.val_loss, [run.val_loss for run in runs])
    logger.info("chosen mixture true loss %.4f, percentile %.3f", chosen_run.val_loss, percentile)

    large_runs: List[ProxyRun] = []
    spearman = None
    if config.run_cross_scale:
        shared = min(config.cross_scale_mixtures, len(mixtures))
        large_runs = run_proxy_sweep(
            mixtures[:shared],
            config,
            train,
            streams,
            seed,
            jobs,
            proxy=scaled_proxy(config.proxy, config.width_multiplier),
            width=config.width_multiplier,
        )
        spearman = cross_scale_spearman(runs[:shared], large_runs)
    screening = screen_validation_sets(runs, threshold=config.spearman_threshold, cross_scale_spearman=spearman)

    validation = None
    if config.run_validation:
        baselines = dirichlet_draws(
            n_shards, config.n_baselines, Prng(seed).split(BASELINE_STREAM).split(1).generator()
        )
        validation = validate_selection(
            chosen, baselines, scaled_proxy(config.proxy, config.width_multiplier), config, train, streams, seed
        )
    return MixtureSearchResult(
        target=target,
        runs=runs,
        regressor=regressor,
        chosen=chosen,
        chosen_run=chosen_run,
        chosen_percentile=percentile,
        screening=screening,
        large_runs=large_runs,
        validation=validation,
    )


def write_search_artifacts(result: MixtureSearchResult, out_dir: Union[str, Path]) -> None:
    """sweep.csv, screening.json, regressor.json, selection.json (and validation.json when run)."""
    out_dir = Path(out_dir)
    write_csv(out_dir / "sweep.csv", sweep_rows(result.runs))
    if result.large_runs:
        write_csv(out_dir / "sweep_large.csv", sweep_rows(result.large_runs))
    write_json(out_dir / "screening.json", result.screening.model_dump())
    write_json(out_dir / "regressor.json", result.regressor.to_dict())
    write_json(
        out_dir / "selection.json",
        {
            "target": result.target.weights,
            "chosen": result.chosen.weights,
            "chosen_true_loss": result.chosen_run.val_loss,
            "chosen_percentile": result.chosen_percentile,
        },
    )
    if result.validation is not None:
        write_json(out_dir / "validation.json", result.validation.model_dump())
