# quantization/experiment.py
"""Naive vs expert-aware quantization of one model, reported per evaluation slice."""
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from core.prng import Prng
from mixture.corpus import Shard
from models.moe.trainer import train_lm
from models.moe.transformer import MoETransformer
from quantization.quantize import QuantizationResult, expert_aware_quantize, naive_quantize
from quantization.report import report_error
from quantization.skew import (
    COMMON_TOKENS,
    RARE_TOKENS,
    build_skewed_model,
    skewed_calibration_set,
    skewed_eval_slices,
    token_sequences,
)
from schemas.moe.schemas import MoEConfig, PretrainConfig
from schemas.quantization.schemas import ErrorReport, QuantizeConfig
from schemas.synthetic.schemas import SyntheticConfig
from synthetic.generators import in_memory_shards
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class QuantizeExperiment:
    naive: QuantizationResult
    aware: QuantizationResult
    naive_report: ErrorReport
    aware_report: ErrorReport

    def metrics(self) -> Dict[str, float]:
        metrics = {
            "aware_min_expert_count": self.aware.stats.min_count(),
            "naive_min_expert_count": self.naive.stats.min_count(),
            "calibration_sequences_added": self.aware.balanced.n_added if self.aware.balanced else 0,
        }
        for label, report in (("naive", self.naive_report), ("aware", self.aware_report)):
            for row in report.rows:
                metrics[f"{label}_{row.slice}_{row.metric}_delta"] = row.delta
        return metrics

    def comparison_rows(self) -> List[Dict[str, object]]:
        aware = self.aware_report.by_slice()
        return [
            {
                "slice": row.slice,
                "metric": row.metric,
                "naive_delta": row.delta,
                "aware_delta": aware[row.slice].delta,
            }
            for row in self.naive_report.rows
        ]


def _sequences_from_stream(stream: np.ndarray, n: int, length: int, rng: np.random.Generator) -> List[np.ndarray]:
    starts = rng.integers(0, stream.size - length + 1, size=n)
    return [stream[s: s + length] for s in starts]


def trained_setup(
    config: QuantizeConfig, seed: int
) -> Tuple[MoETransformer, List[np.ndarray], List[np.ndarray], Dict[str, np.ndarray]]:
    """A small MoE pretrained on synthetic shards; one evaluation slice per shard."""
    prng = Prng(seed)
    shards: List[Shard] = in_memory_shards(SyntheticConfig(n_shards=4, n_tokens=20_000), seed)
    rng = prng.split(0).generator()
    model = MoETransformer(MoEConfig(max_seq_len=max(config.seq_len, 16)), prng.split(1), name="trained")
    stream = np.concatenate([s.tokens for s in shards])
    train_lm(
        model,
        stream,
        PretrainConfig(steps=config.pretrain_steps, seq_len=config.seq_len, log_every=max(1, config.pretrain_steps)),
        prng.split(2),
    )
    per_shard = max(1, config.calibration_sequences // len(shards))
    calibration = [seq for s in shards for seq in _sequences_from_stream(s.tokens, per_shard, config.seq_len, rng)]
    pool_per_shard = max(1, config.pool_sequences // len(shards))
    pool = [seq for s in shards for seq in _sequences_from_stream(s.tokens, pool_per_shard, config.seq_len, rng)]
    pool = [pool[i] for i in rng.permutation(len(pool))]
    slices = {
        s.label: np.stack(_sequences_from_stream(s.tokens, config.eval_sequences, config.seq_len, rng))
        for s in shards
    }
    return model, calibration, pool, slices


def skewed_setup(
    config: QuantizeConfig, seed: int
) -> Tuple[MoETransformer, List[np.ndarray], List[np.ndarray], Dict[str, np.ndarray]]:
    rng = Prng(seed).split(3).generator()
    model = build_skewed_model(seed, max_seq_len=max(config.seq_len, 16))
    calibration = skewed_calibration_set(config.calibration_sequences, config.seq_len, config.rare_fraction, rng)
    n_rare_pool = max(1, config.pool_sequences // 2)
    pool = token_sequences(COMMON_TOKENS, config.pool_sequences - n_rare_pool, config.seq_len, rng) + token_sequences(
        RARE_TOKENS, n_rare_pool, config.seq_len, rng
    )
    pool = [pool[i] for i in rng.permutation(len(pool))]
    slices = skewed_eval_slices(config.eval_sequences, config.seq_len, rng)
    return model, calibration, pool, slices


def run_quantize_experiment(config: QuantizeConfig, seed: int) -> QuantizeExperiment:
    setup = skewed_setup if config.model == "skewed" else trained_setup
    model, calibration, pool, slices = setup(config, seed)
    naive = naive_quantize(model, calibration)
    aware = expert_aware_quantize(model, calibration, pool, config.tau, config.alpha)
    experiment = QuantizeExperiment(
        naive=naive,
        aware=aware,
        naive_report=report_error(model, naive.qmodel, slices, config.metric),
        aware_report=report_error(model, aware.qmodel, slices, config.metric),
    )
    for row in experiment.comparison_rows():
        logger.info("%s %s: naive %.4g, expert-aware %.4g", row["slice"], row["metric"], row["naive_delta"], row["aware_delta"])
    return experiment
