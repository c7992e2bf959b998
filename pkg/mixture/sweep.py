# mixture/sweep.py
"""
Proxy sweeps: one tiny MoE model trained per candidate mixture, scored on a
fixed held-out target stream and on every named evaluation stream.

Every run draws its randomness from ``Prng(seed).split(index)`` so the result
of a run does not depend on which worker executes it or in which order.
"""
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.prng import Prng
from mixture.corpus import Shard, build_proxy_corpus
from models.moe.trainer import evaluate_loss, train_lm
from models.moe.transformer import MoETransformer
from schemas.mixture.schemas import MixtureSpec, ProxyRun, SweepConfig
from schemas.moe.schemas import MoEConfig, PretrainConfig
from utils.exceptions import LabError, LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

TARGET_STREAM = "target"
BENCHMARK_STREAM = "benchmark"

# streams of the base seed, kept apart from the per-run streams
MIXTURE_STREAM = 1 << 20
TARGET_MIXTURE_STREAM = MIXTURE_STREAM + 1
EVAL_STREAM = MIXTURE_STREAM + 2
POOL_STREAM = MIXTURE_STREAM + 3
BASELINE_STREAM = MIXTURE_STREAM + 4

# worker-process state, filled by the pool initializer
_WORKER: Dict[str, object] = {}


def split_shards(shards: Sequence[Shard], heldout_fraction: float) -> Tuple[List[Shard], List[Shard]]:
    """Train and held-out parts of every shard; the held-out tail never reaches a proxy."""
    train, heldout = [], []
    for shard in shards:
        cut = int(round(shard.tokens.size * (1.0 - heldout_fraction)))
        require(
            0 < cut < shard.tokens.size,
            LabErrorReason.EMPTY_INPUT,
            f"shard {shard.id} too small to hold out {heldout_fraction:.2f}",
        )
        train.append(Shard(shard.id, shard.tokens[:cut], shard.label))
        heldout.append(Shard(shard.id, shard.tokens[cut:], shard.label))
    return train, heldout


def target_mixture(config: SweepConfig, n_shards: int, seed: int) -> MixtureSpec:
    if config.target_weights is not None:
        require(
            len(config.target_weights) == n_shards,
            LabErrorReason.CONFIG_ERROR,
            f"target_weights has {len(config.target_weights)} entries for {n_shards} shards",
        )
        return MixtureSpec(weights=config.target_weights)
    weights = Prng(seed).split(TARGET_MIXTURE_STREAM).generator().dirichlet(np.ones(n_shards))
    return MixtureSpec(weights=(weights / weights.sum()).tolist())


def build_eval_streams(
    heldout: Sequence[Shard],
    target: MixtureSpec,
    n_tokens: int,
    seed: int,
    chunk_len: int = 32,
) -> Dict[str, np.ndarray]:
    """
    Named validation streams from held-out shard data.

    ``target`` is the fixed stream a sweep optimizes; ``benchmark`` is a second,
    independent draw from the same mixture standing in for a downstream score;
    ``uniform`` and one stream per shard are candidate validation sets for screening.
    """
    prng = Prng(seed).split(EVAL_STREAM)
    n_shards = len(heldout)
    uniform = MixtureSpec(weights=np.full(n_shards, 1.0 / n_shards).tolist())
    streams = {
        TARGET_STREAM: build_proxy_corpus(target, n_tokens, heldout, prng.split(0).generator(), chunk_len),
        BENCHMARK_STREAM: build_proxy_corpus(target, n_tokens, heldout, prng.split(1).generator(), chunk_len),
        "uniform": build_proxy_corpus(uniform, n_tokens, heldout, prng.split(2).generator(), chunk_len),
    }
    for i, shard in enumerate(heldout):
        one_hot = MixtureSpec(weights=np.eye(n_shards)[i].tolist())
        name = f"shard_{shard.id:02d}"
        streams[name] = build_proxy_corpus(one_hot, n_tokens, heldout, prng.split(3 + i).generator(), chunk_len)
    return streams


def scaled_proxy(proxy: MoEConfig, multiplier: int) -> MoEConfig:
    """The proxy widened ``multiplier`` times in d_model and d_ff."""
    return proxy.model_copy(update={"d_model": proxy.d_model * multiplier, "d_ff": proxy.d_ff * multiplier})


def pretrain_config(config: SweepConfig, steps: Optional[int] = None) -> PretrainConfig:
    steps = config.steps if steps is None else steps
    return PretrainConfig(
        steps=steps,
        batch_size=config.batch_size,
        seq_len=config.seq_len,
        lr=config.lr,
        log_every=max(1, steps),
    )


def train_proxy(
    mixture: MixtureSpec,
    index: int,
    config: SweepConfig,
    shards: Sequence[Shard],
    streams: Dict[str, np.ndarray],
    seed: int,
    proxy: Optional[MoEConfig] = None,
    steps: Optional[int] = None,
    width: int = 1,
) -> ProxyRun:
    """Train one proxy on ``mixture``; a non-finite loss marks the run diverged instead of raising."""
    prng = Prng(seed).split(index)
    proxy = proxy or config.proxy
    corpus = build_proxy_corpus(mixture, config.token_budget, shards, prng.split(0).generator(), config.chunk_len)
    try:
        model = MoETransformer(proxy, prng.split(1), name=f"proxy{index}")
        train_lm(model, corpus, pretrain_config(config, steps), prng.split(2))
        eval_losses = {
            name: evaluate_loss(model, stream, config.seq_len, config.eval_windows)
            for name, stream in sorted(streams.items())
        }
    except LabError as e:
        if e.reason != LabErrorReason.NON_FINITE:
            raise
        logger.warning("proxy %d diverged: %s", index, e.detail)
        return ProxyRun(mixture=mixture, index=index, seed=seed, val_loss=float("nan"), diverged=True, width=width)
    val_loss = eval_losses[TARGET_STREAM]
    return ProxyRun(
        mixture=mixture,
        index=index,
        seed=seed,
        val_loss=val_loss,
        diverged=not np.isfinite(val_loss),
        eval_losses=eval_losses,
        width=width,
    )


def _init_worker(shards: Sequence[Shard], streams: Dict[str, np.ndarray]) -> None:
    _WORKER["shards"] = shards
    _WORKER["streams"] = streams


def _run_job(job: Tuple[MixtureSpec, int, SweepConfig, int, Optional[MoEConfig], Optional[int], int]) -> ProxyRun:
    mixture, index, config, seed, proxy, steps, width = job
    return train_proxy(mixture, index, config, _WORKER["shards"], _WORKER["streams"], seed, proxy, steps, width)


def run_proxy_sweep(
    mixtures: Sequence[MixtureSpec],
    config: SweepConfig,
    shards: Sequence[Shard],
    streams: Dict[str, np.ndarray],
    seed: int,
    jobs: int = 1,
    proxy: Optional[MoEConfig] = None,
    indices: Optional[Sequence[int]] = None,
    steps: Optional[int] = None,
    width: int = 1,
) -> List[ProxyRun]:
    """
    One independently seeded proxy per mixture, returned in index order.

    ``indices`` names the per-run stream of each mixture (default: its position),
    so a rerun of a subset reproduces the original runs exactly.
    """
    require(len(mixtures) >= 1, LabErrorReason.EMPTY_INPUT, "no mixtures to sweep")
    require(TARGET_STREAM in streams, LabErrorReason.INVALID_ARGUMENT, "evaluation streams lack a target stream")
    indices = list(range(len(mixtures))) if indices is None else list(indices)
    require(len(indices) == len(mixtures), LabErrorReason.SHAPE_MISMATCH, "one index per mixture")
    job_list = [(m, i, config, seed, proxy, steps, width) for m, i in zip(mixtures, indices)]

    if jobs <= 1:
        _init_worker(shards, streams)
        runs = [_run_job(job) for job in job_list]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(shards, streams)) as pool:
            runs = list(pool.map(_run_job, job_list))
    runs.sort(key=lambda run: run.index)
    logger.info("sweep of %d proxies done (%d diverged)", len(runs), sum(run.diverged for run in runs))
    return runs


def valid_runs(runs: Sequence[ProxyRun]) -> List[ProxyRun]:
    return [run for run in runs if not run.diverged and np.isfinite(run.val_loss)]


def sweep_rows(runs: Sequence[ProxyRun]) -> List[Dict[str, object]]:
    """CSV rows: one weight column per shard, then index, seed, val_loss, diverged and every eval loss."""
    rows = []
    for run in runs:
        row: Dict[str, object] = {f"w{i:02d}": w for i, w in enumerate(run.mixture.weights)}
        row.update({"index": run.index, "seed": run.seed, "val_loss": run.val_loss, "diverged": run.diverged})
        row.update({f"loss_{name}": value for name, value in sorted(run.eval_losses.items())})
        rows.append(row)
    return rows
