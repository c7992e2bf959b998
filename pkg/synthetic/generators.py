# synthetic/generators.py
"""
Synthetic corpora standing in for mined multilingual data.

Each "language" shard is a Markov source over its own disjoint band of byte
ids, so shard weights in a mixture have a measurable effect on what a proxy
model can predict. Template shards produce SFT records.
"""
import bisect
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.prng import Prng
from mixture.corpus import Shard
from schemas.alignment.schemas import PreferencePair
from schemas.mixture.schemas import ShardEntry, ShardManifest
from schemas.sft.schemas import SftRecord
from schemas.synthetic.schemas import SyntheticConfig, SyntheticShardSpec
from sft.dataset import write_jsonl
from utils.logger import get_logger

logger = get_logger(__name__)

PRODUCTS = ["phone case", "rice cooker", "running shoes", "face serum", "desk lamp", "backpack", "kettle", "earbuds"]
COLOURS = ["red", "black", "white", "blue", "green"]
TOPICS = ["the weather", "a short poem", "the number seven", "a greeting", "the ocean", "a recipe"]


def shard_parameters(spec: SyntheticShardSpec, seed: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """(unigram, transition matrix); the unigram of an order-1 shard is its stationary distribution."""
    rng = Prng(seed).split(spec.id).split(0).generator()
    size = spec.band_size
    if spec.markov_order == 0:
        return rng.dirichlet(np.full(size, spec.concentration)), None
    transition = rng.dirichlet(np.full(size, spec.concentration), size=size)
    return stationary(transition), transition


def stationary(transition: np.ndarray) -> np.ndarray:
    size = transition.shape[0]
    system = np.vstack([transition.T - np.eye(size), np.ones((1, size))])
    target = np.zeros(size + 1)
    target[-1] = 1.0
    solution, *_ = np.linalg.lstsq(system, target, rcond=None)
    solution = np.clip(solution, 0.0, None)
    return solution / solution.sum()


def generate_markov(spec: SyntheticShardSpec, seed: int, n_tokens: int) -> np.ndarray:
    unigram, transition = shard_parameters(spec, seed)
    rng = Prng(seed).split(spec.id).split(1).generator()
    if transition is None:
        states = rng.choice(spec.band_size, size=n_tokens, p=unigram)
        return (states + spec.vocab_lo).astype(np.int64)
    cdf_rows = [list(np.cumsum(row)) for row in transition]
    uniforms = rng.random(n_tokens).tolist()
    state = int(rng.choice(spec.band_size, p=unigram))
    last = spec.band_size - 1
    out = np.empty(n_tokens, dtype=np.int64)
    for i, u in enumerate(uniforms):
        out[i] = state
        state = min(bisect.bisect_right(cdf_rows[state], u), last)
    return out + spec.vocab_lo


def unigram_kl(tokens: np.ndarray, spec: SyntheticShardSpec, seed: int) -> float:
    """KL(empirical unigram || generator unigram) in nats."""
    unigram, _ = shard_parameters(spec, seed)
    counts = np.bincount(np.asarray(tokens) - spec.vocab_lo, minlength=spec.band_size).astype(np.float64)
    empirical = counts / counts.sum()
    present = empirical > 0
    return float((empirical[present] * np.log(empirical[present] / unigram[present])).sum())


def _ecommerce_record(rng: np.random.Generator) -> SftRecord:
    product = PRODUCTS[rng.integers(len(PRODUCTS))]
    colour = COLOURS[rng.integers(len(COLOURS))]
    price = int(rng.integers(5, 200))
    kind = int(rng.integers(3))
    if kind == 0:
        return SftRecord(
            prompt=f"How much is the {colour} {product}?",
            answer=f"The {colour} {product} costs ${price}.",
            domain="ecommerce",
        )
    if kind == 1:
        return SftRecord(
            prompt=f"Does the {product} come in {colour}?",
            answer=f"Yes, the {product} is available in {colour}.",
            domain="ecommerce",
        )
    return SftRecord(
        turns=[f"I want a {product}.", f"We have a {colour} {product} for ${price}."],
        prompt="Is it in stock?",
        answer=f"The {colour} {product} ships today.",
        domain="ecommerce",
    )


def _general_record(rng: np.random.Generator) -> SftRecord:
    topic = TOPICS[rng.integers(len(TOPICS))]
    return SftRecord(prompt=f"Write about {topic}.", answer=f"Here is a line about {topic}.", domain="general")


def generate_sft_records(n: int, seed: int) -> List[SftRecord]:
    """Product Q&A (ecommerce) and open prompts (general), alternating with a seeded draw."""
    rng = Prng(seed).split(10_000).generator()
    return [_ecommerce_record(rng) if rng.random() < 0.5 else _general_record(rng) for _ in range(n)]


def separable_preferences(n: int, seed: int, length: int = 6) -> List[PreferencePair]:
    """
    Preference pairs a reward model can separate: chosen responses draw from a
    low marker band, rejected ones from a disjoint high band.
    """
    rng = Prng(seed).split(20_000).generator()
    return [
        PreferencePair(
            prompt=rng.integers(32, 64, size=4).tolist(),
            chosen=rng.integers(1, 4, size=length).tolist(),
            rejected=rng.integers(200, 203, size=length).tolist(),
            chosen_source="off_policy",
        )
        for _ in range(n)
    ]


def gen_synthetic(config: SyntheticConfig, seed: int, out_dir: Union[str, Path]) -> Dict[str, object]:
    """Write one .npy per shard, a shard manifest, the shard specs and an SFT JSONL file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = config.shard_specs()
    entries = []
    stats = {}
    for spec in specs:
        tokens = generate_markov(spec, seed, config.n_tokens)
        name = f"shard_{spec.id:02d}.npy"
        np.save(out_dir / name, tokens)
        entries.append(ShardEntry(id=spec.id, path=name, label=spec.label))
        stats[f"shard_{spec.id:02d}_unigram_kl"] = unigram_kl(tokens, spec, seed)
    manifest = ShardManifest(shards=entries)
    (out_dir / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    (out_dir / "shard_specs.json").write_text(
        json.dumps([s.model_dump() for s in specs], sort_keys=True, indent=2), encoding="utf-8"
    )
    if config.n_sft_records:
        write_jsonl(out_dir / "sft.jsonl", generate_sft_records(config.n_sft_records, seed))
    logger.info("wrote %d shards of %d tokens to %s", len(specs), config.n_tokens, out_dir)
    stats["n_shards"] = len(specs)
    stats["max_unigram_kl"] = max(v for k, v in stats.items() if k.endswith("_kl"))
    return stats


def in_memory_shards(config: SyntheticConfig, seed: int, n_tokens: Optional[int] = None):
    """Shards generated straight into memory, for experiments that skip the files."""
    return [
        Shard(spec.id, generate_markov(spec, seed, n_tokens or config.n_tokens), spec.label)
        for spec in config.shard_specs()
    ]
