# quantization/skew.py
"""
A hand-built one-layer MoE whose routing and activation statistics are known.

Channel 0 of every token embedding carries the routing sign (+1 for common
tokens, -1 for rare ones) and the pre-MoE norm gain blows that channel up by
``outlier``. The router only reads channel 0, so common tokens go to expert 0
and rare tokens to expert 1. Expert input rows for channel 0 are scaled down
by the same factor, so the full-precision computation stays well conditioned
while per-tensor activation scales are dominated by the outlier channel.
"""
from typing import Dict, List

import numpy as np

from core.prng import Prng
from models.moe.transformer import MoETransformer
from schemas.moe.schemas import MoEConfig

D_MODEL = 4
COMMON_TOKENS = np.arange(0, 128)
RARE_TOKENS = np.arange(128, 256)
COMMON_EXPERT = 0
RARE_EXPERT = 1


def skewed_config(max_seq_len: int = 16) -> MoEConfig:
    return MoEConfig(
        d_model=D_MODEL,
        n_layers=1,
        n_heads=1,
        n_experts=2,
        top_k=1,
        d_ff=8,
        max_seq_len=max_seq_len,
        mtp_depth=0,
    )


def build_skewed_model(seed: int = 0, outlier: float = 1e6, max_seq_len: int = 16) -> MoETransformer:
    config = skewed_config(max_seq_len)
    prng = Prng(seed)
    model = MoETransformer(config, prng.split(0), name="skewed")
    rng = prng.split(1).generator()
    p = model.params
    dtype = model.dtype

    embed = rng.normal(0.0, 1.0, size=(config.vocab_size, D_MODEL))
    embed[:, 0] = 1.0
    embed[RARE_TOKENS, 0] = -1.0
    p["embed"].data = embed.astype(dtype)
    p["pos"].data = np.zeros_like(p["pos"].data)
    for proj in ("wq", "wk", "wv", "wo"):
        p[f"layers.0.attn.{proj}"].data = np.zeros_like(p[f"layers.0.attn.{proj}"].data)

    gain = np.ones(D_MODEL)
    gain[0] = outlier
    p["layers.0.ffn_norm"].data = gain.astype(dtype)

    router = np.zeros((D_MODEL, 2))
    router[0] = (3.0 / outlier, -3.0 / outlier)
    p["layers.0.router"].data = router.astype(dtype)

    for e in range(2):
        w_in = rng.normal(0.0, 0.5, size=(D_MODEL, 2 * config.d_ff))
        w_in[0] /= outlier
        p[f"layers.0.experts.{e}.w_in"].data = w_in.astype(dtype)
        p[f"layers.0.experts.{e}.w_out"].data = rng.normal(0.0, 0.5, size=(config.d_ff, D_MODEL)).astype(dtype)
    return model


def token_sequences(vocabulary: np.ndarray, n: int, length: int, rng: np.random.Generator) -> List[np.ndarray]:
    return list(rng.choice(vocabulary, size=(n, length)))


def skewed_calibration_set(
    n: int, length: int, rare_fraction: float, rng: np.random.Generator
) -> List[np.ndarray]:
    """``n`` sequences, about ``rare_fraction`` of them rare (at least one), shuffled."""
    n_rare = max(1, int(round(n * rare_fraction)))
    sequences = token_sequences(COMMON_TOKENS, n - n_rare, length, rng) + token_sequences(
        RARE_TOKENS, n_rare, length, rng
    )
    return [sequences[i] for i in rng.permutation(len(sequences))]


def skewed_eval_slices(n: int, length: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """One slice per routing class: ``common`` and ``rare``."""
    return {
        "common": np.stack(token_sequences(COMMON_TOKENS, n, length, rng)),
        "rare": np.stack(token_sequences(RARE_TOKENS, n, length, rng)),
    }
