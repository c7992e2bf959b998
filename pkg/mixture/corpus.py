# mixture/corpus.py
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from mixture.sampling import apportion
from schemas.mixture.schemas import MixtureSpec, ShardManifest
from utils.exceptions import LabError, LabErrorReason, require


@dataclass(frozen=True)
class Shard:
    id: int
    tokens: np.ndarray
    label: str = ""

    def __post_init__(self):
        require(self.tokens.size > 0, LabErrorReason.EMPTY_INPUT, f"shard {self.id} is empty")


def load_shards(manifest_path: Union[str, Path]) -> List[Shard]:
    manifest_path = Path(manifest_path)
    try:
        manifest = ShardManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
        return [
            Shard(entry.id, np.load(manifest_path.parent / entry.path).astype(np.int64), entry.label)
            for entry in manifest.shards
        ]
    except (OSError, ValueError) as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"cannot load shards from {manifest_path}: {exc}")


def draw_tokens(shard: Shard, count: int, chunk_len: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    ``count`` tokens as whole chunks of the shard in a shuffled order; an exhausted
    shard starts over with a fresh shuffle. The last chunk is cut to fit.
    """
    n_chunks = max(1, -(-shard.tokens.size // chunk_len))
    pieces: List[np.ndarray] = []
    remaining = count
    while remaining > 0:
        for chunk in rng.permutation(n_chunks):
            piece = shard.tokens[chunk * chunk_len: (chunk + 1) * chunk_len][:remaining]
            pieces.append(piece)
            remaining -= piece.size
            if remaining == 0:
                break
    return pieces


def build_proxy_corpus(
    mixture: MixtureSpec,
    token_budget: int,
    shards: Sequence[Shard],
    rng: np.random.Generator,
    chunk_len: int = 32,
) -> np.ndarray:
    """A token stream with exactly apportion(weights, budget) tokens from each shard, chunks interleaved."""
    require(
        mixture.n_shards == len(shards),
        LabErrorReason.SHAPE_MISMATCH,
        f"mixture over {mixture.n_shards} shards but {len(shards)} shards given",
    )
    counts = apportion(mixture.weights, token_budget)
    pieces: List[np.ndarray] = []
    for shard, count in zip(shards, counts):
        if count > 0:
            pieces.extend(draw_tokens(shard, int(count), chunk_len, rng))
    order = rng.permutation(len(pieces))
    return np.concatenate([pieces[i] for i in order]).astype(np.int64)


def shard_counts(stream: np.ndarray, shards: Sequence[Shard]) -> np.ndarray:
    """Tokens of ``stream`` attributable to each shard by vocabulary membership."""
    return np.array([np.isin(stream, np.unique(s.tokens)).sum() for s in shards])
