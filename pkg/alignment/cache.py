# alignment/cache.py
import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from core.tensor import no_grad
from models.moe.transformer import MoETransformer
from schemas.alignment.schemas import PreferencePair
from utils.exceptions import LabError, LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

DATA_FILE = "ref_logprobs.bin"
MANIFEST_FILE = "manifest.json"


def content_key(prompt: Sequence[int], response: Sequence[int]) -> str:
    """sha256 over the length-prefixed prompt and the response, both as little-endian int32."""
    prompt = np.asarray(prompt, dtype="<i4")
    response = np.asarray(response, dtype="<i4")
    digest = hashlib.sha256()
    digest.update(struct.pack("<I", prompt.size))
    digest.update(prompt.tobytes())
    digest.update(response.tobytes())
    return digest.hexdigest()


class RefLogProbCache:
    """Per-token reference log-probabilities keyed by response content."""

    def __init__(self, entries: Dict[str, np.ndarray] = None):
        self._entries: Dict[str, np.ndarray] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def put(self, prompt: Sequence[int], response: Sequence[int], logprobs: np.ndarray) -> str:
        logprobs = np.asarray(logprobs, dtype=np.float32)
        require(
            logprobs.shape == (len(response),),
            LabErrorReason.SHAPE_MISMATCH,
            "one log-probability per response token is required",
        )
        require(bool((logprobs <= 0).all()), LabErrorReason.INVALID_ARGUMENT, "log-probabilities must be <= 0")
        key = content_key(prompt, response)
        self._entries[key] = logprobs
        return key

    def get(self, prompt: Sequence[int], response: Sequence[int]) -> np.ndarray:
        key = content_key(prompt, response)
        if key not in self._entries:
            raise LabError(LabErrorReason.CACHE_MISS, f"no reference log-probabilities for {key[:12]}", key=key)
        return self._entries[key]

    def merge(self, other: "RefLogProbCache") -> "RefLogProbCache":
        self._entries.update(other._entries)
        return self

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {}
        offset = 0
        with open(directory / DATA_FILE, "wb") as handle:
            for key in sorted(self._entries):
                values = self._entries[key].astype("<f4")
                handle.write(values.tobytes())
                manifest[key] = {"offset": offset, "length": int(values.size)}
                offset += values.nbytes
        (directory / MANIFEST_FILE).write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "RefLogProbCache":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
        blob = (directory / DATA_FILE).read_bytes()
        entries = {
            key: np.frombuffer(blob, dtype="<f4", count=entry["length"], offset=entry["offset"]).astype(np.float32)
            for key, entry in manifest.items()
        }
        return cls(entries)


def responses_of(pairs: Iterable[PreferencePair]) -> Iterable[Tuple[Sequence[int], Sequence[int]]]:
    for pair in pairs:
        yield pair.prompt, pair.chosen
        yield pair.prompt, pair.rejected


def reference_log_probs(ref_model: MoETransformer, prompt: Sequence[int], response: Sequence[int]) -> np.ndarray:
    with no_grad():
        return ref_model.sequence_log_probs(list(prompt) + list(response), start=len(prompt)).data.copy()


def precompute_ref_logprobs(pairs: Sequence[PreferencePair], ref_model: MoETransformer) -> RefLogProbCache:
    """One reference forward per distinct response; training then reads only the cache."""
    cache = RefLogProbCache()
    for prompt, response in responses_of(pairs):
        if content_key(prompt, response) in cache:
            continue
        cache.put(prompt, response, reference_log_probs(ref_model, prompt, response))
    logger.info("cached reference log-probs for %d responses", len(cache))
    return cache
