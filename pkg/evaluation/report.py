# evaluation/report.py
"""Per-suite, per-slice loss and next-token accuracy of one model."""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from core.tensor import no_grad
from mixture.sweep import split_shards
from models.moe.transformer import MoETransformer
from quantization.calibration import collect_calibration
from quantization.quantize import identity_scheme, naive_quantize, quantize_model
from schemas.evaluation.schemas import EVAL_COLUMNS, EvalRow, EvalRunConfig, EvalSuite
from sft.dataset import encode_record, encode_sample
from sft.masks import build_loss_mask
from synthetic.generators import generate_sft_records, in_memory_shards
from utils import tokenizer
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger
from utils.reporting import write_csv

logger = get_logger(__name__)


def slice_metrics(model: MoETransformer, tokens: np.ndarray, loss_mask: Optional[np.ndarray] = None) -> Tuple[int, float, float]:
    """(scored positions, masked mean cross-entropy, greedy next-token accuracy)"""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    mask = np.ones(tokens.shape) if loss_mask is None else np.asarray(loss_mask, dtype=np.float64)
    scored = mask[:, :-1]
    n_tokens = int(scored.sum())
    require(n_tokens > 0, LabErrorReason.EMPTY_INPUT, "slice has no scored positions")
    with no_grad():
        hidden, _ = model.hidden_states(tokens)
        logits = model.lm_head(hidden).data[:, :-1].astype(np.float64)
    targets = tokens[:, 1:]
    log_probs = np.take_along_axis(log_softmax(logits, axis=-1), targets[..., None], axis=-1)[..., 0]
    loss = float(-(log_probs * scored).sum() / n_tokens)
    hits = (logits.argmax(axis=-1) == targets) * scored
    return n_tokens, loss, float(hits.sum() / n_tokens)


def eval_report(model: MoETransformer, suites: Sequence[EvalSuite]) -> List[EvalRow]:
    rows = []
    for suite in suites:
        for name in sorted(suite.slices):
            tokens = suite.slices[name]
            n_tokens, loss, accuracy = slice_metrics(model, tokens, suite.loss_masks.get(name))
            rows.append(
                EvalRow(
                    suite=suite.name,
                    slice=name,
                    n_sequences=int(np.atleast_2d(tokens).shape[0]),
                    n_tokens=n_tokens,
                    loss=loss,
                    accuracy=accuracy,
                )
            )
            logger.info("%s/%s loss=%.4f accuracy=%.3f", suite.name, name, loss, accuracy)
    return rows


def write_eval_report(rows: Sequence[EvalRow], path: Union[str, Path]) -> Path:
    return write_csv(path, [row.model_dump() for row in rows], columns=EVAL_COLUMNS)


def language_suite(config: EvalRunConfig, seed: int) -> EvalSuite:
    """Windows from the held-out tail of every synthetic shard, one slice per shard."""
    _, heldout = split_shards(in_memory_shards(config.data, seed), config.heldout_fraction)
    slices = {}
    for shard in heldout:
        n_windows = min(config.windows, shard.tokens.size // config.seq_len)
        require(n_windows >= 1, LabErrorReason.SEQUENCE_TOO_SHORT, f"held-out part of shard {shard.id} is too short")
        slices[shard.label or f"shard_{shard.id:02d}"] = shard.tokens[: n_windows * config.seq_len].reshape(
            n_windows, config.seq_len
        )
    return EvalSuite(name="languages", slices=slices)


def sft_suite(config: EvalRunConfig, seed: int) -> EvalSuite:
    """Fresh SFT records split by domain, PAD-filled to the longest sample and scored with the SFT loss mask."""
    samples = [encode_record(record) for record in generate_sft_records(config.n_sft_records, seed + 1)]
    by_domain: Dict[str, list] = {}
    for sample in samples:
        by_domain.setdefault(sample.domain, []).append(sample)
    slices, masks = {}, {}
    for domain, members in by_domain.items():
        length = max(len(encode_sample(s)) for s in members)
        tokens = np.full((len(members), length), tokenizer.PAD, dtype=np.int64)
        mask = np.zeros((len(members), length))
        for row, sample in enumerate(members):
            encoded = encode_sample(sample)
            tokens[row, : len(encoded)] = encoded
            mask[row, : len(encoded)] = build_loss_mask(sample)
        slices[domain], masks[domain] = tokens, mask
    return EvalSuite(name="sft", slices=slices, loss_masks=masks)


SUITE_BUILDERS = {
    "languages": language_suite,
    "sft": sft_suite,
}


def build_eval_suites(config: EvalRunConfig, seed: int) -> List[EvalSuite]:
    return [SUITE_BUILDERS[name](config, seed) for name in config.suites]


def with_numerics(model: MoETransformer, config: EvalRunConfig, seed: int) -> MoETransformer:
    """The model as evaluated: full precision, or quantized after calibrating on language windows."""
    if config.numerics == "full":
        return model
    calibration = [
        window
        for tokens in language_suite(config, seed).slices.values()
        for window in tokens
    ][: config.calibration_sequences]
    if config.numerics == "identity":
        return quantize_model(model, identity_scheme(model, collect_calibration(model, calibration)))
    return naive_quantize(model, calibration).qmodel
