# sft/masks.py
import numpy as np

from schemas.sft.schemas import PackedBatch, SftSample
from utils.exceptions import LabErrorReason, require


def build_loss_mask(sample: SftSample) -> np.ndarray:
    """
    0/1 weight per prediction position of ``[BOS] x y [EOS]``; position t predicts token t+1.

    general: only the |y| positions predicting answer tokens.
    ecommerce: every position predicting a prompt or answer token, BOS included.
    The EOS prediction is never weighted.
    """
    n_prompt, n_answer = len(sample.prompt), len(sample.answer)
    require(n_answer >= 1, LabErrorReason.EMPTY_INPUT, "sample has an empty answer")
    mask = np.zeros(n_prompt + n_answer + 2, dtype=np.int8)
    start = 0 if sample.domain == "ecommerce" else n_prompt
    mask[start: n_prompt + n_answer] = 1
    return mask


def build_attention_mask(pack: PackedBatch) -> np.ndarray:
    """True where query i may attend key j: j <= i within the same segment; PAD takes no part."""
    segments = pack.segment_ids
    same = (segments[:, None] == segments[None, :]) & (segments[:, None] >= 0)
    return np.tril(same)
