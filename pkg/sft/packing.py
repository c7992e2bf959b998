# sft/packing.py
from typing import List, Sequence

import numpy as np

from schemas.sft.schemas import PackedBatch, SftSample
from sft.dataset import encode_sample
from sft.masks import build_loss_mask
from utils import tokenizer
from utils.exceptions import LabError, LabErrorReason


def pack_samples(samples: Sequence[SftSample], max_len: int) -> List[PackedBatch]:
    """
    Greedy first-fit in input order: each sample goes into the first pack with room
    for all of it, otherwise a new pack. Samples are never split or truncated; the
    tail of every pack is PAD.
    """
    encoded = [encode_sample(s) for s in samples]
    too_long = [i for i, tokens in enumerate(encoded) if len(tokens) > max_len]
    if too_long:
        raise LabError(
            LabErrorReason.SAMPLE_TOO_LONG,
            f"samples {too_long} exceed max_len={max_len}",
            sample_indices=too_long,
            max_len=max_len,
        )

    bins: List[List[int]] = []
    used: List[int] = []
    for index, tokens in enumerate(encoded):
        for slot, filled in enumerate(used):
            if filled + len(tokens) <= max_len:
                bins[slot].append(index)
                used[slot] += len(tokens)
                break
        else:
            bins.append([index])
            used.append(len(tokens))

    packs = []
    for members in bins:
        tokens = np.full(max_len, tokenizer.PAD, dtype=np.int64)
        loss_mask = np.zeros(max_len, dtype=np.int8)
        segment_ids = np.full(max_len, -1, dtype=np.int64)
        positions = np.zeros(max_len, dtype=np.int64)
        cursor = 0
        for segment, index in enumerate(members):
            sample_tokens = encoded[index]
            end = cursor + len(sample_tokens)
            tokens[cursor:end] = sample_tokens
            loss_mask[cursor:end] = build_loss_mask(samples[index])
            segment_ids[cursor:end] = segment
            positions[cursor:end] = np.arange(len(sample_tokens))
            cursor = end
        packs.append(
            PackedBatch(
                tokens=tokens,
                loss_mask=loss_mask,
                segment_ids=segment_ids,
                positions=positions,
                pad_count=max_len - cursor,
                sample_indices=members,
            )
        )
    return packs
