# sft/dataset.py
import json
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import ValidationError

from schemas.sft.schemas import SftRecord, SftSample
from utils import tokenizer
from utils.exceptions import LabError, LabErrorReason


def encode_record(record: SftRecord) -> SftSample:
    prompt = tokenizer.encode_conversation(record.turns, record.prompt)
    # +1 for the BOS that precedes the prompt in the encoded sequence
    boundaries = [i + 1 for i, token in enumerate(prompt) if token == tokenizer.EOT]
    return SftSample(
        prompt=prompt,
        answer=tokenizer.encode(record.answer),
        domain=record.domain,
        turn_boundaries=boundaries,
    )


def encode_sample(sample: SftSample) -> List[int]:
    """[BOS] x y [EOS]"""
    return [tokenizer.BOS, *sample.prompt, *sample.answer, tokenizer.EOS]


def parse_jsonl(lines: Iterable[str]) -> List[SftRecord]:
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(SftRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise LabError(LabErrorReason.CONFIG_ERROR, f"bad SFT record on line {number}: {exc}", line=number)
    return records


def load_jsonl(path: Union[str, Path]) -> List[SftRecord]:
    with open(path, encoding="utf-8") as handle:
        return parse_jsonl(handle)


def write_jsonl(path: Union[str, Path], records: Iterable[SftRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.model_dump(), sort_keys=True) + "\n")
    return path
