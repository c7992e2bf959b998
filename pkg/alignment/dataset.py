# alignment/dataset.py
import json
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import ValidationError

from schemas.alignment.schemas import PreferencePair, PreferenceRecord
from utils import tokenizer
from utils.exceptions import LabError, LabErrorReason


def encode_preference(record: PreferenceRecord) -> PreferencePair:
    """[BOS] prompt, then each response closed by EOS."""
    return PreferencePair(
        prompt=[tokenizer.BOS, *tokenizer.encode(record.prompt)],
        chosen=[*tokenizer.encode(record.chosen), tokenizer.EOS],
        rejected=[*tokenizer.encode(record.rejected), tokenizer.EOS],
        chosen_source=record.chosen_source,
        domain=record.domain,
    )


def parse_preferences(lines: Iterable[str]) -> List[PreferenceRecord]:
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(PreferenceRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise LabError(LabErrorReason.CONFIG_ERROR, f"bad preference record on line {number}: {exc}", line=number)
    return records


def load_preferences(path: Union[str, Path]) -> List[PreferencePair]:
    try:
        with open(path, encoding="utf-8") as handle:
            records = parse_preferences(handle)
    except OSError as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"cannot read preferences: {exc}")
    pairs = []
    for number, record in enumerate(records, start=1):
        try:
            pairs.append(encode_preference(record))
        except ValidationError as exc:
            raise LabError(LabErrorReason.CONFIG_ERROR, f"unusable preference record {number}: {exc}", record=number)
    return pairs


def write_pairs(path: Union[str, Path], pairs: Iterable[PreferencePair]) -> Path:
    """Token-level pairs with provenance and scores, one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.model_dump(), sort_keys=True) + "\n")
    return path
