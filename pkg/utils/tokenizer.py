# utils/tokenizer.py
from typing import List, Sequence

import settings

BYTE_VOCAB = settings.TOKENIZER["BYTE_VOCAB"]
BOS = settings.TOKENIZER["BOS"]
EOS = settings.TOKENIZER["EOS"]
EOT = settings.TOKENIZER["EOT"]
PAD = settings.TOKENIZER["PAD"]
VOCAB_SIZE = settings.TOKENIZER["VOCAB_SIZE"]

SPECIAL_TOKENS = {BOS: "<bos>", EOS: "<eos>", EOT: "<eot>", PAD: "<pad>"}


def encode(text: str) -> List[int]:
    return list(text.encode("utf-8"))


def decode(tokens: Sequence[int]) -> str:
    """Bytes back to text; specials are rendered by name."""
    pieces: List[str] = []
    buffer = bytearray()
    for token in tokens:
        token = int(token)
        if token < BYTE_VOCAB:
            buffer.append(token)
            continue
        if buffer:
            pieces.append(buffer.decode("utf-8", errors="replace"))
            buffer = bytearray()
        pieces.append(SPECIAL_TOKENS.get(token, f"<{token}>"))
    if buffer:
        pieces.append(buffer.decode("utf-8", errors="replace"))
    return "".join(pieces)


def encode_conversation(turns: Sequence[str], prompt: str) -> List[int]:
    """Prior turns each followed by EOT, then the prompt; no BOS."""
    tokens: List[int] = []
    for turn in turns:
        tokens.extend(encode(turn))
        tokens.append(EOT)
    tokens.extend(encode(prompt))
    return tokens


def is_valid(tokens: Sequence[int]) -> bool:
    return all(0 <= int(t) < VOCAB_SIZE for t in tokens)
