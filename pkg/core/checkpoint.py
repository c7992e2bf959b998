# core/checkpoint.py
"""
Checkpoint layout:

    uint64 little-endian   header length in bytes
    UTF-8 JSON header      {name: {"shape": [...], "offset": byte offset into payload}}
    payload                little-endian float32 values, tensors back to back
"""
import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from core.tensor import Tensor
from utils.exceptions import LabError, LabErrorReason

_LENGTH = struct.Struct("<Q")


def encode_checkpoint(tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> bytes:
    header = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        value = tensors[name]
        array = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        header[name] = {"shape": list(array.shape), "offset": offset}
        chunk = array.tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LENGTH.pack(len(encoded)) + encoded + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < _LENGTH.size:
        raise LabError(LabErrorReason.INVALID_ARGUMENT, "checkpoint is truncated")
    (length,) = _LENGTH.unpack_from(blob, 0)
    start = _LENGTH.size + length
    header = json.loads(blob[_LENGTH.size:start].decode("utf-8"))
    tensors = {}
    for name, entry in header.items():
        count = int(np.prod(entry["shape"], dtype=np.int64))
        begin = start + entry["offset"]
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=begin)
        tensors[name] = values.reshape(entry["shape"]).astype(np.float32)
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
