# models/moe/storage.py
"""A saved model is a directory with model.bin (checkpoint layout) and model_config.json."""
import json
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from core.checkpoint import load_checkpoint, save_checkpoint
from core.prng import Prng
from models.moe.transformer import MoETransformer
from schemas.moe.schemas import MoEConfig
from utils.exceptions import LabError, LabErrorReason

WEIGHTS_FILE = "model.bin"
CONFIG_FILE = "model_config.json"


def save_model(model: MoETransformer, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    save_checkpoint(out_dir / WEIGHTS_FILE, model.state_dict())
    (out_dir / CONFIG_FILE).write_text(
        json.dumps(model.config.model_dump(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out_dir


def load_model(path: Union[str, Path], name: str = "policy") -> MoETransformer:
    """``path`` is a saved-model directory or the model.bin inside one."""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    try:
        config = MoEConfig.model_validate_json((directory / CONFIG_FILE).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"cannot read model config in {directory}: {exc}")
    except ValidationError as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"bad model config in {directory}: {exc}")
    try:
        state = load_checkpoint(directory / WEIGHTS_FILE)
    except OSError as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"cannot read checkpoint in {directory}: {exc}")
    return MoETransformer(config, Prng(0), name=name).load_state_dict(state)


def model_or_fresh(
    checkpoint: Optional[Union[str, Path]],
    config: MoEConfig,
    prng: Prng,
    name: str = "policy",
) -> MoETransformer:
    if checkpoint:
        return load_model(checkpoint, name=name)
    return MoETransformer(config, prng, name=name)
