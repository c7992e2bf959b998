# commands/common.py
"""Shared plumbing of the subcommands: run context, config loading, error exits and run outputs."""
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Type, TypeVar

import typer
from pydantic import BaseModel, ValidationError

import settings
from utils.exceptions import LabError, LabErrorReason
from utils.logger import get_logger
from utils.reporting import metrics_rows, print_table, write_manifest, write_metrics

logger = get_logger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


@dataclass(frozen=True)
class RunContext:
    config_path: Optional[Path]
    seed: int
    out: Path
    jobs: int

    def out_dir(self, command: str) -> Path:
        path = self.out / command
        path.mkdir(parents=True, exist_ok=True)
        return path


def run_context(ctx: typer.Context) -> RunContext:
    if ctx.obj is None:
        ctx.obj = RunContext(None, settings.DEFAULT_SEED, Path(settings.OUTPUT_DIR), settings.DEFAULT_JOBS)
    return ctx.obj


def _set_dotted(payload: Dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    node = payload
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def load_config(
    run: RunContext,
    model_cls: Type[ConfigT],
    command: str,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ConfigT:
    """
    JSON from --config, else the shipped configs/<command>.json, else the model
    defaults. Flags given on the command line replace the matching dotted keys.
    """
    path = run.config_path
    if path is None and (settings.CONFIG_DIR / f"{command}.json").exists():
        path = settings.CONFIG_DIR / f"{command}.json"
    payload: Dict[str, Any] = {}
    if path is not None:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise LabError(LabErrorReason.CONFIG_ERROR, f"cannot read config {path}: {exc}")
        if not isinstance(payload, dict):
            raise LabError(LabErrorReason.CONFIG_ERROR, f"config {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(payload, key, value)
    try:
        return model_cls.model_validate(payload)
    except ValidationError as exc:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"invalid {command} config: {exc}", command=command)


@contextmanager
def exit_on_error(command: str) -> Iterator[None]:
    try:
        yield
    except LabError as exc:
        logger.error("%s failed: %s", command, exc.to_dict())
        raise exc.to_exit() from exc


def finish(run: RunContext, command: str, config: BaseModel, metrics: Mapping[str, Any]) -> Path:
    out_dir = run.out_dir(command)
    write_manifest(out_dir, command, config.model_dump(mode="json"), run.seed, metrics)
    write_metrics(out_dir, metrics)
    print_table(command, metrics_rows(metrics), ["metric", "value"])
    return out_dir
