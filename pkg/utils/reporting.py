# utils/reporting.py
import json
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd
from rich.table import Table

import settings
from utils.logger import console


def git_describe() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=settings.BASE_DIR,
            capture_output=True,
            text=True,
            check=True,
        )
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


def _plain(value: Any) -> Any:
    # numpy scalars and arrays are not JSON serializable
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Union[str, Path], payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_manifest(
    out_dir: Union[str, Path],
    command: str,
    config: Mapping[str, Any],
    seed: int,
    metrics: Mapping[str, Any],
) -> Path:
    """manifest.json for one run; no timestamps so reruns are byte-identical."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": git_describe(),
        "metrics": metrics,
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)


def csv_text(
    rows: Union[pd.DataFrame, Iterable[Mapping[str, Any]]],
    columns: Optional[Sequence[str]] = None,
) -> str:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    return frame.to_csv(index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator="\n")


def write_csv(
    path: Union[str, Path],
    rows: Union[pd.DataFrame, Iterable[Mapping[str, Any]]],
    columns: Optional[Sequence[str]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(csv_text(rows, columns))
    return path


def metrics_rows(metrics: Mapping[str, Any]) -> List[Dict[str, Any]]:
    return [{"metric": name, "value": metrics[name]} for name in sorted(metrics)]


def write_metrics(out_dir: Union[str, Path], metrics: Mapping[str, Any]) -> Path:
    return write_csv(Path(out_dir) / "metrics.csv", metrics_rows(metrics), columns=["metric", "value"])


def print_table(title: str, rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    table = Table(title=title)
    for column in columns:
        table.add_column(str(column))
    for row in rows:
        table.add_row(*[_format_cell(row.get(column)) for column in columns])
    console.print(table)


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "" if value is None else str(value)
