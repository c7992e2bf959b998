# quantization/report.py
from pathlib import Path
from typing import Dict, Union

import numpy as np

from core.tensor import no_grad
from models.moe.transformer import MoETransformer
from schemas.quantization.schemas import REPORT_COLUMNS, ErrorReport, ErrorReportRow, Metric
from utils.exceptions import LabErrorReason, require
from utils.reporting import write_csv


def next_token_accuracy(model: MoETransformer, tokens: np.ndarray) -> float:
    """Share of positions whose greedy prediction equals the next token."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    require(tokens.shape[1] >= 2, LabErrorReason.SEQUENCE_TOO_SHORT, "accuracy needs two tokens per sequence")
    predictions = model.greedy_next(tokens)
    return float((predictions[:, :-1] == tokens[:, 1:]).mean())


def final_hidden(model: MoETransformer, tokens: np.ndarray) -> np.ndarray:
    with no_grad():
        hidden, _ = model.hidden_states(np.atleast_2d(tokens))
    return hidden.data.astype(np.float64)


def report_error(
    model: MoETransformer,
    qmodel: MoETransformer,
    eval_set: Dict[str, np.ndarray],
    metric: Metric = "accuracy",
) -> ErrorReport:
    """One row per evaluation slice comparing the quantized model with full precision."""
    rows = []
    for name in sorted(eval_set):
        tokens = eval_set[name]
        if metric == "accuracy":
            full = next_token_accuracy(model, tokens)
            quant = next_token_accuracy(qmodel, tokens)
        else:
            reference = final_hidden(model, tokens)
            full = 0.0
            quant = float(np.mean((final_hidden(qmodel, tokens) - reference) ** 2))
        rows.append(ErrorReportRow(slice=name, metric=metric, fp32_value=full, quant_value=quant, delta=quant - full))
    return ErrorReport(rows=rows)


def write_report(report: ErrorReport, path: Union[str, Path]) -> Path:
    return write_csv(path, [row.model_dump() for row in report.rows], columns=REPORT_COLUMNS)
