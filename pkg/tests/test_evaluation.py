import numpy as np
import pytest
from pydantic import ValidationError

from core.prng import Prng, generator
from evaluation.report import (
    build_eval_suites,
    eval_report,
    language_suite,
    sft_suite,
    slice_metrics,
    with_numerics,
    write_eval_report,
)
from models.moe.transformer import MoETransformer
from schemas.evaluation.schemas import EVAL_COLUMNS, EvalRunConfig, EvalSuite
from schemas.moe.schemas import MoEConfig
from schemas.synthetic.schemas import SyntheticConfig
from sft.dataset import encode_record
from sft.masks import build_loss_mask
from synthetic.generators import generate_sft_records
from utils.exceptions import LabError, LabErrorReason


def tiny_model(seed: int = 0, **overrides) -> MoETransformer:
    values = dict(d_model=8, n_layers=1, n_heads=2, n_experts=4, top_k=2, d_ff=8, max_seq_len=128, mtp_depth=0)
    values.update(overrides)
    return MoETransformer(MoEConfig(**values), Prng(seed))


def small_config(**overrides) -> EvalRunConfig:
    values = dict(
        data=SyntheticConfig(n_shards=2, n_tokens=2000, n_sft_records=0),
        seq_len=16,
        windows=4,
        n_sft_records=6,
        calibration_sequences=8,
    )
    values.update(overrides)
    return EvalRunConfig(**values)


def test_unmasked_slice_loss_matches_the_training_loss():
    model = tiny_model(1, dtype="float64")
    tokens = generator(1).integers(0, 256, size=(3, 12))
    n_tokens, loss, accuracy = slice_metrics(model, tokens)
    assert n_tokens == 3 * 11
    assert loss == pytest.approx(model.lm_forward(tokens).L_LM.item(), abs=1e-9)
    assert 0.0 <= accuracy <= 1.0


def test_masked_positions_are_not_scored():
    model = tiny_model(2, dtype="float64")
    tokens = generator(2).integers(0, 256, size=(1, 10))
    mask = np.zeros((1, 10))
    mask[0, 4] = 1.0
    n_tokens, loss, _ = slice_metrics(model, tokens, mask)
    assert n_tokens == 1
    # only the prediction of token 5 from the prefix ending at 4
    _, prefix_loss, _ = slice_metrics(model, tokens[:, :6], np.eye(1, 6, 4))
    assert loss == pytest.approx(prefix_loss, abs=1e-9)


def test_slice_without_scored_positions_is_refused():
    with pytest.raises(LabError) as e:
        slice_metrics(tiny_model(), np.zeros((2, 4), dtype=np.int64), np.zeros((2, 4)))
    assert e.value.reason == LabErrorReason.EMPTY_INPUT


def test_loss_mask_shape_is_validated():
    with pytest.raises(ValidationError):
        EvalSuite(name="x", slices={"a": np.zeros((2, 4))}, loss_masks={"a": np.zeros((2, 3))})
    with pytest.raises(ValidationError):
        EvalSuite(name="x", slices={"a": np.zeros((2, 4))}, loss_masks={"b": np.zeros((2, 4))})


def test_one_row_per_slice_in_suite_then_slice_order():
    config = small_config()
    suites = build_eval_suites(config, seed=0)
    rows = eval_report(tiny_model(3), suites)
    assert len(rows) == sum(len(s.slices) for s in suites)
    assert [row.suite for row in rows][0] == "languages"
    languages = [row.slice for row in rows if row.suite == "languages"]
    assert languages == sorted(languages) == ["lang00", "lang01"]
    assert all(row.n_sequences == 4 and row.n_tokens == 4 * 15 for row in rows if row.suite == "languages")


def test_sft_suite_scores_exactly_the_loss_mask():
    config = small_config()
    suite = sft_suite(config, seed=5)
    expected = {}
    for record in generate_sft_records(config.n_sft_records, 6):
        sample = encode_record(record)
        expected[sample.domain] = expected.get(sample.domain, 0) + int(build_loss_mask(sample).sum())
    rows = eval_report(tiny_model(4), [suite])
    assert {row.slice: row.n_tokens for row in rows} == expected


def test_language_suite_needs_a_full_window():
    config = small_config(seq_len=128, data=SyntheticConfig(n_shards=1, n_tokens=200, n_sft_records=0))
    with pytest.raises(LabError) as e:
        language_suite(config, seed=0)
    assert e.value.reason == LabErrorReason.SEQUENCE_TOO_SHORT


def test_identity_numerics_reproduce_full_precision_rows():
    model = tiny_model(6)
    config = small_config(suites=["languages"])
    suites = build_eval_suites(config, seed=1)
    full = eval_report(with_numerics(model, config, seed=1), suites)
    identity_config = small_config(suites=["languages"], numerics="identity")
    identity = eval_report(with_numerics(model, identity_config, seed=1), suites)
    assert [row.model_dump() for row in identity] == [row.model_dump() for row in full]


def test_e4m3_numerics_return_a_distinct_model():
    model = tiny_model(7)
    config = small_config(suites=["languages"], numerics="e4m3")
    assert with_numerics(model, small_config(), seed=2) is model
    quantized = with_numerics(model, config, seed=2)
    assert quantized is not model
    assert len(eval_report(quantized, build_eval_suites(config, seed=2))) == 2


def test_report_csv(tmp_path):
    assert write_eval_report([], tmp_path / "empty.csv").read_text() == ",".join(EVAL_COLUMNS) + "\n"
    rows = eval_report(tiny_model(8), build_eval_suites(small_config(), seed=0))
    lines = write_eval_report(rows, tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(EVAL_COLUMNS)
    assert len(lines) == 1 + len(rows)
