import math

import numpy as np
import pytest

from core.prng import Prng, generator
from models.moe.transformer import MoETransformer
from quantization.calibration import (
    CalibrationStats,
    balance_calibration,
    collect_calibration,
    joint_weight_max,
)
from quantization.fp8 import FP8_MAX, MIN_SUBNORMAL, enumerate_grid, fp8_qdq, round_to_e4m3
from quantization.quantize import (
    build_scheme,
    expert_aware_quantize,
    identity_scheme,
    load_scheme,
    naive_quantize,
    quantize_model,
    save_scheme,
)
from quantization.report import final_hidden, report_error, write_report
from quantization.skew import (
    COMMON_EXPERT,
    COMMON_TOKENS,
    RARE_EXPERT,
    RARE_TOKENS,
    build_skewed_model,
    skewed_calibration_set,
    skewed_eval_slices,
    token_sequences,
)
from quantization.smoothing import compute_smoothing, fold_smoothing, smoothing_vector
from schemas.moe.schemas import MoEConfig
from schemas.quantization.schemas import REPORT_COLUMNS
from utils.exceptions import LabError, LabErrorReason

GRID = enumerate_grid()
# codes 0..126 are zero and the positive finite values, in increasing order
POSITIVE_GRID = GRID[:127]


def grid_oracle(x: float) -> float:
    magnitude = min(abs(x), FP8_MAX)
    distance = np.abs(POSITIVE_GRID - magnitude)
    nearest = np.flatnonzero(distance == distance.min())
    code = nearest[0] if nearest.size == 1 else next(c for c in nearest if c % 2 == 0)
    return math.copysign(POSITIVE_GRID[code], x)


def random_model(seed: int = 0, **overrides) -> MoETransformer:
    values = dict(vocab_size=64, d_model=8, n_layers=2, n_heads=2, n_experts=3, top_k=2, d_ff=8, max_seq_len=16,
                  mtp_depth=0)
    values.update(overrides)
    return MoETransformer(MoEConfig(**values), Prng(seed))


def test_grid_has_254_finite_codes():
    finite = GRID[np.isfinite(GRID)]
    assert finite.size == 254
    assert finite.max() == 448.0
    assert POSITIVE_GRID[1] == MIN_SUBNORMAL == 2.0 ** -9
    np.testing.assert_array_equal(GRID[128:255], -GRID[:127])


def test_round_trip_is_idempotent_on_every_code():
    finite = GRID[np.isfinite(GRID)]
    np.testing.assert_array_equal(round_to_e4m3(finite), finite)
    np.testing.assert_array_equal(fp8_qdq(finite, 1.0), finite)


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (448.0, 448.0), (1000.0, 448.0), (-1e9, -448.0), (1.0625, 1.0)])
def test_fp8_qdq_endpoints(x, expected):
    assert fp8_qdq(np.array([x]), 1.0)[0] == expected


def test_rounding_matches_exhaustive_grid_oracle():
    rng = generator(0)
    midpoints = (POSITIVE_GRID[1:] + POSITIVE_GRID[:-1]) / 2
    samples = np.concatenate([midpoints, -midpoints, rng.uniform(-500, 500, 2000), rng.uniform(-0.02, 0.02, 500)])
    expected = np.array([grid_oracle(x) for x in samples])
    np.testing.assert_array_equal(round_to_e4m3(samples), expected)


def test_fp8_qdq_uses_scale():
    x = np.array([3.0, -700.0, 0.01])
    np.testing.assert_array_equal(fp8_qdq(x, 2.0), round_to_e4m3(x / 2.0) * 2.0)


def test_fp8_qdq_rejects_bad_input():
    with pytest.raises(LabError) as e:
        fp8_qdq(np.array([1.0]), 0.0)
    assert e.value.reason == LabErrorReason.INVALID_ARGUMENT
    with pytest.raises(LabError) as e:
        fp8_qdq(np.array([np.nan]), 1.0)
    assert e.value.reason == LabErrorReason.NON_FINITE


def test_empty_calibration_has_zero_counts():
    stats = collect_calibration(random_model(), [])
    assert all(c.sum() == 0 for c in stats.counts.values())
    assert stats.min_count() == 0


def test_calibration_counts_sum_to_tokens_times_k():
    model = random_model(1)
    tokens = generator(1).integers(0, 64, size=(5, 12))
    stats = collect_calibration(model, tokens, batch_size=2)
    for counts in stats.counts.values():
        assert counts.sum() == 5 * 12 * 2
    assert all(v >= 0 for v in stats.act_max.values())


def test_calibration_merge_is_commutative():
    model = random_model(2)
    rng = generator(2)
    a = collect_calibration(model, rng.integers(0, 64, size=(3, 8)))
    b = collect_calibration(model, rng.integers(0, 64, size=(4, 8)))
    ab, ba = a.merge(b), b.merge(a)
    for layer in ab.counts:
        np.testing.assert_array_equal(ab.counts[layer], ba.counts[layer])
        np.testing.assert_array_equal(ab.expert_x_max[layer], ba.expert_x_max[layer])
    assert ab.act_max == ba.act_max
    assert ab.n_sequences == 7


def test_skewed_model_reproduces_injected_skew():
    model = build_skewed_model(0)
    calibration = skewed_calibration_set(100, 16, 0.1, generator(3))
    stats = collect_calibration(model, calibration)
    skew = stats.skew(0)
    assert abs(skew[COMMON_EXPERT] - 0.9) <= 0.05
    assert abs(skew[RARE_EXPERT] - 0.1) <= 0.05


def test_balanced_input_is_returned_unchanged():
    model = build_skewed_model(0)
    calibration = skewed_calibration_set(20, 8, 0.5, generator(4))
    stats = collect_calibration(model, calibration)
    balanced = balance_calibration(stats, [], model, tau=10, tokens=calibration)
    assert balanced.n_added == 0
    assert len(balanced.tokens) == len(calibration)
    assert all(np.array_equal(a, b) for a, b in zip(balanced.tokens, calibration))


def test_balancing_reaches_tau_on_ninety_ten_skew():
    model = build_skewed_model(0)
    rng = generator(5)
    calibration = skewed_calibration_set(20, 4, 0.1, rng)
    stats = collect_calibration(model, calibration)
    assert stats.counts[0][RARE_EXPERT] < 50
    pool = token_sequences(COMMON_TOKENS, 150, 4, rng) + token_sequences(RARE_TOKENS, 50, 4, rng)
    pool = [pool[i] for i in rng.permutation(len(pool))]
    balanced = balance_calibration(stats, pool, model, tau=50, tokens=calibration)
    assert balanced.counts[0].min() >= 50
    assert collect_calibration(model, balanced.tokens).min_count() >= 50


def test_unreachable_expert_is_named():
    model = build_skewed_model(0)
    rng = generator(6)
    calibration = token_sequences(COMMON_TOKENS, 10, 8, rng)
    stats = collect_calibration(model, calibration)
    with pytest.raises(LabError) as e:
        balance_calibration(stats, token_sequences(COMMON_TOKENS, 30, 8, rng), model, tau=5, tokens=calibration)
    assert e.value.reason == LabErrorReason.POOL_EXHAUSTED
    assert e.value.context == {"layer": 0, "expert": RARE_EXPERT}


def test_smoothing_symmetry_and_endpoints():
    x_max = np.array([4.0, 0.25, 9.0, 0.0])
    np.testing.assert_array_equal(smoothing_vector(x_max, x_max, 0.5), [1.0, 1.0, 1.0, 1.0])
    w_max = np.array([2.0, 3.0, 0.5, 1.0])
    np.testing.assert_array_equal(smoothing_vector(x_max, w_max, 1.0), [4.0, 0.25, 9.0, 1.0])
    np.testing.assert_allclose(smoothing_vector(x_max, w_max, 0.0), [0.5, 1 / 3, 2.0, 1.0])


def test_joint_weight_max_over_experts_and_router():
    model = random_model(7, n_layers=1)
    brute = np.abs(model.params["layers.0.router"].data).max(axis=1)
    for e in range(3):
        brute = np.maximum(brute, np.abs(model.params[f"layers.0.experts.{e}.w_in"].data).max(axis=1))
    np.testing.assert_array_equal(joint_weight_max(model, 0), brute)

    stats = collect_calibration(model, generator(7).integers(0, 64, size=(4, 8)))
    x_max = np.maximum(stats.expert_x_max[0].max(axis=0), stats.router_x_max[0])
    np.testing.assert_allclose(compute_smoothing(stats, 0.5)[0], np.sqrt(x_max) / np.sqrt(brute))


def test_fold_with_unit_smoothing_changes_nothing():
    model = random_model(8)
    folded = fold_smoothing(model, {0: np.ones(8), 1: np.ones(8)})
    for key, value in model.state_dict().items():
        np.testing.assert_array_equal(folded.params[key].data, value)


def test_fold_preserves_full_precision_outputs():
    model = random_model(9, dtype="float64")
    rng = generator(9)
    smoothing = {layer: np.exp(rng.normal(0, 1.5, size=8)) for layer in (0, 1)}
    folded = fold_smoothing(model, smoothing)
    tokens = rng.integers(0, 64, size=(4, 16))
    reference = final_hidden(model, tokens)
    deviation = np.abs(final_hidden(folded, tokens) - reference).max() / np.abs(reference).max()
    assert deviation <= 1e-5


def test_fold_single_expert_by_hand():
    config = dict(vocab_size=8, d_model=2, n_layers=1, n_heads=1, n_experts=1, top_k=1, d_ff=2, max_seq_len=4)
    model = random_model(10, **config)
    s = np.array([2.0, 0.5])
    w_in = model.params["layers.0.experts.0.w_in"].data.copy()
    router = model.params["layers.0.router"].data.copy()
    folded = fold_smoothing(model, {0: s})
    np.testing.assert_array_equal(folded.params["layers.0.ffn_norm"].data, [0.5, 2.0])
    np.testing.assert_array_equal(folded.params["layers.0.experts.0.w_in"].data, np.stack([w_in[0] * 2, w_in[1] * 0.5]))
    np.testing.assert_array_equal(folded.params["layers.0.router"].data, np.stack([router[0] * 2, router[1] * 0.5]))


def test_identity_numerics_give_zero_deltas():
    model = random_model(11)
    rng = generator(11)
    stats = collect_calibration(model, rng.integers(0, 64, size=(8, 16)))
    qmodel = quantize_model(model, identity_scheme(model, stats))
    slices = {"a": rng.integers(0, 64, size=(3, 16)), "b": rng.integers(0, 64, size=(3, 16))}
    for metric in ("accuracy", "output_mse"):
        report = report_error(model, qmodel, slices, metric)
        assert len(report.rows) == 2
        assert all(row.delta == 0.0 for row in report.rows)


def test_missing_expert_calibration_is_refused():
    model = build_skewed_model(0)
    stats = collect_calibration(model, token_sequences(COMMON_TOKENS, 4, 8, generator(12)))
    with pytest.raises(LabError) as e:
        build_scheme(model, stats)
    assert e.value.reason == LabErrorReason.MISSING_CALIBRATION


def test_expert_aware_beats_naive_on_skewed_routing(tmp_path):
    model = build_skewed_model(0)
    rng = generator(13)
    calibration = skewed_calibration_set(40, 8, 0.1, rng)
    pool = token_sequences(COMMON_TOKENS, 100, 8, rng) + token_sequences(RARE_TOKENS, 100, 8, rng)
    pool = [pool[i] for i in rng.permutation(len(pool))]
    slices = skewed_eval_slices(16, 8, rng)

    naive = naive_quantize(model, calibration)
    aware = expert_aware_quantize(model, calibration, pool, tau=64, alpha=0.5)
    assert aware.stats.min_count() >= 64

    naive_report = report_error(model, naive.qmodel, slices, "output_mse").by_slice()
    aware_report = report_error(model, aware.qmodel, slices, "output_mse").by_slice()
    for name in slices:
        assert aware_report[name].quant_value <= naive_report[name].quant_value
    assert aware_report["rare"].quant_value < naive_report["rare"].quant_value

    path = write_report(report_error(model, aware.qmodel, slices, "output_mse"), tmp_path / "report.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 1 + len(slices)


def test_scheme_survives_save_and_load(tmp_path):
    model = build_skewed_model(1)
    rng = generator(14)
    calibration = skewed_calibration_set(20, 8, 0.5, rng)
    result = expert_aware_quantize(model, calibration, [], tau=8, alpha=0.5)
    save_scheme(result.scheme, tmp_path)
    loaded = load_scheme(tmp_path)
    assert loaded.act_scales == result.scheme.act_scales
    assert sorted(loaded.weight_scales) == sorted(result.scheme.weight_scales)
    np.testing.assert_allclose(loaded.smoothing[0], result.scheme.smoothing[0], rtol=1e-6)
