import math

import numpy as np
import pytest

from core import functional as F
from core.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from core.gradcheck import OP_REGISTRY, check_gradients
from core.optim import AdamW, adamw_step, init_state
from core.prng import Prng, generator
from core.tensor import Tape, Tensor, backward, no_grad, parameter, tensor
from utils.exceptions import LabError, LabErrorReason


def f64(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


def test_matmul_small_cases():
    identity = f64(np.eye(2))
    m = f64([[1, 2], [3, 4]])
    np.testing.assert_array_equal((identity @ m).data, [[1, 2], [3, 4]])
    assert (f64([[2]]) @ f64([[3]])).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop():
    rng = generator(0)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose((f64(a) @ f64(b)).data, expected, rtol=1e-6)


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(LabError) as e:
        f64(np.ones((2, 3))) @ f64(np.ones((2, 3)))
    assert e.value.reason == LabErrorReason.SHAPE_MISMATCH


def test_softmax_rows():
    np.testing.assert_allclose(F.softmax_rows(f64([[0, 0, 0, 0]])).data, [[0.25] * 4])
    x = generator(1).standard_normal((3, 5))
    np.testing.assert_allclose(F.softmax_rows(f64(x + 7.5)).data, F.softmax_rows(f64(x)).data, atol=1e-6)
    np.testing.assert_allclose(
        F.softmax_rows(f64([[math.log(1), math.log(2), math.log(3)]])).data, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-6
    )
    np.testing.assert_allclose(F.softmax_rows(f64(x)).data.sum(axis=-1), np.ones(3), atol=1e-6)


def test_softmax_is_stable_for_large_logits():
    out = F.softmax_rows(Tensor(np.array([[1000.0, 1000.0]], dtype=np.float32)))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])


def test_rms_norm_cases():
    ones = f64(np.ones(4))
    np.testing.assert_allclose(F.rms_norm(f64([1, 1, 1, 1]), ones, 1e-12).data, [1, 1, 1, 1], atol=1e-6)
    np.testing.assert_allclose(F.rms_norm(f64([2, 0]), f64([1, 1]), 1e-12).data, [math.sqrt(2), 0], atol=1e-6)
    np.testing.assert_array_equal(F.rms_norm(f64([0, 0, 0]), f64([3, 1, 2]), 0.1).data, [0, 0, 0])
    with pytest.raises(LabError):
        F.rms_norm(f64([1, 2]), f64([1, 1]), 0.0)


def test_top_k():
    idx, values = F.top_k(np.array([0.3, 0.7, 0.1]), 3)
    assert idx.tolist() == [1, 0, 2]
    assert values.tolist() == [0.7, 0.3, 0.1]
    assert F.top_k(np.array([5, 5, 1]), 1)[0].tolist() == [0]
    assert F.top_k(np.array([0.1, 0.9, 0.4, 0.6]), 2)[0].tolist() == [1, 3]
    assert F.top_k(np.array([[2.0, 2.0, 2.0, 2.0]]), 2)[0].tolist() == [[0, 1]]
    for k in (0, 4):
        with pytest.raises(LabError):
            F.top_k(np.array([1.0, 2.0, 3.0]), k)


def test_backward_trivial_cases():
    x = parameter(np.array([[1.0, -2.0], [3.0, 4.0]]), dtype=np.float64)
    unused = parameter(np.ones(3), dtype=np.float64)
    loss = x.sum()
    backward(loss, Tape.from_loss(loss), params=[x, unused])
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))
    np.testing.assert_array_equal(unused.grad, np.zeros(3))
    with pytest.raises(LabError) as e:
        backward(x * 2.0)
    assert e.value.reason == LabErrorReason.SHAPE_MISMATCH


def test_tape_is_topological():
    a = parameter(np.ones(2), dtype=np.float64)
    loss = ((a * 2.0).exp() + a).sum()
    tape = Tape.from_loss(loss)
    seen = set()
    for node in tape:
        assert all(id(parent) in seen for parent in node._parents if parent.requires_grad)
        seen.add(id(node))
    assert tape.nodes[-1] is loss


@pytest.mark.parametrize("op", sorted(OP_REGISTRY))
def test_gradients_match_finite_differences(op):
    case = OP_REGISTRY[op]
    for seed in range(100):
        assert check_gradients(case, generator(seed, 7)) <= 1e-4, f"{op} seed {seed}"


def test_non_finite_values_are_rejected():
    with pytest.raises(LabError) as e:
        tensor([1.0, float("nan")])
    assert e.value.reason == LabErrorReason.NON_FINITE
    with pytest.raises(LabError) as e:
        f64([0.0, 1.0]).log()
    assert e.value.reason == LabErrorReason.NON_FINITE
    assert e.value.context == {"op": "log"}


def test_no_grad_records_nothing():
    x = parameter(np.ones(3))
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert len(Tape.from_loss(y)) == 0


def test_adamw_trivial_cases():
    theta = parameter(np.array([1.0, -2.0]), dtype=np.float64)
    adamw_step([theta], [np.array([0.3, 0.1])], init_state([theta]), lr=0.0)
    np.testing.assert_array_equal(theta.data, [1.0, -2.0])

    adamw_step([theta], [np.zeros(2)], init_state([theta]), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(theta.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.5), rtol=1e-12)


def test_adamw_single_step_by_hand():
    theta = parameter(np.array([1.0]), dtype=np.float64)
    adamw_step([theta], [np.array([1.0])], init_state([theta]), lr=1e-3)
    # m_hat = v_hat = 1 after bias correction
    expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8) + 0.01 * 1.0)
    assert abs(theta.data[0] - expected) <= 1e-8


def test_adamw_clips_global_norm():
    p = parameter(np.zeros(2), dtype=np.float64)
    p.grad = np.array([3.0, 4.0])
    optimizer = AdamW([p], max_grad_norm=1.0)
    np.testing.assert_allclose(optimizer.grads()[0], [0.6, 0.8])


def test_prng_replays_and_splits():
    a = Prng(42).split(3).generator().standard_normal(8)
    b = Prng(42).split(3).generator().standard_normal(8)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(generator(42, 3).standard_normal(8), a)
    assert not np.array_equal(Prng(42).split(4).generator().standard_normal(8), a)
    assert not np.array_equal(Prng(43).split(3).generator().standard_normal(8), a)
    assert Prng(1).split(0).split(1) != Prng(1).split(1).split(0)


def test_prng_counter_offsets_the_stream():
    base = Prng(5)
    first = base.generator().integers(0, 2**32, size=16)
    assert not np.array_equal(base.advance(1).generator().integers(0, 2**32, size=16), first)
    np.testing.assert_array_equal(base.advance(0).generator().integers(0, 2**32, size=16), first)


def test_checkpoint_is_byte_exact(tmp_path):
    rng = generator(9)
    tensors = {"b.weight": rng.standard_normal((3, 4)).astype(np.float32), "a": np.arange(5, dtype=np.float32)}
    blob = encode_checkpoint(tensors)
    assert int.from_bytes(blob[:8], "little") > 0
    decoded = decode_checkpoint(blob)
    for name, value in tensors.items():
        np.testing.assert_array_equal(decoded[name], value)
    assert encode_checkpoint(decoded) == blob
    path = save_checkpoint(tmp_path / "model.bin", tensors)
    assert path.read_bytes() == blob
    assert sorted(load_checkpoint(path)) == ["a", "b.weight"]


def test_truncated_checkpoint_is_rejected():
    with pytest.raises(LabError):
        decode_checkpoint(b"\x01\x02")
