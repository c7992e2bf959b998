import numpy as np
import pytest
from pydantic import ValidationError

from core.optim import AdamW
from core.prng import Prng, generator
from core.tensor import backward
from models.moe.transformer import MoETransformer
from schemas.moe.schemas import MoEConfig
from schemas.sft.schemas import SftConfig, SftRecord, SftSample
from sft.dataset import encode_record, encode_sample, load_jsonl, parse_jsonl, write_jsonl
from sft.masks import build_attention_mask, build_loss_mask
from sft.packing import pack_samples
from sft.trainer import sft_step, stack_packs, train_sft
from utils import tokenizer
from utils.exceptions import LabError, LabErrorReason


def sample(n_prompt: int, n_answer: int, domain: str = "general", offset: int = 0) -> SftSample:
    return SftSample(
        prompt=[(offset + i) % 256 for i in range(n_prompt)],
        answer=[(offset + 100 + i) % 256 for i in range(n_answer)],
        domain=domain,
    )


def tiny_model(seed: int = 0) -> MoETransformer:
    config = MoEConfig(d_model=8, n_layers=1, n_heads=2, n_experts=4, top_k=2, d_ff=8, max_seq_len=16, dtype="float64")
    return MoETransformer(config, Prng(seed))


def test_encode_record_marks_turn_boundaries():
    record = SftRecord(turns=["hi"], prompt="ok", answer="yes", domain="general")
    encoded = encode_record(record)
    assert encoded.prompt == [104, 105, tokenizer.EOT, 111, 107]
    assert encoded.answer == [121, 101, 115]
    tokens = encode_sample(encoded)
    assert tokens[0] == tokenizer.BOS and tokens[-1] == tokenizer.EOS
    assert [tokens[i] for i in encoded.turn_boundaries] == [tokenizer.EOT]


def test_jsonl_round_trip_and_errors(tmp_path):
    records = [
        SftRecord(prompt="a", answer="b", domain="general"),
        SftRecord(turns=["x"], prompt="c", answer="d", domain="ecommerce"),
    ]
    path = write_jsonl(tmp_path / "sft.jsonl", records)
    assert load_jsonl(path) == records
    assert parse_jsonl(['{"prompt": "a", "answer": "b", "domain": "general"}', "   "]) == records[:1]
    with pytest.raises(LabError) as e:
        parse_jsonl(['{"prompt": "a", "answer": "b", "domain": "general"}', '{"prompt": "a"}'])
    assert e.value.reason == LabErrorReason.CONFIG_ERROR
    assert e.value.context == {"line": 2}
    with pytest.raises(ValidationError):
        SftRecord(prompt="a", answer="", domain="general")


@pytest.mark.parametrize(
    "n_prompt, n_answer, domain, expected",
    [
        (5, 3, "general", 3),
        (5, 3, "ecommerce", 8),
        (0, 2, "general", 2),
        (0, 2, "ecommerce", 2),
    ],
)
def test_loss_mask_counts(n_prompt, n_answer, domain, expected):
    mask = build_loss_mask(sample(n_prompt, n_answer, domain))
    assert mask.shape == (n_prompt + n_answer + 2,)
    assert int(mask.sum()) == expected
    # the position predicting EOS is never weighted
    assert mask[-3] == 1 and mask[-2] == 0 and mask[-1] == 0


def test_general_mask_covers_answer_predictions_only():
    mask = build_loss_mask(sample(3, 2))
    # [BOS] x1 x2 x3 y1 y2 [EOS]: positions 3 and 4 predict y1 and y2
    assert mask.tolist() == [0, 0, 0, 1, 1, 0, 0]


def test_empty_answer_is_rejected():
    with pytest.raises(LabError) as e:
        build_loss_mask(SftSample(prompt=[1], answer=[], domain="general"))
    assert e.value.reason == LabErrorReason.EMPTY_INPUT


def test_two_samples_that_do_not_fit_together():
    packs = pack_samples([sample(2, 2), sample(2, 2, offset=7)], max_len=10)
    assert len(packs) == 2
    assert [p.pad_count for p in packs] == [4, 4]
    assert packs[0].tokens[6:].tolist() == [tokenizer.PAD] * 4
    assert packs[0].segment_ids.tolist() == [0] * 6 + [-1] * 4


def test_full_length_sample_has_no_padding():
    (pack,) = pack_samples([sample(4, 4)], max_len=10)
    assert pack.pad_count == 0
    assert pack.tokens.tolist() == encode_sample(sample(4, 4))
    assert pack.positions.tolist() == list(range(10))


def test_first_fit_uses_earlier_packs():
    packs = pack_samples([sample(2, 2), sample(2, 1), sample(1, 1)], max_len=10)
    assert [p.sample_indices for p in packs] == [[0, 2], [1]]
    assert packs[0].positions.tolist() == [0, 1, 2, 3, 4, 5, 0, 1, 2, 3]


def test_over_length_sample_is_rejected():
    with pytest.raises(LabError) as e:
        pack_samples([sample(1, 1), sample(6, 6)], max_len=10)
    assert e.value.reason == LabErrorReason.SAMPLE_TOO_LONG
    assert e.value.context["sample_indices"] == [1]


def test_packing_conserves_tokens_and_loss_positions():
    rng = generator(0)
    for _ in range(1000):
        samples = [
            sample(int(rng.integers(0, 7)), int(rng.integers(1, 7)), str(rng.choice(["general", "ecommerce"])), int(rng.integers(256)))
            for _ in range(int(rng.integers(1, 9)))
        ]
        packs = pack_samples(samples, max_len=16)
        placed = sorted(i for p in packs for i in p.sample_indices)
        assert placed == list(range(len(samples)))
        assert sum(16 - p.pad_count for p in packs) == sum(len(encode_sample(s)) for s in samples)
        assert sum(int(p.loss_mask.sum()) for p in packs) == sum(int(build_loss_mask(s).sum()) for s in samples)
        for p in packs:
            cursor = 0
            for segment, index in enumerate(p.sample_indices):
                tokens = encode_sample(samples[index])
                assert p.tokens[cursor: cursor + len(tokens)].tolist() == tokens
                assert set(p.segment_ids[cursor: cursor + len(tokens)].tolist()) == {segment}
                cursor += len(tokens)
            assert np.all(p.tokens[cursor:] == tokenizer.PAD)
            assert np.all(p.loss_mask[cursor:] == 0)


def test_attention_mask_exhaustively():
    (pack,) = pack_samples([sample(2, 2), sample(3, 2)], max_len=16)
    mask = build_attention_mask(pack)
    segments = pack.segment_ids
    for i in range(16):
        for j in range(16):
            expected = j <= i and segments[i] == segments[j] and segments[i] >= 0
            assert mask[i, j] == expected, (i, j)


def test_turns_attend_across_turn_boundaries():
    encoded = encode_record(SftRecord(turns=["ab", "cd"], prompt="e", answer="f", domain="general"))
    (pack,) = pack_samples([encoded], max_len=16)
    mask = build_attention_mask(pack)
    first, last = encoded.turn_boundaries[0], len(encode_sample(encoded)) - 1
    assert mask[last, : first + 1].all()
    assert mask[last, : last + 1].all()


def test_pad_positions_do_not_change_loss_or_gradients():
    packs = pack_samples([sample(2, 3), sample(1, 2, "ecommerce")], max_len=16)
    arrays = stack_packs(packs)
    assert (arrays["tokens"] == tokenizer.PAD).any()

    def loss_and_grads(tokens):
        model = tiny_model(1)
        model.zero_grad()
        out = model.lm_forward(
            tokens, attn_mask=arrays["attn_mask"], positions=arrays["positions"], loss_mask=arrays["loss_mask"]
        )
        backward(out.L_LM, params=model.parameters())
        return out.L_LM.item(), {key: p.grad for key, p in model.params.items()}

    base_loss, base_grads = loss_and_grads(arrays["tokens"])
    swapped = np.where(arrays["tokens"] == tokenizer.PAD, 7, arrays["tokens"])
    loss, grads = loss_and_grads(swapped)
    assert loss == pytest.approx(base_loss, abs=1e-12)
    for key, grad in grads.items():
        np.testing.assert_allclose(grad, base_grads[key], atol=1e-12, err_msg=key)


def test_padding_takes_no_part_in_routing_or_the_training_objective():
    packs = pack_samples([sample(2, 3), sample(1, 2, "ecommerce")], max_len=16)
    arrays = stack_packs(packs)
    pad = arrays["tokens"] == tokenizer.PAD
    assert pad.any()

    def forward(tokens):
        model = tiny_model(3)
        model.zero_grad()
        out = model.lm_forward(
            tokens, attn_mask=arrays["attn_mask"], positions=arrays["positions"], loss_mask=arrays["loss_mask"]
        )
        backward(out.L_total, params=model.parameters())
        return model, out, {key: p.grad.copy() for key, p in model.params.items()}

    model, base, base_grads = forward(arrays["tokens"])
    (decision,) = base.decisions.values()
    assert decision.n_tokens == int((~pad).sum())
    assert decision.counts.sum() == decision.n_tokens * model.config.top_k
    # padding rows get no attention output and no expert output
    expected = model.params["embed"].data[tokenizer.PAD] + model.params["pos"].data[arrays["positions"][pad]]
    np.testing.assert_array_equal(base.hidden.data[pad], expected)

    _, swapped, grads = forward(np.where(pad, 7, arrays["tokens"]))
    for name in ("L_LM", "L_aux", "L_Z", "L_total"):
        assert getattr(swapped, name).item() == pytest.approx(getattr(base, name).item(), abs=1e-12), name
    np.testing.assert_array_equal(next(iter(swapped.decisions.values())).counts, decision.counts)
    for key, grad in grads.items():
        np.testing.assert_allclose(grad, base_grads[key], atol=1e-12, err_msg=key)


def test_packed_loss_matches_samples_run_alone():
    samples = [sample(2, 3), sample(3, 1, "ecommerce", offset=40), sample(1, 2, offset=90)]
    packs = pack_samples(samples, max_len=16)
    reference = tiny_model(2)
    weighted = total = 0.0
    for s in samples:
        mask = build_loss_mask(s)
        loss = reference.lm_forward(np.array([encode_sample(s)]), loss_mask=mask[None]).L_LM.item()
        weighted += loss * mask.sum()
        total += mask.sum()

    model = tiny_model(2)
    optimizer = AdamW(model.parameters(), lr=1e-3)
    before = model.state_dict()
    assert sft_step(packs, model, optimizer) == pytest.approx(weighted / total, abs=1e-9)
    assert any(not np.array_equal(before[k], v) for k, v in model.state_dict().items())


def test_batch_without_loss_positions_is_rejected():
    (pack,) = pack_samples([sample(1, 1)], max_len=8)
    pack.loss_mask[:] = 0
    model = tiny_model()
    with pytest.raises(LabError) as e:
        sft_step([pack], model, AdamW(model.parameters()))
    assert e.value.reason == LabErrorReason.EMPTY_INPUT


def test_train_sft_replays():
    samples = [sample(2, 2, offset=i) for i in range(6)]
    config = SftConfig(max_len=16, packs_per_step=2, epochs=2)
    first = train_sft(tiny_model(3), samples, config, Prng(3))
    second = train_sft(tiny_model(3), samples, config, Prng(3))
    assert first == second
    assert [row["epoch"] for row in first] == [0, 0, 1, 1]
