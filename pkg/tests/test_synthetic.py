import numpy as np
import pytest
from pydantic import ValidationError

from mixture.corpus import load_shards
from schemas.synthetic.schemas import SyntheticConfig, SyntheticShardSpec
from sft.dataset import load_jsonl
from synthetic.generators import (
    generate_markov,
    generate_sft_records,
    gen_synthetic,
    in_memory_shards,
    shard_parameters,
    stationary,
    unigram_kl,
)


def test_tokens_stay_in_their_band():
    spec = SyntheticShardSpec(id=3, vocab_lo=48, vocab_hi=64)
    tokens = generate_markov(spec, seed=1, n_tokens=2000)
    assert tokens.min() >= 48 and tokens.max() < 64
    assert tokens.dtype == np.int64


def test_generation_replays_and_depends_on_shard_id():
    a = SyntheticShardSpec(id=0)
    b = SyntheticShardSpec(id=1)
    np.testing.assert_array_equal(generate_markov(a, 5, 500), generate_markov(a, 5, 500))
    assert not np.array_equal(generate_markov(a, 5, 500), generate_markov(b, 5, 500))
    assert not np.array_equal(generate_markov(a, 5, 500), generate_markov(a, 6, 500))


def test_stationary_distribution_is_fixed_by_the_chain():
    spec = SyntheticShardSpec(id=2)
    unigram, transition = shard_parameters(spec, seed=0)
    np.testing.assert_allclose(unigram @ transition, unigram, atol=1e-10)
    assert unigram.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(stationary(np.array([[0.0, 1.0], [1.0, 0.0]])), [0.5, 0.5], atol=1e-12)


@pytest.mark.parametrize("order, n_tokens, bound", [(0, 20_000, 0.01), (1, 50_000, 0.05)])
def test_empirical_unigram_is_close_to_the_generator(order, n_tokens, bound):
    spec = SyntheticShardSpec(id=0, markov_order=order)
    tokens = generate_markov(spec, seed=3, n_tokens=n_tokens)
    assert 0.0 <= unigram_kl(tokens, spec, seed=3) <= bound


def test_band_validation():
    with pytest.raises(ValidationError):
        SyntheticShardSpec(id=0, vocab_lo=16, vocab_hi=16)
    with pytest.raises(ValidationError):
        SyntheticShardSpec(id=0, vocab_lo=250, vocab_hi=260)
    with pytest.raises(ValidationError):
        SyntheticShardSpec(id=0, kind="template")
    with pytest.raises(ValidationError):
        SyntheticConfig(n_shards=2, unknown=1)


def test_default_shards_tile_disjoint_bands():
    specs = SyntheticConfig(n_shards=4, band_width=8).shard_specs()
    assert [(s.vocab_lo, s.vocab_hi) for s in specs] == [(0, 8), (8, 16), (16, 24), (24, 32)]
    assert [s.label for s in specs] == ["lang00", "lang01", "lang02", "lang03"]


def test_sft_records_cover_both_domains():
    records = generate_sft_records(40, seed=0)
    assert {r.domain for r in records} == {"ecommerce", "general"}
    assert records == generate_sft_records(40, seed=0)
    assert all(r.answer for r in records)


def test_gen_synthetic_writes_a_loadable_corpus(tmp_path):
    config = SyntheticConfig(n_shards=3, n_tokens=1000, n_sft_records=10)
    stats = gen_synthetic(config, seed=4, out_dir=tmp_path)
    shards = load_shards(tmp_path / "manifest.json")
    assert [s.id for s in shards] == [0, 1, 2]
    for shard, in_memory in zip(shards, in_memory_shards(config, seed=4)):
        np.testing.assert_array_equal(shard.tokens, in_memory.tokens)
    assert len(load_jsonl(tmp_path / "sft.jsonl")) == 10
    assert (tmp_path / "shard_specs.json").exists()
    assert stats["n_shards"] == 3
    assert stats["max_unigram_kl"] >= stats["shard_00_unigram_kl"]
