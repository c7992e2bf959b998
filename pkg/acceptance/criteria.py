# acceptance/criteria.py
"""
Release checks. Each returns a Check: pass/fail, one headline value and a short
deterministic detail string.
"""
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from alignment.cache import precompute_ref_logprobs
from alignment.otpo import forwards_per_response, mean_token_dpo_loss, train_alignment, weighted_dpo_loss
from alignment.reward import pairwise_accuracy, rm_train
from alignment.sinkhorn import otpo_weights, sinkhorn
from core.gradcheck import OP_REGISTRY, check_gradients
from core.prng import Prng, generator
from core.tensor import Tensor, backward, parameter
from mixture.regressor import fit_arrays, r_squared
from mixture.search import run_mixture_search
from models.moe.experts import dense_moe_forward, make_experts, moe_forward
from models.moe.losses import aux_loss, z_loss
from models.moe.router import decide, route_tokens
from models.moe.trainer import routing_entropy, train_lm
from models.moe.transformer import MoETransformer
from models.reward.reward_model import RewardModel
from planner.costs import max_stage_time
from planner.memory import memory_model
from planner.partition import partition_exhaustive, partition_uneven, uniform_plan
from planner.simulator import simulate_pipeline
from quantization.experiment import run_quantize_experiment
from quantization.fp8 import enumerate_grid, round_to_e4m3
from quantization.report import final_hidden
from quantization.smoothing import fold_smoothing
from schemas.acceptance.schemas import AcceptanceBudget, AcceptanceConfig
from schemas.alignment.schemas import AlignConfig, RewardConfig, TokenWeights
from schemas.mixture.schemas import SweepConfig
from schemas.moe.schemas import MoEConfig, PretrainConfig
from schemas.planner.schemas import StageCostModel
from schemas.quantization.schemas import QuantizeConfig
from schemas.sft.schemas import SftRecord, SftSample
from schemas.synthetic.schemas import SyntheticConfig, SyntheticShardSpec
from sft.dataset import encode_record, encode_sample
from sft.masks import build_attention_mask, build_loss_mask
from sft.packing import pack_samples
from synthetic.generators import generate_markov, in_memory_shards, separable_preferences
from utils.reporting import write_csv


@dataclass
class Check:
    passed: bool
    value: float
    detail: str = ""


def _f64(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


def _tiny_config(**overrides) -> MoEConfig:
    values = dict(d_model=8, n_layers=1, n_heads=2, n_experts=4, top_k=2, d_ff=8, max_seq_len=32)
    values.update(overrides)
    return MoEConfig(**values)


def load_balance_exactness(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    uniform = aux_loss(decide(_f64(np.zeros((4, 4))), 4)).item()
    collapsed_logits = np.zeros((6, 4))
    collapsed_logits[:, 0] = 60.0
    collapsed = aux_loss(decide(_f64(collapsed_logits), 1)).item()
    hand = aux_loss(decide(_f64(np.log([[0.9, 0.1], [0.8, 0.2]])), 1)).item()
    error = max(abs(uniform - 1.0), abs(collapsed - 4.0), abs(hand - 1.7))
    return Check(error <= 1e-6, error, f"uniform={uniform:.9f} collapsed={collapsed:.9f} hand={hand:.9f}")


def balancing_efficacy(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    """Usage entropy with and without the balancing loss, top-1 routing on a peaky chain."""
    spec = SyntheticShardSpec(id=0, markov_order=1, vocab_lo=0, vocab_hi=8, concentration=0.1)
    stream = generate_markov(spec, seed, 20_000)
    train, heldout = stream[:18_000], stream[18_000:]
    entropies = {}
    for alpha in (0.0, 0.01):
        config = MoEConfig(
            d_model=16, n_layers=1, n_heads=2, n_experts=4, top_k=1, d_ff=16, max_seq_len=32, mtp_depth=0,
            alpha0=alpha, alpha_floor=alpha, beta0=0.0,
        )
        model = MoETransformer(config, Prng(seed).split(1), name=f"alpha{alpha}")
        pretrain = PretrainConfig(steps=budget.balancing_steps, batch_size=8, seq_len=32, lr=1e-2, log_every=100)
        train_lm(model, train, pretrain, Prng(seed).split(2))
        entropies[alpha] = routing_entropy(model, heldout, 32)
    gain = entropies[0.01] - entropies[0.0]
    return Check(gain >= 0.1, gain, f"entropy balanced={entropies[0.01]:.4f} control={entropies[0.0]:.4f}")


def z_loss_analytic(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    error = max(abs(z_loss(_f64(np.zeros((3, n)))).item() - math.log(n) ** 2) for n in (1, 2, 4, 16))
    return Check(error <= 1e-6, error, "N in 1,2,4,16")


def gradient_suite(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    worst, worst_op = 0.0, ""
    for op in sorted(OP_REGISTRY):
        for case in range(budget.gradcheck_cases):
            error = check_gradients(OP_REGISTRY[op], generator(seed + case, 7))
            if error > worst:
                worst, worst_op = error, op
    return Check(worst <= 1e-4, worst, f"{len(OP_REGISTRY)} ops x {budget.gradcheck_cases} cases, worst {worst_op}")


def mtp_decoupling(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    model = MoETransformer(_tiny_config(mtp_depth=2, dtype="float64"), Prng(seed))
    tokens = generator(seed, 12).integers(0, 256, size=(2, 8))
    model.zero_grad()
    out = model.lm_forward(tokens)
    backward(out.L_MTP[0] + out.L_MTP[1], params=model.parameters())
    leak = max(float(np.abs(p.grad).max()) for p in model.backbone_parameters())
    model.zero_grad()
    out = model.lm_forward(tokens)
    backward(out.L_LM, params=model.parameters())
    leak = max(leak, max(float(np.abs(p.grad).max()) for p in model.mtp_parameters()))

    rng = generator(seed, 6)
    deviation = 0.0
    for _ in range(10):
        w_in = [parameter(rng.standard_normal((6, 10)) * 0.5, dtype=np.float64) for _ in range(4)]
        w_out = [parameter(rng.standard_normal((5, 6)) * 0.5, dtype=np.float64) for _ in range(4)]
        experts = make_experts(w_in, w_out, "experts")
        hidden = _f64(rng.standard_normal((9, 6)))
        decision = route_tokens(hidden, _f64(rng.standard_normal((6, 4))), 2)
        sparse = moe_forward(hidden, decision, experts)
        dense = dense_moe_forward(hidden, decision, experts)
        deviation = max(deviation, float(np.abs(sparse.data - dense.data).max()))
    return Check(leak == 0.0 and deviation <= 1e-6, deviation, f"gradient leak={leak:.3g}")


def _random_sample(rng: np.random.Generator) -> SftSample:
    return SftSample(
        prompt=rng.integers(0, 256, size=int(rng.integers(0, 7))).tolist(),
        answer=rng.integers(0, 256, size=int(rng.integers(1, 7))).tolist(),
        domain=str(rng.choice(["general", "ecommerce"])),
    )


def mixed_loss_sft(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    rng = generator(seed, 16)
    violations = 0
    samples = [_random_sample(rng) for _ in range(budget.sft_samples)]
    for s in samples:
        expected = len(s.answer) if s.domain == "general" else len(s.prompt) + len(s.answer)
        violations += int(build_loss_mask(s).sum()) != expected

    max_len = 16
    causal = np.tril(np.ones((max_len, max_len), dtype=bool))
    begin = 0
    while begin < len(samples):
        batch = samples[begin: begin + int(rng.integers(1, 9))]
        begin += len(batch)
        packs = pack_samples(batch, max_len)
        placed = sorted(i for p in packs for i in p.sample_indices)
        violations += placed != list(range(len(batch)))
        violations += sum(max_len - p.pad_count for p in packs) != sum(len(encode_sample(s)) for s in batch)
        violations += sum(int(p.loss_mask.sum()) for p in packs) != sum(int(build_loss_mask(s).sum()) for s in batch)
        for pack in packs:
            segments = pack.segment_ids
            expected = causal & (segments[:, None] == segments[None, :]) & (segments[:, None] >= 0)
            violations += int((build_attention_mask(pack) != expected).sum())

    conversation = encode_record(SftRecord(turns=["ab", "cd"], prompt="e", answer="f", domain="general"))
    (pack,) = pack_samples([conversation], max_len)
    last = len(encode_sample(conversation)) - 1
    violations += not build_attention_mask(pack)[last, : last + 1].all()
    return Check(violations == 0, float(violations), f"{len(samples)} samples")


def otpo_checks(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    rng = generator(seed, 7)
    failures = []
    violation = 0.0
    for _ in range(20):
        n, m = rng.integers(1, 6, size=2)
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        plan = sinkhorn(rng.random((n, m)) * 2.0, a, b, epsilon=0.5, tol=1e-9, max_iter=10_000)
        violation = max(violation, plan.max_violation)
        if not plan.converged:
            failures.append("converged")
    if violation > 1e-4:
        failures.append("marginals")

    a, b = np.array([0.2, 0.8]), np.array([0.5, 0.3, 0.2])
    if np.abs(sinkhorn(np.zeros((2, 3)), a, b, epsilon=0.1).coupling - np.outer(a, b)).max() > 1e-6:
        failures.append("product")

    weights = otpo_weights(rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), epsilon=1e6)
    if max(np.abs(weights.w_c - 1 / 3).max(), np.abs(weights.w_r - 1 / 5).max()) > 1e-4:
        failures.append("uniform")

    logps_c = _f64(-rng.random(4))
    logps_r = _f64(-rng.random(6))
    tie = weighted_dpo_loss(logps_c, logps_r, logps_c.data, logps_r.data, TokenWeights.uniform(4, 6), 0.1).item()
    if abs(tie - math.log(2)) > 1e-9:
        failures.append("ln2")

    ref_c, ref_r = -rng.random(4), -rng.random(6)
    weighted = weighted_dpo_loss(logps_c, logps_r, ref_c, ref_r, TokenWeights.uniform(4, 6), 0.1).item()
    mean_token = mean_token_dpo_loss(logps_c, logps_r, ref_c, ref_r, 0.1).item()
    if abs(weighted - mean_token) > 1e-6:
        failures.append("mean_token")
    return Check(not failures, violation, ",".join(failures) or "all hold")


def reward_model(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    pairs = separable_preferences(budget.rm_pairs, seed)
    n_train = int(len(pairs) * 0.75)
    train, heldout = pairs[:n_train], pairs[n_train:]
    margin = 0.5
    model = RewardModel(MoETransformer(_tiny_config(), Prng(seed)))
    model, rows = rm_train(model, train, RewardConfig(margin=margin, epochs=3, batch_size=8), Prng(seed).split(1))
    initial_error = abs(rows[0]["loss"] - math.log1p(math.exp(margin)))
    accuracy = pairwise_accuracy(model, heldout)
    return Check(
        initial_error <= 1e-6 and accuracy >= 0.95,
        accuracy,
        f"initial loss error={initial_error:.3g} heldout={len(heldout)}",
    )


def reference_cache(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    pairs = separable_preferences(3, seed)
    policy = MoETransformer(_tiny_config(), Prng(seed))
    reference = policy.clone("reference")
    cache = precompute_ref_logprobs(pairs, reference)
    spent = reference.counters["forward"]
    config = AlignConfig(steps=4, lr=1e-3)
    train_alignment(policy, pairs, config, Prng(seed), cache=cache, reference=reference)
    during = reference.counters["forward"] - spent
    cached = forwards_per_response(policy, None, 2 * config.steps)

    policy = MoETransformer(_tiny_config(), Prng(seed))
    reference = policy.clone("reference")
    online_config = AlignConfig(steps=3, cached_reference=False)
    train_alignment(policy, pairs, online_config, Prng(seed), reference=reference)
    online = forwards_per_response(policy, reference, 2 * online_config.steps)
    return Check(
        during == 0 and cached == 1.0 and online == 2.0,
        cached,
        f"reference forwards during training={during} online={online:.1f}",
    )


def mixture_search(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    shards = in_memory_shards(SyntheticConfig(n_shards=budget.mixture_shards, n_tokens=20_000, n_sft_records=0), seed)
    sweep = SweepConfig(
        n_mixtures=budget.n_mixtures,
        steps=budget.sweep_steps,
        cross_scale_mixtures=min(budget.cross_scale_mixtures, budget.n_mixtures),
        run_validation=False,
    )
    result = run_mixture_search(sweep, shards, seed, jobs)
    spearman = result.screening.cross_scale_spearman

    rng = Prng(seed).split(9).generator()
    g = rng.standard_normal(16)
    X = rng.dirichlet(np.ones(16), size=1024)
    y = X @ g + 0.002 * rng.standard_normal(1024)
    r2 = r_squared(y[512:], fit_arrays(X[:512], y[:512], n_trees=1000, learning_rate=0.1).predict(X[512:]))
    passed = result.chosen_percentile <= 0.1 and r2 >= 0.9 and spearman is not None and spearman >= 0.8
    return Check(
        passed,
        result.chosen_percentile,
        f"runs={len(result.runs)} r2={r2:.4f} cross_scale_spearman={spearman if spearman is None else round(spearman, 4)}",
    )


def quantizer(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    failures = []
    grid = enumerate_grid()
    finite = grid[np.isfinite(grid)]
    if not np.array_equal(round_to_e4m3(finite), finite):
        failures.append("grid")

    model = MoETransformer(
        MoEConfig(vocab_size=64, d_model=8, n_layers=2, n_heads=2, n_experts=3, top_k=2, d_ff=8, max_seq_len=16,
                  mtp_depth=0, dtype="float64"),
        Prng(seed),
    )
    rng = generator(seed, 11)
    folded = fold_smoothing(model, {layer: np.exp(rng.normal(0, 1.5, size=8)) for layer in (0, 1)})
    tokens = rng.integers(0, 64, size=(4, 16))
    reference = final_hidden(model, tokens)
    fold_error = float(np.abs(final_hidden(folded, tokens) - reference).max() / np.abs(reference).max())
    if fold_error > 1e-5:
        failures.append("fold")

    tau = 64
    experiment = run_quantize_experiment(
        QuantizeConfig(model="skewed", tau=tau, metric="output_mse", calibration_sequences=40, seq_len=8,
                       pool_sequences=200, eval_sequences=16),
        seed,
    )
    if experiment.aware.stats.min_count() < tau:
        failures.append("balance")
    naive = experiment.naive_report.by_slice()
    aware = experiment.aware_report.by_slice()
    if any(aware[name].quant_value > naive[name].quant_value for name in naive):
        failures.append("slices")
    if not aware["rare"].quant_value < naive["rare"].quant_value:
        failures.append("rare")
    return Check(not failures, fold_error, ",".join(failures) or "all hold")


def _integer_costs(rng: np.random.Generator, n_layers: int) -> StageCostModel:
    return StageCostModel(
        forward=rng.integers(0, 6, size=n_layers).astype(float).tolist(),
        backward=rng.integers(0, 11, size=n_layers).astype(float).tolist(),
        embed_extra=float(rng.integers(0, 4)),
        loss_extra=float(rng.integers(0, 6)),
        recompute_factor=float(rng.choice([0.0, 0.5, 1.0])),
    )


def planner(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    failures = []
    for case in range(budget.planner_seeds):
        rng = generator(seed + case, 12)
        n_layers = int(rng.integers(1, 13))
        stages = int(rng.integers(1, min(4, n_layers) + 1))
        recompute = sorted(int(s) for s in np.flatnonzero(rng.random(stages) < 0.4))
        costs = _integer_costs(rng, n_layers)
        plan = partition_uneven(costs, stages, recompute_stages=recompute)
        cuts, optimum = partition_exhaustive(costs, stages, recompute)
        if plan.cuts != cuts or max_stage_time(plan, costs) != optimum:
            failures.append(f"partition@{case}")
            break
        if stages <= n_layers:
            if max_stage_time(plan, costs) > max_stage_time(uniform_plan(n_layers, stages, recompute_stages=recompute), costs):
                failures.append(f"uniform@{case}")
                break

    worst_bubble = 0.0
    for stages in range(1, 5):
        for microbatches in range(1, 9):
            plan = uniform_plan(2 * stages, stages, microbatches=microbatches)
            bubble = simulate_pipeline(plan, StageCostModel(forward=[1.0] * 2 * stages, backward=[2.0] * 2 * stages))
            worst_bubble = max(worst_bubble, abs(bubble.bubble_fraction - (stages - 1) / (microbatches + stages - 1)))
    if worst_bubble > 1e-12:
        failures.append("bubble")

    for case in range(20):
        rng = generator(seed + case, 13)
        stages = int(rng.integers(1, 5))
        n_layers = stages * int(rng.integers(1, 4))
        costs = StageCostModel(
            forward=[1.0] * n_layers,
            backward=[2.0] * n_layers,
            act_memory=rng.uniform(0, 10, size=n_layers).tolist(),
            weight_memory=rng.uniform(0, 10, size=n_layers).tolist(),
            retention=float(rng.uniform(0, 1)),
        )
        microbatches = int(rng.integers(1, 9))
        base = memory_model(uniform_plan(n_layers, stages, microbatches=microbatches), costs)
        for stage in range(stages):
            recomputed = memory_model(
                uniform_plan(n_layers, stages, microbatches=microbatches, recompute_stages=[stage]), costs
            )
            if recomputed[stage] > base[stage]:
                failures.append(f"memory@{case}")
    return Check(not failures, worst_bubble, ",".join(failures[:3]) or f"{budget.planner_seeds} partitions")


REPLAY_CRITERIA = (1, 3, 12)


def _replay_bytes(budget: AcceptanceBudget, seed: int, jobs: int, out_dir: Path) -> bytes:
    # imported here: the suite registers this module's checks
    from acceptance.suite import run_acceptance, write_acceptance

    config = AcceptanceConfig(full=budget, quick=budget, criteria=list(REPLAY_CRITERIA))
    report = write_acceptance(run_acceptance(config, seed, jobs=jobs), out_dir / "acceptance.csv")
    model = MoETransformer(_tiny_config(), Prng(seed))
    stream = generator(seed, 14).integers(0, 256, size=4096)
    log = train_lm(model, stream, PretrainConfig(steps=3, batch_size=2, seq_len=16), Prng(seed).split(3))
    train_log = write_csv(out_dir / "train_log.csv", log)
    return report.read_bytes() + train_log.read_bytes()


def determinism(budget: AcceptanceBudget, seed: int, jobs: int) -> Check:
    """
    Runs the acceptance pipeline for the deterministic criteria 1, 3 and 12 twice
    and compares the acceptance.csv bytes, together with a short training log.
    The training-heavy criteria are not replayed.
    """
    with tempfile.TemporaryDirectory() as first_dir, tempfile.TemporaryDirectory() as second_dir:
        first = _replay_bytes(budget, seed, jobs, Path(first_dir))
        second = _replay_bytes(budget, seed, jobs, Path(second_dir))
    return Check(first == second, float(len(first)), "identical" if first == second else "replay differs")
