# commands/align_command.py
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import typer

from alignment.cache import precompute_ref_logprobs
from alignment.dataset import load_preferences, write_pairs
from alignment.otpo import forwards_per_response, train_alignment
from alignment.pairs import PromptItem, RuleVerifier, build_preference_pairs, provenance_audit
from alignment.sampling import sample_responses
from commands.common import exit_on_error, finish, load_config, run_context
from core.prng import Prng
from models.moe.storage import model_or_fresh, save_model
from schemas.alignment.schemas import AlignRunConfig, PairBuildConfig
from synthetic.generators import generate_sft_records
from utils import tokenizer
from utils.logger import get_logger
from utils.reporting import write_csv

logger = get_logger(__name__)

align_router = typer.Typer()

COMMAND = "align"


def overlap_score(response: Sequence[int], gold: Sequence[int]) -> float:
    """Position-wise agreement with the reference answer, over the longer of the two."""
    matches = sum(a == b for a, b in zip(response, gold))
    return matches / max(len(response), len(gold), 1)


def synthetic_prompts(n: int, seed: int) -> Tuple[List[PromptItem], Dict[Tuple[int, ...], List[int]]]:
    """Prompts from synthetic SFT records, with each record's answer as the off-policy response."""
    prompts, gold = [], {}
    for record in generate_sft_records(n, seed + 1):
        tokens = (tokenizer.BOS, *tokenizer.encode_conversation(record.turns, record.prompt))
        prompts.append(PromptItem(tokens=tokens, domain=record.domain))
        gold[tokens] = [*tokenizer.encode(record.answer), tokenizer.EOS]
    return prompts, gold


def verifier_for(config: PairBuildConfig) -> Optional[RuleVerifier]:
    if config.max_response_len is None and not config.banned_tokens and not config.require_eos:
        return None
    return RuleVerifier(
        max_len=config.max_response_len,
        banned_tokens=tuple(config.banned_tokens),
        require_eos=config.require_eos,
    )


@align_router.command(COMMAND)
def align(
    ctx: typer.Context,
    otpo: Optional[bool] = typer.Option(None, "--otpo/--no-otpo", help="Transport-weighted tokens or uniform weights."),
    epsilon: Optional[float] = typer.Option(None, min=0.0, help="Entropic regularization of the transport plan."),
    beta_dpo: Optional[float] = typer.Option(None, min=0.0),
    steps: Optional[int] = typer.Option(None, min=0),
    checkpoint: Optional[str] = typer.Option(None, help="Saved model directory used as policy and reference."),
    preferences: Optional[str] = typer.Option(None, help="Preference records as JSON Lines."),
):
    """Preference alignment from mixed-policy pairs against a cached reference."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run,
            AlignRunConfig,
            COMMAND,
            {
                "align.otpo": otpo,
                "align.epsilon": epsilon,
                "align.beta_dpo": beta_dpo,
                "align.steps": steps,
                "checkpoint": checkpoint,
                "preferences_path": preferences,
            },
        )
        prng = Prng(run.seed)
        policy = model_or_fresh(config.checkpoint, config.model, prng.split(1))
        reference = policy.clone("reference")

        pair_stats: Dict[str, int] = {}
        if config.preferences_path:
            pairs = load_preferences(config.preferences_path)
        else:
            prompts, gold = synthetic_prompts(config.n_prompts, run.seed)
            build = config.pairs

            def policy_sampler(prompt, n, rng):
                return sample_responses(policy, prompt, n, rng, build.max_new_tokens, build.temperature)

            def off_source(prompt, n, rng):
                return [gold[tuple(prompt)]]

            def rm(prompt, response):
                return overlap_score(response, gold[tuple(prompt)])

            pairs, stats = build_preference_pairs(
                prompts, policy_sampler, off_source, rm, build.n_candidates, prng.split(3).generator(),
                verifier=verifier_for(build),
            )
            pair_stats = stats.as_dict()

        out_dir = run.out_dir(COMMAND)
        write_pairs(out_dir / "pairs.jsonl", pairs)

        cache = None
        if config.align.cached_reference and pairs:
            cache = precompute_ref_logprobs(pairs, reference)
            cache.save(out_dir / "ref_cache")
        precompute_forwards = reference.counters["forward"]
        policy.counters.reset()
        reference.counters.reset()

        rows = train_alignment(policy, pairs, config.align, prng.split(4), cache=cache, reference=reference)
        write_csv(out_dir / "train_log.csv", rows, columns=["step", "loss"])
        save_model(policy, out_dir / "model")

        online = None if config.align.cached_reference else reference
        losses = [row["loss"] for row in rows]
        metrics = {
            "n_pairs": len(pairs),
            "provenance_audit": provenance_audit(pairs),
            "off_policy_chosen_share": float(np.mean([p.chosen_source == "off_policy" for p in pairs])),
            "reference_precompute_forwards": precompute_forwards,
            "reference_forwards_during_training": reference.counters["forward"],
            "forwards_per_response": forwards_per_response(policy, online, 2 * len(rows)),
            "initial_loss": losses[0] if losses else float("nan"),
            "final_loss": losses[-1] if losses else float("nan"),
        }
        metrics.update({f"pairs_{name}": count for name, count in pair_stats.items()})
        finish(run, COMMAND, config, metrics)
