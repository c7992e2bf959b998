# alignment/pairs.py
"""
Mixed-policy preference pairs.

The rejected response is always the policy's own worst-scored sample. The
chosen response is the best-scored candidate from the stronger off-policy
source and, for domains with a large output space, the policy samples too.
"""
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from schemas.alignment.schemas import Candidate, PreferencePair
from utils import tokenizer
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

# domain -> where chosen candidates may come from; small, structured output
# spaces take off-policy candidates only
DOMAIN_POLICY: Dict[str, str] = {
    "agent": "off",
    "instruction_following": "off",
    "ecommerce": "on",
    "multilingual": "on",
    "general": "on",
}

SOURCE_RANK = {"off_policy": 0, "on_policy": 1}

Scorer = Callable[[Sequence[int], Sequence[int]], float]
Sampler = Callable[[Sequence[int], int, np.random.Generator], List[List[int]]]


@dataclass(frozen=True)
class PromptItem:
    tokens: Tuple[int, ...]
    domain: str = "general"


@dataclass
class RuleVerifier:
    """Rule checks a candidate must pass before the reward model ranks it."""

    max_len: Optional[int] = None
    banned_tokens: Sequence[int] = ()
    require_eos: bool = False

    def __call__(self, response: Sequence[int]) -> bool:
        if not response:
            return False
        if self.max_len is not None and len(response) > self.max_len:
            return False
        if self.require_eos and response[-1] != tokenizer.EOS:
            return False
        banned = set(self.banned_tokens)
        return not any(token in banned for token in response)


@dataclass
class PairStats:
    counts: Counter = field(default_factory=Counter)

    def bump(self, name: str) -> None:
        self.counts[name] += 1

    def as_dict(self) -> Dict[str, int]:
        return {name: self.counts[name] for name in sorted(self.counts)}


def chosen_pool_policy(domain: str) -> str:
    return DOMAIN_POLICY.get(domain, "on")


def select_rejected(on_policy: Sequence[Candidate]) -> Candidate:
    """Lowest score; ties go to the lowest candidate index."""
    require(len(on_policy) >= 1, LabErrorReason.EMPTY_INPUT, "no on-policy candidates")
    return min(on_policy, key=lambda c: (c.score, c.index))


def select_chosen(candidates: Sequence[Candidate]) -> Candidate:
    """Highest score; ties go to off-policy first, then the lowest candidate index."""
    require(len(candidates) >= 1, LabErrorReason.EMPTY_INPUT, "no chosen candidates")
    return min(candidates, key=lambda c: (-c.score, SOURCE_RANK[c.source], c.index))


def build_preference_pairs(
    prompts: Sequence[PromptItem],
    policy: Sampler,
    off_source: Sampler,
    rm: Scorer,
    n_candidates: int,
    rng: np.random.Generator,
    verifier: Optional[RuleVerifier] = None,
) -> Tuple[List[PreferencePair], PairStats]:
    require(n_candidates >= 1, LabErrorReason.INVALID_ARGUMENT, "n_candidates must be >= 1")
    stats = PairStats()
    pairs: List[PreferencePair] = []
    for item in prompts:
        prompt = list(item.tokens)

        def scored(responses: List[List[int]], source: str) -> List[Candidate]:
            candidates = []
            for index, tokens in enumerate(responses):
                if not tokens:
                    stats.bump("empty_candidate")
                    continue
                if verifier is not None and not verifier(tokens):
                    stats.bump("rejected_by_verifier")
                    continue
                candidates.append(Candidate(tokens=tokens, source=source, index=index, score=rm(prompt, tokens)))
            return candidates

        on_policy = scored(policy(prompt, n_candidates, rng), "on_policy")
        off_policy = scored(off_source(prompt, n_candidates, rng), "off_policy")
        if not on_policy:
            stats.bump("discarded_no_on_policy")
            continue
        rejected = select_rejected(on_policy)
        pool = off_policy if chosen_pool_policy(item.domain) == "off" else off_policy + on_policy
        if not pool:
            stats.bump("discarded_no_chosen")
            continue
        chosen = select_chosen(pool)
        if chosen.score <= rejected.score or chosen.tokens == rejected.tokens:
            stats.bump("discarded_score")
            continue
        pairs.append(
            PreferencePair(
                prompt=prompt,
                chosen=chosen.tokens,
                rejected=rejected.tokens,
                chosen_source=chosen.source,
                domain=item.domain,
                chosen_score=chosen.score,
                rejected_score=rejected.score,
            )
        )
        stats.bump(f"kept_{chosen.source}")
    logger.info("built %d preference pairs from %d prompts: %s", len(pairs), len(prompts), stats.as_dict())
    return pairs, stats


def provenance_audit(pairs: Sequence[PreferencePair]) -> float:
    """Share of pairs whose rejected response carries the on-policy tag."""
    if not pairs:
        return 1.0
    return sum(p.rejected_source == "on_policy" for p in pairs) / len(pairs)
