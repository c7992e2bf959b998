# alignment/sampling.py
from typing import List, Sequence

import numpy as np
from scipy.special import softmax

from core.tensor import no_grad
from models.moe.transformer import MoETransformer
from utils import tokenizer


def sample_response(
    model: MoETransformer,
    prompt: Sequence[int],
    rng: np.random.Generator,
    max_new_tokens: int = 16,
    temperature: float = 1.0,
) -> List[int]:
    """Ancestral sampling until EOS, the token limit or the model's context limit."""
    tokens = list(prompt)
    response: List[int] = []
    budget = min(max_new_tokens, model.config.max_seq_len - len(tokens))
    with no_grad():
        for _ in range(budget):
            hidden, _ = model.hidden_states(np.asarray(tokens)[None, :])
            logits = model.lm_head(hidden).data[0, -1].astype(np.float64)
            token = int(rng.choice(logits.size, p=softmax(logits / temperature)))
            tokens.append(token)
            response.append(token)
            if token == tokenizer.EOS:
                break
    return response


def sample_responses(
    model: MoETransformer,
    prompt: Sequence[int],
    n: int,
    rng: np.random.Generator,
    max_new_tokens: int = 16,
    temperature: float = 1.0,
) -> List[List[int]]:
    return [sample_response(model, prompt, rng, max_new_tokens, temperature) for _ in range(n)]
