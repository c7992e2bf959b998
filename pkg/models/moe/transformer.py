# models/moe/transformer.py
import copy
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core import functional as F
from core.prng import Prng
from core.tensor import Tensor, no_grad, parameter, scatter_rows
from models.moe.experts import GatedFFN, moe_forward
from models.moe.losses import aux_loss, total_loss, z_loss
from models.moe.mtp import MtpBlock, mtp_forward_and_loss
from models.moe.router import RouterDecision, route_tokens
from schemas.moe.schemas import MoEConfig
from utils.exceptions import LabErrorReason, require
from utils.instrumentation import Counters, ForwardObserver

# (layer, gemm name, activations, weight) -> output; installed by the quantizer
GemmHook = Callable[[int, str, Tensor, Tensor], Tensor]

MASKED = -1e9


@dataclass
class LmOutput:
    logits: Tensor
    L_LM: Tensor
    L_aux: Tensor
    L_Z: Tensor
    L_MTP: List[Tensor]
    L_total: Tensor
    hidden: Tensor
    decisions: Dict[int, RouterDecision] = field(default_factory=dict)

    def scalars(self) -> Dict[str, float]:
        return {
            "L_LM": self.L_LM.item(),
            "L_aux": self.L_aux.item(),
            "L_Z": self.L_Z.item(),
            "L_MTP": float(sum(loss.item() for loss in self.L_MTP)),
            "L_total": self.L_total.item(),
        }


class MoETransformer:
    """
    Decoder-only transformer: learned positions, pre-norm blocks, causal
    multi-head attention, sparse top-K MoE feed-forward layers and a tied
    embedding / LM head, plus optional MTP blocks.
    """

    def __init__(self, config: MoEConfig, prng: Prng = None, name: str = "policy"):
        self.config = config
        self.name = name
        self.dtype = np.dtype(config.dtype)
        self.params: Dict[str, Tensor] = {}
        self.counters = Counters()
        self.observer: Optional[ForwardObserver] = None
        self.gemm_hook: Optional[GemmHook] = None
        self._init_params((prng or Prng(0)).generator())

    # ------------------------------------------------------------------ parameters

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config

        def normal(key: str, *shape: int) -> None:
            self.params[key] = parameter(rng.normal(0.0, c.init_std, size=shape), name=key, dtype=self.dtype)

        def ones(key: str, size: int) -> None:
            self.params[key] = parameter(np.ones(size), name=key, dtype=self.dtype)

        normal("embed", c.vocab_size, c.d_model)
        normal("pos", c.max_seq_len, c.d_model)
        for layer in range(c.n_layers):
            prefix = f"layers.{layer}"
            ones(f"{prefix}.attn_norm", c.d_model)
            for proj in ("wq", "wk", "wv", "wo"):
                normal(f"{prefix}.attn.{proj}", c.d_model, c.d_model)
            ones(f"{prefix}.ffn_norm", c.d_model)
            if c.is_moe_layer(layer):
                normal(f"{prefix}.router", c.d_model, c.n_experts)
                for expert in range(c.n_experts):
                    normal(f"{prefix}.experts.{expert}.w_in", c.d_model, 2 * c.d_ff)
                    normal(f"{prefix}.experts.{expert}.w_out", c.d_ff, c.d_model)
            else:
                normal(f"{prefix}.ffn.w_in", c.d_model, 2 * c.d_ff)
                normal(f"{prefix}.ffn.w_out", c.d_ff, c.d_model)
        ones("final_norm", c.d_model)
        for depth in range(1, c.mtp_depth + 1):
            ones(f"mtp.{depth}.norm", c.d_model)
            normal(f"mtp.{depth}.w_in", c.d_model, 2 * c.d_ff)
            normal(f"mtp.{depth}.w_out", c.d_ff, c.d_model)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def backbone_parameters(self) -> List[Tensor]:
        return [p for key, p in self.params.items() if not key.startswith("mtp.")]

    def mtp_parameters(self) -> List[Tensor]:
        return [p for key, p in self.params.items() if key.startswith("mtp.")]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {key: p.data.copy() for key, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> "MoETransformer":
        missing = sorted(set(self.params) - set(state))
        require(not missing, LabErrorReason.CONFIG_ERROR, "checkpoint is missing parameters", missing=missing)
        for key, p in self.params.items():
            value = np.asarray(state[key], dtype=self.dtype)
            require(value.shape == p.shape, LabErrorReason.SHAPE_MISMATCH, f"shape mismatch for {key}", key=key)
            p.data = value.copy()
            p.grad = None
        return self

    def clone(self, name: str = None) -> "MoETransformer":
        """Independent copy with fresh counters and no hooks."""
        other = copy.copy(self)
        other.name = name or self.name
        other.params = {key: parameter(p.data.copy(), name=key, dtype=self.dtype) for key, p in self.params.items()}
        other.counters = Counters()
        other.observer = None
        other.gemm_hook = None
        return other

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def experts(self, layer: int) -> List[GatedFFN]:
        prefix = f"layers.{layer}.experts"
        return [
            GatedFFN(self.params[f"{prefix}.{e}.w_in"], self.params[f"{prefix}.{e}.w_out"], f"experts.{e}")
            for e in range(self.config.n_experts)
        ]

    def mtp_blocks(self) -> List[MtpBlock]:
        return [
            MtpBlock(
                self.params[f"mtp.{d}.norm"],
                GatedFFN(self.params[f"mtp.{d}.w_in"], self.params[f"mtp.{d}.w_out"], f"mtp.{d}"),
                self.config.norm_eps,
            )
            for d in range(1, self.config.mtp_depth + 1)
        ]

    # ------------------------------------------------------------------ forward pieces

    def gemm(self, layer: int) -> Callable[[Tensor, Tensor, str], Tensor]:
        def project(x: Tensor, weight: Tensor, name: str) -> Tensor:
            if self.observer is not None:
                self.observer.on_gemm(layer, name, x.data)
            if self.gemm_hook is not None:
                return self.gemm_hook(layer, name, x, weight)
            return x @ weight

        return project

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        length = tokens.shape[1]
        require(
            length <= self.config.max_seq_len,
            LabErrorReason.SEQUENCE_TOO_LONG,
            f"sequence of {length} exceeds max_seq_len={self.config.max_seq_len}",
            length=length,
        )
        require(
            tokens.size == 0 or (tokens.min() >= 0 and tokens.max() < self.config.vocab_size),
            LabErrorReason.INVALID_ARGUMENT,
            "token id outside the vocabulary",
        )
        return tokens

    def _attention(
        self, x: Tensor, layer: int, additive_mask: np.ndarray, query_gate: Optional[np.ndarray] = None
    ) -> Tensor:
        c = self.config
        batch, length, width = x.shape
        head_dim = width // c.n_heads
        project = self.gemm(layer)
        prefix = f"layers.{layer}.attn"

        def heads(t: Tensor) -> Tensor:
            return t.reshape(batch, length, c.n_heads, head_dim).transpose(0, 2, 1, 3)

        q = heads(project(x, self.params[f"{prefix}.wq"], "attn.wq"))
        k = heads(project(x, self.params[f"{prefix}.wk"], "attn.wk"))
        v = heads(project(x, self.params[f"{prefix}.wv"], "attn.wv"))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(head_dim)) + additive_mask
        mixed = (scores.softmax() @ v).transpose(0, 2, 1, 3).reshape(batch, length, width)
        out = project(mixed, self.params[f"{prefix}.wo"], "attn.wo")
        # a query row with no visible key would otherwise average over every key
        return out if query_gate is None else out * query_gate

    def _ffn(
        self,
        x: Tensor,
        layer: int,
        decisions: Dict[int, RouterDecision],
        rows: Optional[np.ndarray] = None,
    ) -> Tensor:
        """``rows`` are the flat indices of the tokens that take part in routing; None means all."""
        c = self.config
        batch, length, width = x.shape
        flat = x.reshape(batch * length, width)
        project = self.gemm(layer)
        if not c.is_moe_layer(layer):
            ffn = GatedFFN(self.params[f"layers.{layer}.ffn.w_in"], self.params[f"layers.{layer}.ffn.w_out"], "ffn")
            return ffn(flat, project).reshape(batch, length, width)
        routed = flat if rows is None else flat[rows]
        decision = route_tokens(
            routed,
            self.params[f"layers.{layer}.router"],
            c.top_k,
            project=lambda h, w: project(h, w, "router"),
        )
        if self.observer is not None:
            self.observer.on_route(layer, decision)
        decisions[layer] = decision
        out = moe_forward(routed, decision, self.experts(layer), gemm=project, counters=self.counters)
        if rows is not None:
            out = scatter_rows(out, rows, batch * length)
        return out.reshape(batch, length, width)

    def hidden_states(
        self,
        tokens: np.ndarray,
        attn_mask: Optional[np.ndarray] = None,
        positions: Optional[np.ndarray] = None,
    ):
        """
        Final-layer hidden states before the last norm, and the routing decision
        of every MoE layer.

        ``attn_mask`` is boolean [B x L x L] (or [L x L]) with True where query i may
        attend key j; the default is causal. A query row with no True entry is padding:
        its attention output is zero and it is left out of routing, so it adds
        nothing to the routing losses or counts. ``positions`` restarts learned position
        ids, e.g. per packed segment.
        """
        c = self.config
        tokens = self._check_tokens(tokens)
        batch, length = tokens.shape
        self.counters.increment("forward")
        if positions is None:
            positions = np.broadcast_to(np.arange(length), (batch, length))
        positions = np.asarray(positions, dtype=np.int64).reshape(batch, length)
        if attn_mask is None:
            attn_mask = np.tril(np.ones((length, length), dtype=bool))
        attn_mask = np.asarray(attn_mask, dtype=bool)
        if attn_mask.ndim == 2:
            attn_mask = attn_mask[None]
        additive = np.where(attn_mask, 0.0, MASKED).astype(self.dtype)[:, None, :, :]
        valid = np.broadcast_to(attn_mask.any(axis=-1), (batch, length))
        query_gate, rows = None, None
        if not valid.all():
            query_gate = valid[..., None].astype(self.dtype)
            rows = np.flatnonzero(valid)
            require(rows.size > 0, LabErrorReason.EMPTY_INPUT, "every position is padding")

        x = self.params["embed"][tokens] + self.params["pos"][positions]
        decisions: Dict[int, RouterDecision] = {}
        for layer in range(c.n_layers):
            prefix = f"layers.{layer}"
            attn_in = F.rms_norm(x, self.params[f"{prefix}.attn_norm"], c.norm_eps)
            x = x + self._attention(attn_in, layer, additive, query_gate)
            ffn_in = F.rms_norm(x, self.params[f"{prefix}.ffn_norm"], c.norm_eps)
            x = x + self._ffn(ffn_in, layer, decisions, rows)
        return x, decisions

    def lm_head(self, hidden: Tensor) -> Tensor:
        normed = F.rms_norm(hidden, self.params["final_norm"], self.config.norm_eps)
        return normed @ self.params["embed"].T

    # ------------------------------------------------------------------ losses

    def lm_forward(
        self,
        tokens: np.ndarray,
        attn_mask: Optional[np.ndarray] = None,
        positions: Optional[np.ndarray] = None,
        loss_mask: Optional[np.ndarray] = None,
        step: int = 0,
    ) -> LmOutput:
        """
        Forward pass with every loss term.

        ``loss_mask`` [B x L] weights prediction position t (the position whose
        logits predict token t+1); the last column is never used.
        """
        c = self.config
        tokens = self._check_tokens(tokens)
        batch, length = tokens.shape
        require(length >= 2, LabErrorReason.SEQUENCE_TOO_SHORT, "need at least 2 tokens for one prediction", length=length)

        hidden, decisions = self.hidden_states(tokens, attn_mask, positions)
        logits = self.lm_head(hidden)
        vocab = logits.shape[-1]
        flat_logits = logits[:, :-1].reshape(batch * (length - 1), vocab)
        targets = tokens[:, 1:].reshape(-1)
        weights = None if loss_mask is None else np.asarray(loss_mask)[:, : length - 1].reshape(-1)
        l_lm = F.cross_entropy(flat_logits, targets, weights)

        if decisions:
            l_aux = sum((aux_loss(d) for d in decisions.values()), Tensor(np.zeros((), dtype=self.dtype)))
            l_z = sum((z_loss(d.logits) for d in decisions.values()), Tensor(np.zeros((), dtype=self.dtype)))
            l_aux = l_aux * (1.0 / len(decisions))
            l_z = l_z * (1.0 / len(decisions))
        else:
            l_aux = Tensor(np.zeros((), dtype=self.dtype))
            l_z = Tensor(np.zeros((), dtype=self.dtype))

        blocks = self.mtp_blocks()
        l_mtp = [
            mtp_forward_and_loss(
                hidden,
                tokens,
                depth,
                blocks,
                self.params["embed"],
                self.params["final_norm"],
                c.norm_eps,
                loss_mask=loss_mask,
                segment_positions=positions,
            )
            for depth in range(1, c.mtp_depth + 1)
            if length >= depth + 2
        ]
        l_total = total_loss(l_lm, l_aux, l_z, step, c)
        for term in l_mtp:
            l_total = l_total + term
        return LmOutput(
            logits=logits.reshape(batch * length, vocab),
            L_LM=l_lm,
            L_aux=l_aux,
            L_Z=l_z,
            L_MTP=l_mtp,
            L_total=l_total,
            hidden=hidden,
            decisions=decisions,
        )

    def response_forward(self, tokens: np.ndarray, start: int) -> Tuple[Tensor, np.ndarray]:
        """
        One forward over a single sequence: log-probabilities of tokens[start:]
        given their prefixes, and the (detached) hidden states at those positions.
        """
        tokens = self._check_tokens(tokens)
        length = tokens.shape[1]
        require(1 <= start < length, LabErrorReason.EMPTY_INPUT, "no response tokens to score", start=start)
        hidden, _ = self.hidden_states(tokens)
        logits = self.lm_head(hidden)[0, start - 1: length - 1]
        return F.token_log_probs(logits, tokens[0, start:]), hidden.data[0, start:].copy()

    def sequence_log_probs(self, tokens: np.ndarray, start: int) -> Tensor:
        """Per-token log-probabilities of tokens[start:] given their prefixes, as a [L - start] tensor."""
        log_probs, _ = self.response_forward(tokens, start)
        return log_probs

    def pooled(self, tokens: np.ndarray) -> Tensor:
        """Mean of the final (normed) hidden states over the sequence."""
        hidden, _ = self.hidden_states(tokens)
        normed = F.rms_norm(hidden, self.params["final_norm"], self.config.norm_eps)
        return normed.mean(axis=1)

    def greedy_next(self, tokens: np.ndarray) -> np.ndarray:
        with no_grad():
            hidden, _ = self.hidden_states(tokens)
            logits = self.lm_head(hidden)
        return logits.data.argmax(axis=-1)
