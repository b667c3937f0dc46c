"""Response generation: dual encoders, a review-attentive decoder, and a
three-way vocabulary / KG-copy / review-copy token mixture.

The decoder fuses information progressively: causal self-attention over the
generated prefix, then cross-attention to the encoded context, to the
(bridged) entity vectors, and finally to the encoded review sentences. The
next-token distribution is a learned convex mixture of a vocabulary softmax
and two copy softmaxes restricted to the KG-entity surface tokens and the
retrieved review tokens in scope.

Ablation switches:
  rev_cp=False  review-copy gate pinned to 0, its scorer absent
  rev_ra=False  review cross-attention sublayers structurally absent
  rev_en=False  review encoder shares all parameters with the context encoder
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor, nn

from .corpus import BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID
from .transformer import (
    DecoderLayer,
    FeedForward,
    MultiHeadAttention,
    TransformerEncoder,
    sinusoidal_positions,
)

__all__ = [
    "DialogueConfig", "DialogueModel", "EncoderStates", "DecoderState",
    "TokenDistribution", "GenInstance", "MultiHeadAttention", "FeedForward",
    "gen_loss", "perplexity", "distinct_n", "generate",
    "save_dialogue", "load_dialogue",
]

RESERVED_IDS = frozenset({PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID})
MAX_RESPONSE_TOKENS = 30


@dataclass
class DialogueConfig:
    vocab_size: int
    d_model: int = 300
    heads: int = 2
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 300
    dropout: float = 0.1
    entity_dim: int = 128
    max_len: int = 1024
    rev_cp: bool = True
    rev_ra: bool = True
    rev_en: bool = True


@dataclass
class EncoderStates:
    context: Tensor        # (len_C, d_model)
    context_mask: Tensor   # (len_C,) bool
    review: Tensor         # (len_R, d_model); a single zero row when empty
    review_mask: Tensor    # (len_R,) bool; all False when empty


@dataclass
class DecoderState:
    prefix_states: Tensor
    a0: Tensor
    a1: Tensor
    a2: Tensor
    a3: Tensor
    output: Tensor


@dataclass
class TokenDistribution:
    pr: Tensor       # (vocab,) mixture
    pr1: Tensor      # vocabulary softmax
    pr2: Tensor      # KG copy, support inside the KG scope
    pr3: Tensor      # review copy, support inside the review scope
    gates: Tensor    # (3,), non-negative, sums to 1


@dataclass
class GenInstance:
    """One teacher-forcing example: inputs plus the target response tokens."""

    context_ids: list[int]
    review_ids: list[int]
    target_ids: list[int]                 # response tokens, EOS-terminated
    kg_scope: list[int] = field(default_factory=list)
    review_scope: list[int] = field(default_factory=list)
    entity_rows: Tensor | None = None     # (l, entity_dim) frozen lookups
    dialogue_id: str = ""


def clean_scope(scope: Sequence[int]) -> list[int]:
    """Drop control tokens from a copy scope; callers pass the result in."""
    return [t for t in scope if t not in RESERVED_IDS]


def _scope_tensor(scope: Sequence[int], device) -> Tensor:
    ids = sorted({int(t) for t in scope})
    return torch.tensor(ids, dtype=torch.long, device=device)


class DialogueModel(nn.Module):
    def __init__(self, config: DialogueConfig):
        super().__init__()
        self.config = config
        c = config
        self.context_encoder = TransformerEncoder(
            c.vocab_size, c.d_model, c.heads, c.enc_layers,
            c.ffn_dim, c.dropout, c.max_len,
        )
        if c.rev_en:
            self.review_encoder = TransformerEncoder(
                c.vocab_size, c.d_model, c.heads, c.enc_layers,
                c.ffn_dim, c.dropout, c.max_len,
            )
        else:
            self.review_encoder = self.context_encoder
        self.entity_bridge = nn.Linear(c.entity_dim, c.d_model)
        self.embed = nn.Embedding(c.vocab_size, c.d_model, padding_idx=PAD_ID)
        self.register_buffer(
            "positions", sinusoidal_positions(c.max_len, c.d_model).float()
        )
        self.layers = nn.ModuleList(
            DecoderLayer(c.d_model, c.heads, c.ffn_dim, c.dropout,
                         review_attention=c.rev_ra)
            for _ in range(c.dec_layers)
        )
        self.vocab_head = nn.Linear(c.d_model, c.vocab_size)
        self.gate = nn.Linear(c.d_model, 3)
        self.kg_copy = nn.Linear(c.d_model, c.d_model, bias=False)
        self.rev_copy = nn.Linear(c.d_model, c.d_model, bias=False) if c.rev_cp else None
        self.dropout = nn.Dropout(c.dropout)

    # ---------------------------------------------------------------- encode

    def encode(self, context_ids: Sequence[int], review_ids: Sequence[int]) -> EncoderStates:
        """Run both encoders; an empty review stream becomes one masked zero row."""
        device = self.embed.weight.device
        ctx = torch.tensor(list(context_ids), dtype=torch.long, device=device)
        x = self.context_encoder(ctx)
        x_mask = torch.ones(x.size(0), dtype=torch.bool, device=device)
        if len(review_ids) == 0:
            r = torch.zeros(1, self.config.d_model, dtype=x.dtype, device=device)
            r_mask = torch.zeros(1, dtype=torch.bool, device=device)
        else:
            rev = torch.tensor(list(review_ids), dtype=torch.long, device=device)
            r = self.review_encoder(rev)
            r_mask = torch.ones(r.size(0), dtype=torch.bool, device=device)
        return EncoderStates(x, x_mask, r, r_mask)

    def bridge_entities(self, entity_rows: Tensor | None) -> tuple[Tensor, Tensor]:
        """Project entity vectors into the decoder width; empty set is masked out."""
        device = self.embed.weight.device
        if entity_rows is None or entity_rows.size(0) == 0:
            return (
                torch.zeros(1, self.config.d_model, device=device),
                torch.zeros(1, dtype=torch.bool, device=device),
            )
        ent = self.entity_bridge(entity_rows.to(self.embed.weight.dtype))
        return ent, torch.ones(ent.size(0), dtype=torch.bool, device=device)

    # ---------------------------------------------------------------- decode

    def _embed_prefix(self, prefix_ids: Sequence[int]) -> Tensor:
        if len(prefix_ids) == 0:
            raise ValueError("empty decoder prefix (BOS is always present)")
        device = self.embed.weight.device
        ids = torch.tensor(list(prefix_ids), dtype=torch.long, device=device)
        y = self.embed(ids) * math.sqrt(self.config.d_model)
        return self.dropout(y + self.positions[: ids.size(0)].to(y.dtype))

    def decode_states(
        self, prefix_ids: Sequence[int], enc: EncoderStates,
        entity_rows: Tensor | None,
    ) -> Tensor:
        """Decoder states for every prefix position, shape (len, d_model)."""
        y = self._embed_prefix(prefix_ids)
        ent, ent_mask = self.bridge_entities(entity_rows)
        for layer in self.layers:
            y = layer(y, enc.context, enc.context_mask, ent, ent_mask,
                      enc.review, enc.review_mask)
        return y

    def decode_step(
        self, prefix_ids: Sequence[int], enc: EncoderStates,
        entity_rows: Tensor | None,
    ) -> DecoderState:
        """One full pass, exposing the last layer's attention chain."""
        y = self._embed_prefix(prefix_ids)
        ent, ent_mask = self.bridge_entities(entity_rows)
        for layer in self.layers[:-1]:
            y = layer(y, enc.context, enc.context_mask, ent, ent_mask,
                      enc.review, enc.review_mask)
        last = self.layers[-1]
        a0 = last.norm0(y + last.dropout(last.self_attn(y, y, y, causal=True)))
        a1 = last.norm1(a0 + last.dropout(
            last.ctx_attn(a0, enc.context, enc.context, key_mask=enc.context_mask)))
        if ent_mask.any():
            a2 = last.norm2(a1 + last.dropout(
                last.ent_attn(a1, ent, ent, key_mask=ent_mask)))
        else:
            a2 = a1
        if last.rev_attn is not None and enc.review_mask.any():
            a3 = last.norm3(a2 + last.dropout(
                last.rev_attn(a2, enc.review, enc.review, key_mask=enc.review_mask)))
        else:
            a3 = a2
        out = last.norm_ffn(a3 + last.dropout(last.ffn(a3)))
        return DecoderState(y, a0, a1, a2, a3, out)

    # --------------------------------------------------------------- mixture

    def _copy_probs(self, states: Tensor, proj: nn.Linear, scope_ids: Tensor) -> Tensor:
        """Softmax over the scope tokens, scattered into vocabulary space."""
        scores = proj(states) @ self.embed.weight[scope_ids].T   # (T, S)
        probs = torch.softmax(scores, dim=-1)
        out = states.new_zeros(states.size(0), self.config.vocab_size)
        out[:, scope_ids] = probs
        return out

    def mixture(
        self,
        states: Tensor,
        kg_scope: Sequence[int],
        review_scope: Sequence[int],
        gate_override: Sequence[float] | None = None,
    ) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
        """Mixed distributions for a (T, d_model) batch of decoder states.

        Returns (pr, pr1, pr2, pr3, gates); empty scopes force the matching
        gate to 0, with the remaining gates renormalized.
        """
        device = states.device
        t = states.size(0)
        vocab = self.config.vocab_size
        kg_ids = _scope_tensor(kg_scope, device)
        rev_ids = _scope_tensor(review_scope, device)
        if self.rev_copy is None:
            rev_ids = rev_ids[:0]

        pr1 = torch.softmax(self.vocab_head(states), dim=-1)
        pr2 = self._copy_probs(states, self.kg_copy, kg_ids) if kg_ids.numel() \
            else states.new_zeros(t, vocab)
        pr3 = self._copy_probs(states, self.rev_copy, rev_ids) if rev_ids.numel() \
            else states.new_zeros(t, vocab)

        if gate_override is not None:
            gates = torch.as_tensor(
                gate_override, dtype=states.dtype, device=device
            ).expand(t, 3)
        else:
            gates = torch.softmax(self.gate(states), dim=-1)
        mask = torch.tensor(
            [1.0, 1.0 if kg_ids.numel() else 0.0, 1.0 if rev_ids.numel() else 0.0],
            dtype=states.dtype, device=device,
        )
        if not bool(mask.any()):
            raise ValueError("all mixture components are empty")
        gates = gates * mask
        total = gates.sum(dim=-1, keepdim=True)
        if bool((total == 0).any()):
            # saturated gate underflowed on every available component; fall
            # back to uniform over the available ones
            fallback = (mask / mask.sum()).expand_as(gates)
            gates = torch.where(total > 0, gates, fallback)
            total = gates.sum(dim=-1, keepdim=True)
        gates = gates / total
        pr = (gates[:, 0:1] * pr1 + gates[:, 1:2] * pr2 + gates[:, 2:3] * pr3)
        return pr, pr1, pr2, pr3, gates

    def next_token_distribution(
        self,
        state: Tensor,
        kg_scope: Sequence[int] = (),
        review_scope: Sequence[int] = (),
        gate_override: Sequence[float] | None = None,
    ) -> TokenDistribution:
        """Mixture for a single decoder state (d_model,)."""
        pr, pr1, pr2, pr3, gates = self.mixture(
            state.unsqueeze(0), kg_scope, review_scope, gate_override
        )
        return TokenDistribution(pr[0], pr1[0], pr2[0], pr3[0], gates[0])

    # ------------------------------------------------------------------ loss

    def sequence_probs(self, inst: GenInstance) -> Tensor:
        """Teacher-forced probability of each target token, shape (T,)."""
        if not inst.target_ids:
            raise ValueError("instance with empty target")
        enc = self.encode(inst.context_ids, inst.review_ids)
        prefix = [BOS_ID] + list(inst.target_ids[:-1])
        states = self.decode_states(prefix, enc, inst.entity_rows)
        pr, *_ = self.mixture(states, inst.kg_scope, inst.review_scope)
        targets = torch.tensor(inst.target_ids, dtype=torch.long, device=pr.device)
        return pr.gather(1, targets.unsqueeze(1)).squeeze(1)


def loss_from_probabilities(prob_seqs: Sequence[Tensor]) -> Tensor:
    """Per-token mean of -log p within each response, then mean over responses."""
    if not prob_seqs:
        raise ValueError("empty batch")
    per_turn = [-torch.log(p.clamp_min(1e-38)).mean() for p in prob_seqs]
    return torch.stack(per_turn).mean()


def perplexity_from_probabilities(prob_seqs: Sequence[Tensor]) -> float:
    """exp of the mean per-token negative log-likelihood, pooled over tokens."""
    if not prob_seqs:
        raise ValueError("empty evaluation set")
    total_nll = sum(float(-torch.log(p.clamp_min(1e-38)).sum()) for p in prob_seqs)
    total_tokens = sum(p.numel() for p in prob_seqs)
    return math.exp(total_nll / total_tokens)


def gen_loss(model: DialogueModel, batch: Sequence[GenInstance]) -> Tensor:
    """Cross-entropy of the target responses: per-token mean within each
    response, then mean over responses."""
    return loss_from_probabilities([model.sequence_probs(inst) for inst in batch])


def perplexity(model: DialogueModel, eval_set: Sequence[GenInstance]) -> float:
    """exp of the mean per-token negative log-likelihood over the whole set."""
    model.eval()
    with torch.no_grad():
        return perplexity_from_probabilities(
            [model.sequence_probs(inst) for inst in eval_set]
        )


def generate(
    model: DialogueModel,
    context_ids: Sequence[int],
    review_ids: Sequence[int] = (),
    entity_rows: Tensor | None = None,
    kg_scope: Sequence[int] = (),
    review_scope: Sequence[int] = (),
    max_len: int = MAX_RESPONSE_TOKENS,
    mode: str = "greedy",
    beam_width: int = 4,
) -> list[int]:
    """Autoregressive decoding from BOS; stops at EOS or max_len tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    model.eval()
    with torch.no_grad():
        enc = model.encode(context_ids, review_ids)
        if mode == "greedy":
            return _greedy(model, enc, entity_rows, kg_scope, review_scope, max_len)
        if mode == "beam":
            return _beam(model, enc, entity_rows, kg_scope, review_scope,
                         max_len, beam_width)
    raise ValueError(f"unknown decoding mode {mode!r}")


def _step_distribution(model, enc, entity_rows, prefix, kg_scope, review_scope):
    states = model.decode_states(prefix, enc, entity_rows)
    pr, *_ = model.mixture(states[-1:], kg_scope, review_scope)
    return pr[0]


def _greedy(model, enc, entity_rows, kg_scope, review_scope, max_len):
    prefix = [BOS_ID]
    out: list[int] = []
    for _ in range(max_len):
        pr = _step_distribution(model, enc, entity_rows, prefix, kg_scope, review_scope)
        token = int(torch.argmax(pr))
        out.append(token)
        if token == EOS_ID:
            break
        prefix.append(token)
    return out


def _beam(model, enc, entity_rows, kg_scope, review_scope, max_len, width):
    beams: list[tuple[float, list[int], bool]] = [(0.0, [], False)]
    for _ in range(max_len):
        grown: list[tuple[float, list[int], bool]] = []
        for score, seq, done in beams:
            if done:
                grown.append((score, seq, True))
                continue
            pr = _step_distribution(
                model, enc, entity_rows, [BOS_ID] + seq, kg_scope, review_scope
            )
            logp = torch.log(pr.clamp_min(1e-38))
            top = torch.topk(logp, min(width, logp.numel()))
            for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                grown.append((score + lp, seq + [tok], tok == EOS_ID))
        grown.sort(key=lambda b: (-b[0], b[1]))
        beams = grown[:width]
        if all(done for _, _, done in beams):
            break
    return beams[0][1]


def distinct_n(utterances: Sequence[Sequence], n: int) -> float:
    """Mean per-sentence ratio of unique to total n-grams.

    Sentences shorter than n contribute 0 (with a warning).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ratios: list[float] = []
    for sent in utterances:
        total = len(sent) - n + 1
        if total < 1:
            warnings.warn(f"sentence of {len(sent)} tokens is shorter than n={n}")
            ratios.append(0.0)
            continue
        grams = {tuple(sent[i : i + n]) for i in range(total)}
        ratios.append(len(grams) / total)
    return sum(ratios) / len(ratios) if ratios else 0.0


def save_dialogue(model: DialogueModel, path: str | Path) -> None:
    torch.save({"config": asdict(model.config), "state": model.state_dict()}, path)


def load_dialogue(path: str | Path) -> DialogueModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = DialogueModel(DialogueConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    return model
