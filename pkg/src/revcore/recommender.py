"""Entity-based recommendation over KG embeddings enriched by review entities.

Entity vectors (d = 128 by default) come from a relational graph convolution
over the KG, or straight from a learned lookup table when the graph stage is
disabled (num_layers = 0). A context's entities, extended by entities found
in retrieved review sentences, are pooled into a user vector by a small
self-attention layer, and a catalog-sized head turns that vector into a
probability distribution over items.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .corpus import KnowledgeGraph, Vocabulary, link_entities
from .retrieval import ReviewSet

ENTITY_DIM = 128


@dataclass
class EntitySet:
    """Entities extracted from the context and from retrieved reviews.

    merged is always context ++ review, duplicates kept: repeated mentions
    are a real signal the attention pool may exploit.
    """

    context_entities: list[str]
    review_entities: list[str]

    @property
    def merged(self) -> list[str]:
        return self.context_entities + self.review_entities

    @property
    def l(self) -> int:
        return len(self.context_entities) + len(self.review_entities)


def build_entity_set(
    context_turns: Sequence[Sequence[str]],
    review_set: ReviewSet | None,
    kg: KnowledgeGraph,
    vocab: Vocabulary | None = None,
) -> EntitySet:
    """Extract context entities turn by turn, then review-sentence entities.

    ``context_turns`` holds token strings per turn; review sentences carry
    token ids and need ``vocab`` to decode (required if the review set is
    non-empty).
    """
    e_c = [ent for turn in context_turns for ent in link_entities(turn, kg)]
    e_r: list[str] = []
    if review_set is not None and len(review_set):
        if vocab is None:
            raise ValueError("vocab required to link review-sentence entities")
        for sentence in review_set.sentences():
            e_r.extend(link_entities(vocab.decode(sentence.tokens), kg))
    return EntitySet(e_c, e_r)


def _normalized_adjacency(kg: KnowledgeGraph, relation: str) -> Tensor:
    """Symmetric degree-normalized adjacency D^-1/2 (A + A^T) D^-1/2."""
    n = len(kg.entities)
    adj = torch.zeros(n, n)
    for head, rel, tail in kg.triples:
        if rel != relation:
            continue
        hi, ti = kg.entity_index[head], kg.entity_index[tail]
        adj[hi, ti] = 1.0
        adj[ti, hi] = 1.0
    deg = adj.sum(dim=1)
    inv_sqrt = torch.where(deg > 0, deg.rsqrt(), torch.zeros_like(deg))
    return inv_sqrt.unsqueeze(1) * adj * inv_sqrt.unsqueeze(0)


class RelationalGraphEncoder(nn.Module):
    """Relational graph convolution with per-relation weights.

    Per layer: h' = ReLU(h W_self + sum_r A_r h W_r + b), A_r symmetric
    degree-normalized. Zero layers is the identity (the no-KG path).
    """

    def __init__(self, kg: KnowledgeGraph, dim: int, num_layers: int = 1):
        super().__init__()
        if num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        self.num_layers = num_layers
        self.relations = list(kg.relations)
        adjs = torch.stack(
            [_normalized_adjacency(kg, r) for r in self.relations]
        ) if self.relations else torch.zeros(0, len(kg.entities), len(kg.entities))
        self.register_buffer("adjs", adjs)
        self.self_weights = nn.ParameterList(
            nn.Parameter(torch.empty(dim, dim)) for _ in range(num_layers)
        )
        self.rel_weights = nn.ParameterList(
            nn.Parameter(torch.empty(len(self.relations), dim, dim))
            for _ in range(num_layers)
        )
        self.biases = nn.ParameterList(
            nn.Parameter(torch.zeros(dim)) for _ in range(num_layers)
        )
        for w in self.self_weights:
            nn.init.xavier_uniform_(w)
        for w in self.rel_weights:
            nn.init.xavier_uniform_(w)

    def forward(self, table: Tensor) -> Tensor:
        h = table
        for layer in range(self.num_layers):
            out = h @ self.self_weights[layer] + self.biases[layer]
            if self.relations:
                neighbor = torch.einsum(
                    "rnm,md->rnd", self.adjs.to(h.dtype), h
                )
                out = out + torch.einsum(
                    "rnd,rde->ne", neighbor, self.rel_weights[layer]
                )
            h = torch.relu(out)
        return h


def encode_kg(
    kg: KnowledgeGraph,
    table_init: Tensor,
    encoder: RelationalGraphEncoder | None = None,
    num_layers: int = 1,
) -> Tensor:
    """Run the graph convolution over an initial entity table."""
    if encoder is None:
        encoder = RelationalGraphEncoder(kg, table_init.size(1), num_layers)
    return encoder(table_init)


class AttentionPool(nn.Module):
    """Self-attention pooling of entity rows into one user vector.

    alpha = softmax(b . tanh(W e_i)), u = sum_i alpha_i e_i.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, dim))
        self.bias_vec = nn.Parameter(torch.zeros(dim))
        nn.init.xavier_uniform_(self.weight)
        nn.init.normal_(self.bias_vec, std=0.1)

    def forward(self, rows: Tensor) -> tuple[Tensor, Tensor]:
        if rows.dim() != 2 or rows.size(0) < 1:
            raise ValueError("need a non-empty (l, d) entity matrix")
        scores = torch.tanh(rows @ self.weight.T) @ self.bias_vec
        alpha = torch.softmax(scores, dim=0)
        return alpha @ rows, alpha


@dataclass
class UserProfile:
    u: Tensor
    alpha: Tensor


def user_embedding(
    entity_set: EntitySet, table: Tensor, pool: AttentionPool,
    entity_index: dict[str, int],
) -> UserProfile:
    """Pool the looked-up entity rows; errors on an empty entity set."""
    if entity_set.l == 0:
        raise ValueError("empty entity set: no user embedding (cold context)")
    idx = torch.tensor(
        [entity_index[e] for e in entity_set.merged], dtype=torch.long
    )
    u, alpha = pool(table[idx])
    return UserProfile(u=u, alpha=alpha)


def make_head(dim: int, catalog_size: int, depth: int = 1) -> nn.Module:
    """The item-scoring MLP; depth 1 is a single linear layer."""
    if depth < 1:
        raise ValueError("head depth must be >= 1")
    if depth == 1:
        return nn.Linear(dim, catalog_size)
    layers: list[nn.Module] = []
    for _ in range(depth - 1):
        layers += [nn.Linear(dim, dim), nn.ReLU()]
    layers.append(nn.Linear(dim, catalog_size))
    return nn.Sequential(*layers)


def recommend(u: Tensor, head: nn.Module) -> Tensor:
    """Catalog distribution p = softmax(MLP(u))."""
    return torch.softmax(head(u), dim=-1)


def top_k(p: Tensor, k: int) -> list[int]:
    """Indices of the k largest probabilities; ties break by index ascending."""
    order = sorted(range(p.numel()), key=lambda i: (-float(p[i]), i))
    return order[: min(k, p.numel())]


def rec_loss(predictions: Sequence[Tensor], target_indices: Sequence[int]) -> Tensor:
    """Mean negative log-probability of the target item over instances."""
    if len(predictions) < 1 or len(predictions) != len(target_indices):
        raise ValueError("need >= 1 prediction with matching targets")
    picked = []
    for p, t in zip(predictions, target_indices):
        if not (0 <= t < p.numel()):
            raise ValueError(f"target index {t} outside catalog of {p.numel()}")
        picked.append(p[t])
    return -torch.log(torch.stack(picked).clamp_min(1e-38)).mean()


def recall_at_k(
    ranked_lists: Sequence[Sequence[int]], targets: Sequence[int], k: int
) -> float:
    """Fraction of instances whose target appears in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_lists) != len(targets):
        raise ValueError("ranked_lists and targets length mismatch")
    if not targets:
        return 0.0
    hits = sum(1 for ranks, t in zip(ranked_lists, targets) if t in list(ranks)[:k])
    return hits / len(targets)


class RecommenderModel(nn.Module):
    """Entity table + optional graph encoder + attention pool + catalog head.

    ``prior`` holds the training-frequency distribution over the catalog and
    answers cold contexts (no entities) at serving time.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        catalog: list[str],
        dim: int = ENTITY_DIM,
        gnn_layers: int = 1,
        use_kg: bool = True,
        head_depth: int = 1,
    ):
        super().__init__()
        self.catalog = list(catalog)
        self.catalog_index = {c: i for i, c in enumerate(self.catalog)}
        self.entities = list(kg.entities)
        self.entity_index = dict(kg.entity_index)
        self.dim = dim
        self.use_kg = use_kg
        self.entity_embedding = nn.Embedding(len(self.entities), dim)
        nn.init.normal_(self.entity_embedding.weight, std=0.1)
        self.gnn = RelationalGraphEncoder(kg, dim, gnn_layers if use_kg else 0)
        self.pool = AttentionPool(dim)
        self.head = make_head(dim, len(self.catalog), head_depth)
        self.register_buffer(
            "prior", torch.full((len(self.catalog),), 1.0 / max(len(self.catalog), 1))
        )

    def encoded_table(self) -> Tensor:
        return self.gnn(self.entity_embedding.weight)

    def forward(self, entity_set: EntitySet) -> Tensor:
        """Distribution over the catalog for one entity set."""
        if entity_set.l == 0:
            return self.prior.clone()
        profile = user_embedding(
            entity_set, self.encoded_table(), self.pool, self.entity_index
        )
        return recommend(profile.u, self.head)

    def set_prior(self, target_items: Sequence[str]) -> None:
        """Catalog-frequency prior from training targets (add-one smoothed)."""
        counts = torch.ones(len(self.catalog))
        for item in target_items:
            counts[self.catalog_index[item]] += 1.0
        self.prior = counts / counts.sum()
