"""Sentiment scoring for review text and attitude polarity for mentions.

The score v in [0, 1] reads as "how much the item is liked in this text".
Training labels come from star ratings: positive iff rating > threshold
(default 5, so a rating of exactly 5 is negative).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import torch
from torch import nn

from .corpus import ReviewDatabase, Utterance, Attitude
from .transformer import TransformerEncoder

logger = logging.getLogger(__name__)

RATING_THRESHOLD = 5


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


def label_from_rating(rating: int, threshold: int = RATING_THRESHOLD) -> Polarity:
    """Positive iff rating > threshold. Ratings live on a 1..10 scale."""
    if not (1 <= rating <= 10):
        raise ValueError(f"rating {rating} outside [1, 10]")
    return Polarity.POSITIVE if rating > threshold else Polarity.NEGATIVE


def polarity_of_score(v: float) -> Polarity:
    """Midpoint split of the [0, 1] sentiment scale."""
    return Polarity.POSITIVE if v > 0.5 else Polarity.NEGATIVE


def utterance_polarity(utterance: Utterance, item: str) -> Polarity:
    """Attitude of a mentioned item. did_not_say defaults to positive so that
    review retrieval still fires for it."""
    for mentioned, attitude in utterance.item_mentions:
        if mentioned == item:
            if attitude is Attitude.DISLIKED:
                return Polarity.NEGATIVE
            return Polarity.POSITIVE
    raise ValueError(f"item {item} is not mentioned in this utterance")


@dataclass
class SentimentConfig:
    vocab_size: int
    d_model: int = 300
    heads: int = 2
    layers: int = 2
    ffn_dim: int = 300
    dropout: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


class SentimentModel(nn.Module):
    """Transformer encoder, mean pooling, one linear layer, sigmoid."""

    def __init__(self, config: SentimentConfig):
        super().__init__()
        self.config = config
        self.encoder = TransformerEncoder(
            config.vocab_size, config.d_model, config.heads,
            config.layers, config.ffn_dim, config.dropout,
        )
        self.head = nn.Linear(config.d_model, 1)
        self.train_history: list[float] = []

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        states = self.encoder(ids)
        return torch.sigmoid(self.head(states.mean(dim=0))).squeeze(-1)


def predict_sentiment(model: SentimentModel, tokens: list[int]) -> float:
    """Score a token sequence; deterministic (evaluation mode, no grad)."""
    if not tokens:
        raise ValueError("cannot score an empty token sequence")
    model.eval()
    with torch.no_grad():
        return float(model(torch.tensor(tokens, dtype=torch.long)))


def _holdout(review_key: str) -> bool:
    """90/10 split by review id hash; True marks the validation slice."""
    digest = hashlib.sha1(review_key.encode()).digest()
    return digest[0] % 10 == 0


def train_sentiment(reviews: ReviewDatabase, config: SentimentConfig) -> SentimentModel:
    """Train the predictor on every review sentence, labeled by its rating.

    Raises if the corpus is empty or contains a single class only.
    """
    train_set: list[tuple[list[int], float]] = []
    val_set: list[tuple[list[int], float]] = []
    for item in reviews.items():
        for review in reviews.get(item):
            label = 1.0 if label_from_rating(review.rating) is Polarity.POSITIVE else 0.0
            bucket = val_set if _holdout(f"{item}#{review.review_id}") else train_set
            for sentence in review.sentences:
                bucket.append((sentence, label))
    if not train_set:
        raise ValueError("empty training corpus")
    labels = {lab for _, lab in train_set}
    if len(labels) < 2:
        raise ValueError("degenerate corpus: a single sentiment class")

    torch.manual_seed(config.seed)
    model = SentimentModel(config)
    optim = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    bce = nn.BCELoss()

    for epoch in range(config.epochs):
        model.train()
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(train_set), config.batch_size):
            batch = train_set[start : start + config.batch_size]
            optim.zero_grad()
            loss = torch.stack([
                bce(model(torch.tensor(ids, dtype=torch.long)),
                    torch.tensor(label))
                for ids, label in batch
            ]).mean()
            loss.backward()
            optim.step()
            epoch_loss += float(loss.detach()) * len(batch)
            seen += len(batch)
        model.train_history.append(epoch_loss / seen)
        logger.debug("sentiment epoch %d loss %.4f", epoch, epoch_loss / seen)
    if val_set:
        acc = evaluate_accuracy(model, val_set)
        logger.info("sentiment held-out accuracy %.3f (%d examples)", acc, len(val_set))
    return model


def evaluate_accuracy(model: SentimentModel, examples: list[tuple[list[int], float]]) -> float:
    hits = sum(
        1 for ids, label in examples
        if (predict_sentiment(model, ids) > 0.5) == (label > 0.5)
    )
    return hits / len(examples)


def save_sentiment(
    model: SentimentModel, path: str | Path, vocab_tokens: list[str] | None = None
) -> None:
    torch.save({
        "config": asdict(model.config),
        "state": model.state_dict(),
        "vocab_tokens": vocab_tokens,
    }, path)


def load_sentiment(path: str | Path, with_vocab: bool = False):
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = SentimentModel(SentimentConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    if with_vocab:
        return model, blob.get("vocab_tokens")
    return model
