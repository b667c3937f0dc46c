"""Review sentence retrieval and dialogue augmentation.

A retrieval strategy is written "<C|R>-<S|H>-<S|W>": correctly/randomly
matched item, ranked by sentiment closeness or helpful score, composed
sentence-wise or word-wise. The default production strategy is C-S-S with a
20-token budget.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from enum import Enum

from .corpus import Dialogue, ReviewDatabase, SEP_ID, Vocabulary
from .sentiment import (
    Polarity,
    SentimentModel,
    polarity_of_score,
    predict_sentiment,
    utterance_polarity,
)


class Match(str, Enum):
    CORRECT = "correct"
    RANDOM = "random"


class Rank(str, Enum):
    SENTIMENT = "sentiment"
    HELPFUL = "helpful"


class Compose(str, Enum):
    SENTENCE_WISE = "sentence_wise"
    WORD_WISE = "word_wise"


DEFAULT_BUDGET = 20


@dataclass(frozen=True)
class RetrievalStrategy:
    match: Match = Match.CORRECT
    rank: Rank = Rank.SENTIMENT
    compose: Compose = Compose.SENTENCE_WISE
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")

    @classmethod
    def parse(cls, text: str, budget: int = DEFAULT_BUDGET) -> "RetrievalStrategy":
        """Parse a strategy string like "C-S-S" or "R-H-W"."""
        parts = text.strip().upper().split("-")
        if len(parts) != 3:
            raise ValueError(f"bad strategy {text!r}: expected <C|R>-<S|H>-<S|W>")
        match = {"C": Match.CORRECT, "R": Match.RANDOM}.get(parts[0])
        rank = {"S": Rank.SENTIMENT, "H": Rank.HELPFUL}.get(parts[1])
        compose = {"S": Compose.SENTENCE_WISE, "W": Compose.WORD_WISE}.get(parts[2])
        if match is None or rank is None or compose is None:
            raise ValueError(f"bad strategy {text!r}: expected <C|R>-<S|H>-<S|W>")
        return cls(match, rank, compose, budget)

    def __str__(self) -> str:
        return "-".join((
            "C" if self.match is Match.CORRECT else "R",
            "S" if self.rank is Rank.SENTIMENT else "H",
            "S" if self.compose is Compose.SENTENCE_WISE else "W",
        ))


@dataclass
class ReviewSentence:
    item: str                # source item the review belongs to
    tokens: list[int]        # composed, length <= strategy budget
    source_review: int
    sentence_index: int
    v: float


@dataclass
class ReviewSetEntry:
    turn: int
    mention_item: str        # item whose mention triggered retrieval
    sentence: ReviewSentence
    insert_pos: int          # index of SEP in the augmented turn
    length: int              # inserted span length including SEP


@dataclass
class ReviewSet:
    entries: list[ReviewSetEntry] = field(default_factory=list)

    def add(self, entry: ReviewSetEntry) -> None:
        if any(e.turn == entry.turn and e.mention_item == entry.mention_item
               for e in self.entries):
            raise ValueError(
                f"duplicate review for turn {entry.turn}, item {entry.mention_item}"
            )
        self.entries.append(entry)

    def sentences(self) -> list[ReviewSentence]:
        return [e.sentence for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def polarity_target(polarity: Polarity) -> float:
    return 1.0 if polarity is Polarity.POSITIVE else 0.0


def compose_sentence(
    raw_tokens: list[int],
    strategy: RetrievalStrategy,
    rng: random.Random,
) -> list[int]:
    """Cut a raw sentence down to the strategy budget.

    sentence_wise keeps the leading tokens; word_wise samples uniformly
    without replacement and preserves the original order.
    """
    if not raw_tokens:
        raise ValueError("empty sentence")
    if len(raw_tokens) <= strategy.budget:
        return list(raw_tokens)
    if strategy.compose is Compose.SENTENCE_WISE:
        return raw_tokens[: strategy.budget]
    picks = sorted(rng.sample(range(len(raw_tokens)), strategy.budget))
    return [raw_tokens[i] for i in picks]


def retrieve(
    item: str,
    v_star: float,
    db: ReviewDatabase,
    sentiment_model: SentimentModel,
    strategy: RetrievalStrategy,
    rng: random.Random | None = None,
) -> ReviewSentence | None:
    """Select one review sentence for a mentioned item, or None if nothing applies.

    Candidates are every sentence of the source item's reviews. With
    rank=sentiment, polarity-consistent sentences win when any exist and are
    ordered by |v - v_star|; with rank=helpful, by the source review's helpful
    score. Ties always break by helpful score desc, review id asc, sentence
    index asc, which makes the choice a total order.
    """
    rng = rng if rng is not None else random.Random(0)
    if strategy.match is Match.RANDOM:
        items = db.items()
        if not items:
            return None
        source_item = rng.choice(items)
    else:
        source_item = item
        if source_item not in db:
            return None

    candidates = []  # (review, sentence_index, v)
    for review in db.get(source_item):
        for s_ix, sentence in enumerate(review.sentences):
            v = predict_sentiment(sentiment_model, sentence)
            candidates.append((review, s_ix, v))
    if not candidates:
        return None

    if strategy.rank is Rank.SENTIMENT:
        want = polarity_of_score(v_star)
        consistent = [c for c in candidates if polarity_of_score(c[2]) is want]
        pool = consistent if consistent else candidates
        best = min(pool, key=lambda c: (
            abs(c[2] - v_star), -c[0].helpful_score, c[0].review_id, c[1],
        ))
    else:
        best = min(candidates, key=lambda c: (
            -c[0].helpful_score, c[0].review_id, c[1],
        ))

    review, s_ix, v = best
    tokens = compose_sentence(review.sentences[s_ix], strategy, rng)
    return ReviewSentence(source_item, tokens, review.review_id, s_ix, v)


def augment_dialogue(
    dialogue: Dialogue,
    db: ReviewDatabase,
    sentiment_model: SentimentModel,
    strategy: RetrievalStrategy,
    vocab: Vocabulary,
    link_rate: float = 0.4,
    seed: int = 0,
) -> tuple[Dialogue, ReviewSet]:
    """Insert retrieved review sentences after item mentions.

    Each mention selected by a seeded coin (probability link_rate) gets
    SEP + review tokens spliced in right after its mention token; the target
    polarity comes from the utterance's attitude label. Items are augmented
    at most once per dialogue. The original dialogue is never modified, and
    stripping the recorded spans reproduces it exactly.
    """
    rng = random.Random(f"{seed}:{dialogue.id}")
    augmented = copy.deepcopy(dialogue)
    review_set = ReviewSet()
    done_items: set[str] = set()

    for t, turn in enumerate(augmented.turns):
        plans = []  # (anchor index in original tokens, item, ReviewSentence)
        for item, _ in turn.item_mentions:
            if item in done_items:
                continue
            done_items.add(item)
            if rng.random() >= link_rate:
                continue
            v_star = polarity_target(utterance_polarity(turn, item))
            sentence = retrieve(item, v_star, db, sentiment_model, strategy, rng)
            if sentence is None:
                continue
            mention_id = vocab.index.get(f"@{item}")
            try:
                anchor = turn.tokens.index(mention_id) if mention_id is not None \
                    else len(turn.tokens) - 1
            except ValueError:
                anchor = len(turn.tokens) - 1
            plans.append((anchor, item, sentence))

        # rebuild the turn in one left-to-right pass so recorded positions
        # are final even when anchors coincide
        plans.sort(key=lambda p: p[0])
        new_tokens: list[int] = []
        prev = 0
        for anchor, item, sentence in plans:
            new_tokens.extend(turn.tokens[prev : anchor + 1])
            review_set.add(ReviewSetEntry(
                turn=t,
                mention_item=item,
                sentence=sentence,
                insert_pos=len(new_tokens),
                length=len(sentence.tokens) + 1,
            ))
            new_tokens.append(SEP_ID)
            new_tokens.extend(sentence.tokens)
            prev = anchor + 1
        new_tokens.extend(turn.tokens[prev:])
        turn.tokens[:] = new_tokens
    return augmented, review_set
