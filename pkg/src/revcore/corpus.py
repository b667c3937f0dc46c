"""Corpus ingestion: dialogues, reviews, KG triples, vocabularies.

File formats (all UTF-8):
  dialogues.jsonl  one JSON object per line:
      {"id": str,
       "turns": [{"role": "seeker"|"recommender", "text": str,
                  "mentions": [{"item": str, "attitude": "liked"|"disliked"|"did_not_say"}]}],
       "targets": [{"turn": int, "item": str}]}
  reviews.jsonl    {"item": str, "text": str, "rating": int 1..10, "helpful": int >= 0}
  kg.tsv           head <TAB> relation <TAB> tail
  lexicon.tsv      surface text <TAB> entity id

Item placeholders are written inline in utterance text as "@<item id>" and
tokenize as a single token, so they can be entity-linked through the lexicon
like any other surface form.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<bos>", "<eos>", "<sep>"
RESERVED = (PAD, UNK, BOS, EOS, SEP)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = range(5)

MAX_CONTEXT_TOKENS = 256
MAX_REVIEWS_PER_ITEM = 30

_TOKEN_RE = re.compile(r"@\w+|[a-z0-9']+|[.!?,;:]")
_SENTENCE_END = {".", "!", "?"}


class CorpusError(ValueError):
    """Raised for malformed or invariant-violating input records."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word / item-placeholder / punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


class Speaker(str, Enum):
    SEEKER = "seeker"
    RECOMMENDER = "recommender"


class Attitude(str, Enum):
    LIKED = "liked"
    DISLIKED = "disliked"
    DID_NOT_SAY = "did_not_say"


@dataclass
class Vocabulary:
    """Token <-> id bijection with reserved control tokens at fixed ids."""

    tokens: list[str]
    index: dict[str, int]

    @classmethod
    def build(cls, token_iter: Iterable[str]) -> "Vocabulary":
        seen = sorted(set(token_iter) - set(RESERVED))
        tokens = list(RESERVED) + seen
        return cls(tokens=tokens, index={t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, toks: Sequence[str]) -> list[int]:
        idx = self.index
        return [idx.get(t, UNK_ID) for t in toks]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self.index


@dataclass
class Utterance:
    speaker: Speaker
    tokens: list[int]
    item_mentions: list[tuple[str, Attitude]] = field(default_factory=list)
    entity_mentions: list[str] = field(default_factory=list)


@dataclass
class Dialogue:
    id: str
    turns: list[Utterance]
    rec_targets: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class Review:
    item: str
    sentences: list[list[int]]
    rating: int
    helpful_score: int
    review_id: int

    @property
    def tokens(self) -> list[int]:
        return [t for s in self.sentences for t in s]


@dataclass
class ReviewDatabase:
    """Per-item reviews, each list capped at 30 and sorted by helpful score.

    Ties in helpful score break by review id ascending (= file order).
    """

    by_item: dict[str, list[Review]]
    rejected: int = 0

    def __contains__(self, item: str) -> bool:
        return item in self.by_item

    def get(self, item: str) -> list[Review]:
        return self.by_item.get(item, [])

    def items(self) -> list[str]:
        return sorted(self.by_item)


@dataclass
class KnowledgeGraph:
    entities: list[str]
    relations: list[str]
    triples: list[tuple[str, str, str]]
    surface_lexicon: dict[tuple[str, ...], str]
    rejected_triples: int = 0

    def __post_init__(self) -> None:
        self._entity_set = set(self.entities)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        # surfaces of each entity, for the KG copy scope
        self.surfaces_of: dict[str, list[tuple[str, ...]]] = {}
        for surface, ent in self.surface_lexicon.items():
            self.surfaces_of.setdefault(ent, []).append(surface)

    def has_entity(self, entity: str) -> bool:
        return entity in self._entity_set


def build_vocab(
    dialogue_paths: Sequence[str | Path] = (),
    review_paths: Sequence[str | Path] = (),
    lexicon_paths: Sequence[str | Path] = (),
) -> Vocabulary:
    """Collect every token appearing in the given corpus files."""
    toks: Counter[str] = Counter()
    for p in dialogue_paths:
        for _, rec in _iter_jsonl(p):
            for turn in rec.get("turns", []):
                toks.update(tokenize(turn.get("text", "")))
    for p in review_paths:
        for _, rec in _iter_jsonl(p):
            toks.update(tokenize(rec.get("text", "")))
    for p in lexicon_paths:
        for line in Path(p).read_text().splitlines():
            if line.strip():
                surface = line.split("\t")[0]
                toks.update(tokenize(surface))
    return Vocabulary.build(toks)


def _iter_jsonl(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from None


def load_dialogues(
    path: str | Path,
    vocab: Vocabulary,
    kg: KnowledgeGraph | None = None,
) -> list[Dialogue]:
    """Load and validate dialogues; any malformed record raises with its line number.

    Unknown tokens map to UNK (counted, logged). When a KG is supplied, each
    turn's entity mentions are annotated by longest-match linking.
    """
    dialogues: list[Dialogue] = []
    unk_count = 0
    for lineno, rec in _iter_jsonl(path):
        try:
            d, unk = _parse_dialogue(rec, vocab, kg)
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        unk_count += unk
        dialogues.append(d)
    if unk_count:
        logger.warning("load_dialogues(%s): %d tokens mapped to UNK", path, unk_count)
    return dialogues


def _parse_dialogue(
    rec: dict, vocab: Vocabulary, kg: KnowledgeGraph | None
) -> tuple[Dialogue, int]:
    if "id" not in rec or "turns" not in rec:
        raise CorpusError("record missing 'id' or 'turns'")
    turns: list[Utterance] = []
    unk = 0
    for i, t in enumerate(rec["turns"]):
        try:
            speaker = Speaker(t["role"])
        except (KeyError, ValueError):
            raise CorpusError(f"turn {i}: bad or missing role")
        expected = Speaker.SEEKER if i % 2 == 0 else Speaker.RECOMMENDER
        if speaker is not expected:
            raise CorpusError(
                f"turn {i}: role alternation violated (got {speaker.value}, "
                f"expected {expected.value})"
            )
        toks = tokenize(t.get("text", ""))
        if not toks:
            raise CorpusError(f"turn {i}: empty utterance")
        ids = vocab.encode(toks)
        unk += sum(1 for x in ids if x == UNK_ID)
        mentions = []
        for m in t.get("mentions", []):
            try:
                mentions.append((str(m["item"]), Attitude(m["attitude"])))
            except (KeyError, ValueError):
                raise CorpusError(f"turn {i}: bad mention {m!r}")
        entity_mentions = link_entities(toks, kg) if kg is not None else []
        turns.append(Utterance(speaker, ids, mentions, entity_mentions))

    targets: list[tuple[int, str]] = []
    for tg in rec.get("targets", []):
        turn_ix, item = int(tg["turn"]), str(tg["item"])
        if not (0 <= turn_ix < len(turns)):
            raise CorpusError(f"target turn {turn_ix} out of range")
        if turns[turn_ix].speaker is not Speaker.RECOMMENDER:
            raise CorpusError(f"target turn {turn_ix} is not a recommender turn")
        if item not in [m for m, _ in turns[turn_ix].item_mentions]:
            raise CorpusError(f"target item {item} not mentioned in turn {turn_ix}")
        targets.append((turn_ix, item))
    return Dialogue(str(rec["id"]), turns, targets), unk


def load_reviews(path: str | Path, vocab: Vocabulary) -> ReviewDatabase:
    """Load reviews, keeping the 30 highest-helpful-score reviews per item.

    Records with a rating outside [1, 10] or no usable sentence are rejected
    (counted, logged); loading continues.
    """
    by_item: dict[str, list[Review]] = {}
    rejected = 0
    for lineno, rec in _iter_jsonl(path):
        review_id = rec.get("id", lineno - 1)
        try:
            item = str(rec["item"])
            rating = int(rec["rating"])
            helpful = int(rec["helpful"])
        except (KeyError, TypeError, ValueError):
            logger.warning("load_reviews(%s): line %d malformed, skipped", path, lineno)
            rejected += 1
            continue
        if not (1 <= rating <= 10) or helpful < 0:
            logger.warning(
                "load_reviews(%s): line %d rating/helpful out of range, skipped",
                path, lineno,
            )
            rejected += 1
            continue
        sentences = split_sentences(tokenize(rec.get("text", "")))
        if not sentences:
            rejected += 1
            continue
        sent_ids = [vocab.encode(s) for s in sentences]
        by_item.setdefault(item, []).append(
            Review(item, sent_ids, rating, helpful, int(review_id))
        )
    for item, reviews in by_item.items():
        reviews.sort(key=lambda r: (-r.helpful_score, r.review_id))
        del reviews[MAX_REVIEWS_PER_ITEM:]
    return ReviewDatabase(by_item, rejected)


def split_sentences(tokens: list[str]) -> list[list[str]]:
    """Split a token stream on terminal punctuation (. ! ?), keeping it attached."""
    sentences: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        current.append(tok)
        if tok in _SENTENCE_END:
            if len(current) > 1:
                sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def load_kg(kg_path: str | Path, lexicon_path: str | Path) -> KnowledgeGraph:
    """Load triples plus the surface lexicon defining the entity universe.

    Triples with an endpoint outside the lexicon's entity set are rejected
    (counted, logged).
    """
    lexicon: dict[tuple[str, ...], str] = {}
    for lineno, line in enumerate(Path(lexicon_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{lexicon_path}:{lineno}: expected 'surface<TAB>entity'")
        surface = tuple(tokenize(parts[0]))
        if not surface:
            raise CorpusError(f"{lexicon_path}:{lineno}: empty surface form")
        if surface in lexicon and lexicon[surface] != parts[1].strip():
            raise CorpusError(f"{lexicon_path}:{lineno}: duplicate surface {parts[0]!r}")
        lexicon[surface] = parts[1].strip()

    entities = sorted(set(lexicon.values()))
    entity_set = set(entities)
    triples: list[tuple[str, str, str]] = []
    relations: set[str] = set()
    rejected = 0
    for lineno, line in enumerate(Path(kg_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise CorpusError(f"{kg_path}:{lineno}: expected 'head<TAB>relation<TAB>tail'")
        head, rel, tail = (p.strip() for p in parts)
        if head not in entity_set or tail not in entity_set:
            logger.warning("load_kg(%s): line %d dangling endpoint, rejected", kg_path, lineno)
            rejected += 1
            continue
        triples.append((head, rel, tail))
        relations.add(rel)
    return KnowledgeGraph(entities, sorted(relations), triples, lexicon, rejected)


def link_entities(tokens: Sequence[str], kg: KnowledgeGraph) -> list[str]:
    """Greedy longest-match scan of the surface lexicon, left to right.

    Matches never overlap; output is ordered by start position.
    """
    lexicon = kg.surface_lexicon
    if not lexicon:
        return []
    max_len = max(len(k) for k in lexicon)
    found: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = 0
        for span in range(min(max_len, n - i), 0, -1):
            ent = lexicon.get(tuple(tokens[i : i + span]))
            if ent is not None:
                found.append(ent)
                matched = span
                break
        i += matched if matched else 1
    return found


def assemble_context(
    turns: Sequence[Sequence[int]], max_tokens: int = MAX_CONTEXT_TOKENS
) -> list[int]:
    """Concatenate turn token ids, SEP-joined, truncated to the most recent tokens."""
    out: list[int] = []
    for i, t in enumerate(turns):
        if i:
            out.append(SEP_ID)
        out.extend(t)
    return out[-max_tokens:]


def catalog_items(
    dialogues: Sequence[Dialogue], db: ReviewDatabase | None = None
) -> list[str]:
    """All item ids appearing in dialogues (mentions + targets) and the review db."""
    items: set[str] = set()
    for d in dialogues:
        for turn in d.turns:
            items.update(m for m, _ in turn.item_mentions)
        items.update(i for _, i in d.rec_targets)
    if db is not None:
        items.update(db.by_item)
    return sorted(items)
