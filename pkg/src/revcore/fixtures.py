"""Synthetic corpus generation.

Emits the four ingestion files (dialogues.jsonl, reviews.jsonl, kg.tsv,
lexicon.tsv) with the statistical shape of a real movie-dialogue corpus:
mention attitudes follow the observed 81.2 / 4.9 / 13.9 liked / disliked /
did-not-say split, and review linkage at the default 0.4 rate is applied
downstream during context augmentation. Every dialogue carries a signature
entity so that a recommender with enough capacity can memorize the mapping
from context to target item.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

_ADJ = ["silver", "crimson", "golden", "quiet", "broken",
        "hidden", "distant", "frozen", "burning", "lost"]
_NOUN = ["harbor", "garden", "signal", "empire", "canyon",
         "lantern", "orchard", "mirror", "voyage", "tide"]
_FIRST = ["alan", "beth", "carl", "dora", "evan",
          "faye", "gene", "hana", "ivan", "june"]
_LAST = ["voss", "reyes", "lund", "okoye", "marsh",
         "petit", "salo", "tanaka", "iqbal", "novak"]

POSITIVE_WORDS = ["wonderful", "thrilling", "superb", "delightful", "masterful",
                  "charming", "gripping", "excellent", "lovely", "brilliant"]
NEGATIVE_WORDS = ["dull", "tedious", "awful", "clumsy", "bland",
                  "grating", "sloppy", "dreary", "hollow", "terrible"]
_FILLER = ["the", "movie", "was", "and", "felt", "with",
           "a", "plot", "acting", "scenes", "story", "pacing"]

ATTITUDE_SPLIT = (0.812, 0.049, 0.139)  # liked / disliked / did_not_say


@dataclass(frozen=True)
class CorpusPaths:
    root: Path
    dialogues: Path
    reviews: Path
    kg: Path
    lexicon: Path


def item_title(i: int) -> str:
    return f"{_ADJ[(i // 10) % 10]} {_NOUN[i % 10]}"


def entity_name(j: int) -> str:
    return f"{_FIRST[(j // 10) % 10]} {_LAST[j % 10]}"


def _sample_attitude(rng: random.Random) -> str:
    x = rng.random()
    if x < ATTITUDE_SPLIT[0]:
        return "liked"
    if x < ATTITUDE_SPLIT[0] + ATTITUDE_SPLIT[1]:
        return "disliked"
    return "did_not_say"


def _review_sentence(rng: random.Random, words: list[str], entity: str | None) -> str:
    parts = [rng.choice(_FILLER), rng.choice(_FILLER), rng.choice(words)]
    if entity is not None:
        parts = [entity, "was", rng.choice(words)] + parts
    rng.shuffle(parts)
    return " ".join(parts) + " ."


def make_corpus(
    out_dir: str | Path,
    n_dialogues: int = 20,
    n_items: int = 50,
    n_entities: int = 30,
    reviews_per_item: int = 4,
    review_coverage: float = 1.0,
    seed: int = 13,
) -> CorpusPaths:
    """Write a complete synthetic corpus under ``out_dir``."""
    if n_items > 100 or n_entities > 100:
        raise ValueError("name pools support at most 100 items / 100 entities")
    rng = random.Random(seed)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    items = [f"m{i}" for i in range(n_items)]
    entities = [f"e{j}" for j in range(n_entities)]

    # lexicon: item placeholders, item titles, entity names
    lexicon_lines = []
    for i, item in enumerate(items):
        lexicon_lines.append(f"@{item}\t{item}")
        lexicon_lines.append(f"{item_title(i)}\t{item}")
    for j, ent in enumerate(entities):
        lexicon_lines.append(f"{entity_name(j)}\t{ent}")
    lexicon_path = root / "lexicon.tsv"
    lexicon_path.write_text("\n".join(lexicon_lines) + "\n")

    # KG: each item features 2-3 entities; a sprinkle of entity-entity edges
    features: dict[str, list[str]] = {}
    kg_lines = []
    for i, item in enumerate(items):
        linked = [entities[(i + k) % n_entities] for k in range(2 + i % 2)]
        features[item] = linked
        for ent in linked:
            kg_lines.append(f"{item}\tfeatures\t{ent}")
    for j in range(0, n_entities - 1, 3):
        kg_lines.append(f"{entities[j]}\trelated_to\t{entities[j + 1]}")
    kg_path = root / "kg.tsv"
    kg_path.write_text("\n".join(kg_lines) + "\n")

    # reviews: positive ratings 6-10 with positive wording, negative 1-5
    covered = [it for it in items if rng.random() < review_coverage]
    review_lines = []
    for item in covered:
        for _ in range(reviews_per_item):
            positive = rng.random() < 0.6
            words = POSITIVE_WORDS if positive else NEGATIVE_WORDS
            rating = rng.randint(6, 10) if positive else rng.randint(1, 5)
            ent = entity_name(int(features[item][0][1:])) if rng.random() < 0.7 else None
            n_sent = rng.randint(1, 3)
            text = " ".join(
                _review_sentence(rng, words, ent if s == 0 else None)
                for s in range(n_sent)
            )
            review_lines.append(json.dumps({
                "item": item,
                "text": text,
                "rating": rating,
                "helpful": rng.randint(0, 50),
            }))
    reviews_path = root / "reviews.jsonl"
    reviews_path.write_text("\n".join(review_lines) + "\n")

    # dialogues: each context carries a signature entity unique to its target,
    # drawn from e0..e(n_dialogues-1); follow-up requests use a reserved block
    # above that so first and second targets never share signatures
    dlg_lines = []
    for k in range(n_dialogues):
        target = items[k % n_items]
        liked = items[(k + 7) % n_items]
        sig = entities[k % n_entities]
        pos = rng.choice(POSITIVE_WORDS)
        turns = [
            {
                "role": "seeker",
                "text": f"hi i loved @{liked} . i enjoy {entity_name(int(sig[1:]))}",
                "mentions": [{"item": liked, "attitude": "liked"}],
            },
            {
                "role": "recommender",
                "text": f"you should try @{target} it is {pos}",
                "mentions": [{"item": target, "attitude": _sample_attitude(rng)}],
            },
        ]
        targets = [{"turn": 1, "item": target}]
        if k % 3 == 0:
            second = items[(k + 19) % n_items]
            sig2 = entities[(n_dialogues + k // 3) % n_entities]
            turns.append({
                "role": "seeker",
                "text": f"thanks . i also enjoy {entity_name(int(sig2[1:]))}",
                "mentions": [],
            })
            turns.append({
                "role": "recommender",
                "text": f"also watch @{second} it is {rng.choice(POSITIVE_WORDS)}",
                "mentions": [{"item": second, "attitude": _sample_attitude(rng)}],
            })
            targets.append({"turn": 3, "item": second})
        dlg_lines.append(json.dumps({"id": f"d{k}", "turns": turns, "targets": targets}))
    dialogues_path = root / "dialogues.jsonl"
    dialogues_path.write_text("\n".join(dlg_lines) + "\n")

    return CorpusPaths(root, dialogues_path, reviews_path, kg_path, lexicon_path)


def separable_reviews(path: str | Path, n: int = 200, seed: int = 7) -> Path:
    """Reviews whose positive/negative vocabularies are disjoint.

    A bag-of-words linear classifier separates this corpus perfectly, which
    makes it a calibration target for the sentiment predictor.
    """
    rng = random.Random(seed)
    lines = []
    for i in range(n):
        positive = i % 2 == 0
        words = POSITIVE_WORDS if positive else NEGATIVE_WORDS
        body = " ".join(rng.choice(words) for _ in range(rng.randint(4, 8)))
        lines.append(json.dumps({
            "item": f"m{i % 10}",
            "text": body + " .",
            "rating": rng.randint(6, 10) if positive else rng.randint(1, 5),
            "helpful": rng.randint(0, 20),
        }))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
