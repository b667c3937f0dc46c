"""Three-stage training protocol, evaluation, and ablation grids.

Stage 1 trains the sentiment predictor, stage 2 the recommender (entity
table, graph encoder, attention pool, catalog head), stage 3 the dialogue
model with everything upstream frozen. Each stage writes a self-describing
checkpoint stamped with a digest of the corpus files; evaluation refuses
checkpoint chains whose digests disagree.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import random
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
import yaml

from .corpus import (
    Dialogue,
    EOS_ID,
    KnowledgeGraph,
    ReviewDatabase,
    SEP_ID,
    Speaker,
    Vocabulary,
    assemble_context,
    catalog_items,
    load_dialogues,
    load_kg,
    load_reviews,
    build_vocab,
)
from .dialogue import (
    DialogueConfig,
    DialogueModel,
    GenInstance,
    clean_scope,
    distinct_n,
    gen_loss,
    generate,
    perplexity,
)
from .recommender import EntitySet, RecommenderModel, build_entity_set, recall_at_k, rec_loss, top_k
from .report import MetricsReport, write_ablation, write_losses, write_metrics
from .retrieval import RetrievalStrategy, ReviewSet, augment_dialogue
from .sentiment import SentimentConfig, SentimentModel, train_sentiment
from .fixtures import make_corpus  # noqa: F401  (re-export for CLI convenience)

logger = logging.getLogger(__name__)

STAGES = ("sentiment", "recommender", "dialogue")
CKPT_FILES = {s: f"{s}.pt" for s in STAGES}

VARIANTS = {
    "full": {},
    "-KG": {"use_kg": False},
    "-revCP": {"rev_cp": False},
    "-revRA": {"rev_ra": False},
    "-revEN": {"rev_en": False},
}


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    dialogues: str
    reviews: str
    kg: str
    lexicon: str
    out_dir: str = "run"
    strategy: str = "C-S-S"
    review_budget: int = 20
    link_rate: float = 0.4
    rec_dim: int = 128
    dlg_dim: int = 300
    heads: int = 2
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int | None = None        # defaults to dlg_dim
    gnn_layers: int = 1
    head_depth: int = 1
    dropout: float = 0.1
    batch_size: int = 32
    learning_rate: float = 0.001
    epochs: int = 30
    sentiment_epochs: int | None = None
    max_context: int = 256
    max_response: int = 30
    seed: int = 0
    early_stop: bool = True
    patience: int = 3
    grad_clip: float = 1.0
    use_kg: bool = True
    rev_cp: bool = True
    rev_ra: bool = True
    rev_en: bool = True

    def __post_init__(self):
        positive = ("review_budget", "rec_dim", "dlg_dim", "heads", "enc_layers",
                    "dec_layers", "gnn_layers", "head_depth", "batch_size",
                    "learning_rate", "epochs", "max_context", "max_response",
                    "patience", "grad_clip")
        for name in positive:
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.link_rate <= 1.0):
            raise ValueError("link_rate must be in [0, 1]")
        RetrievalStrategy.parse(self.strategy)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        raw = yaml.safe_load(path.read_text()) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        # resolve data paths relative to the config file
        for name in ("dialogues", "reviews", "kg", "lexicon", "out_dir"):
            value = getattr(cfg, name)
            if value and not Path(value).is_absolute():
                setattr(cfg, name, str((path.parent / value).resolve()))
        return cfg

    def retrieval_strategy(self) -> RetrievalStrategy:
        return RetrievalStrategy.parse(self.strategy, budget=self.review_budget)


@dataclass
class CorpusBundle:
    vocab: Vocabulary
    dialogues: list[Dialogue]
    db: ReviewDatabase
    kg: KnowledgeGraph
    catalog: list[str]
    digest: str


def corpus_digest(config: RunConfig) -> str:
    h = hashlib.sha256()
    for p in (config.dialogues, config.reviews, config.kg, config.lexicon):
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def load_corpus_bundle(config: RunConfig) -> CorpusBundle:
    vocab = build_vocab([config.dialogues], [config.reviews], [config.lexicon])
    kg = load_kg(config.kg, config.lexicon)
    dialogues = load_dialogues(config.dialogues, vocab, kg)
    db = load_reviews(config.reviews, vocab)
    return CorpusBundle(
        vocab, dialogues, db, kg, catalog_items(dialogues, db), corpus_digest(config)
    )


# ----------------------------------------------------------- instance building

@dataclass
class PreparedDialogue:
    original: Dialogue
    augmented: Dialogue
    review_set: ReviewSet


def prepare_dialogues(
    dialogues: list[Dialogue],
    db: ReviewDatabase,
    sentiment_model: SentimentModel,
    strategy: RetrievalStrategy,
    vocab: Vocabulary,
    link_rate: float,
    seed: int,
) -> list[PreparedDialogue]:
    return [
        PreparedDialogue(d, *augment_dialogue(
            d, db, sentiment_model, strategy, vocab, link_rate, seed
        ))
        for d in dialogues
    ]


def _reviews_before(review_set: ReviewSet, turn: int) -> ReviewSet:
    subset = ReviewSet()
    for entry in review_set.entries:
        if entry.turn < turn:
            subset.add(entry)
    return subset


def entity_scope_ids(entities: list[str], kg: KnowledgeGraph, vocab: Vocabulary) -> list[int]:
    """Vocabulary ids of every surface token of the given entities."""
    ids: list[int] = []
    for ent in entities:
        for surface in kg.surfaces_of.get(ent, []):
            ids.extend(vocab.encode(list(surface)))
    return clean_scope(ids)


@dataclass
class RecInstance:
    entity_set: EntitySet
    target: str
    dialogue_id: str = ""


def build_rec_instances(
    prepared: list[PreparedDialogue], kg: KnowledgeGraph, vocab: Vocabulary
) -> list[RecInstance]:
    out = []
    for p in prepared:
        turn_tokens = [vocab.decode(t.tokens) for t in p.original.turns]
        for t, item in p.original.rec_targets:
            es = build_entity_set(
                turn_tokens[:t], _reviews_before(p.review_set, t), kg, vocab
            )
            out.append(RecInstance(es, item, p.original.id))
    return out


def build_gen_instances(
    prepared: list[PreparedDialogue],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    entity_table: torch.Tensor,
    entity_index: dict[str, int],
    config: RunConfig,
) -> list[GenInstance]:
    out = []
    for p in prepared:
        turn_tokens = [vocab.decode(t.tokens) for t in p.original.turns]
        for t, turn in enumerate(p.original.turns):
            if turn.speaker is not Speaker.RECOMMENDER:
                continue
            subset = _reviews_before(p.review_set, t)
            es = build_entity_set(turn_tokens[:t], subset, kg, vocab)
            context = assemble_context(
                [tt.tokens for tt in p.augmented.turns[:t]], config.max_context
            )
            review_ids: list[int] = []
            for sent in subset.sentences():
                if review_ids:
                    review_ids.append(SEP_ID)
                review_ids.extend(sent.tokens)
            rows = None
            if es.l:
                idx = torch.tensor([entity_index[e] for e in es.merged])
                rows = entity_table[idx].detach().clone()
            target = turn.tokens[: config.max_response - 1] + [EOS_ID]
            out.append(GenInstance(
                context_ids=context,
                review_ids=review_ids,
                target_ids=target,
                kg_scope=entity_scope_ids(es.merged, kg, vocab),
                review_scope=clean_scope(
                    [tok for s in subset.sentences() for tok in s.tokens]
                ),
                entity_rows=rows,
                dialogue_id=p.original.id,
            ))
    return out


# -------------------------------------------------------------------- training

def _is_validation(dialogue_id: str) -> bool:
    return hashlib.sha1(dialogue_id.encode()).digest()[0] % 10 == 0


def _split(items: list, key, config: RunConfig) -> tuple[list, list]:
    """90/10 train/validation split by dialogue-id hash (early stopping only)."""
    if not config.early_stop:
        return list(items), []
    train = [x for x in items if not _is_validation(key(x))]
    val = [x for x in items if _is_validation(key(x))]
    if not train:
        return list(items), []
    return train, val


def _train_epochs(
    name: str,
    model: torch.nn.Module,
    train_items: list,
    val_items: list,
    loss_fn,
    config: RunConfig,
) -> list[float]:
    """Generic epoch loop: Adam, gradient clipping, optional early stopping."""
    optim = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = random.Random(f"{name}:{config.seed}")
    history: list[float] = []
    best_val, best_state, stale = float("inf"), None, 0
    for epoch in range(config.epochs):
        model.train()
        order = rng.sample(range(len(train_items)), len(train_items))
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_items[i] for i in order[start : start + config.batch_size]]
            optim.zero_grad()
            loss = loss_fn(model, batch)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optim.step()
            epoch_loss += float(loss.detach()) * len(batch)
            seen += len(batch)
        history.append(epoch_loss / max(seen, 1))
        logger.debug("%s epoch %d loss %.4f", name, epoch, history[-1])
        if config.early_stop and val_items:
            model.eval()
            with torch.no_grad():
                val = float(loss_fn(model, val_items))
            if val < best_val - 1e-6:
                best_val, stale = val, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("%s early stop at epoch %d", name, epoch)
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return history


def _rec_batch_loss(model: RecommenderModel, batch: list[RecInstance]) -> torch.Tensor:
    preds = [model(inst.entity_set) for inst in batch]
    targets = [model.catalog_index[inst.target] for inst in batch]
    return rec_loss(preds, targets)


def _save_ckpt(path: Path, kind: str, state: dict, bundle: CorpusBundle,
               config: RunConfig, extra: dict | None = None) -> None:
    blob = {
        "kind": kind,
        "state": state,
        "digest": bundle.digest,
        "run_config": asdict(config),
        "vocab_tokens": bundle.vocab.tokens,
        "catalog": bundle.catalog,
        "kg": {
            "entities": bundle.kg.entities,
            "relations": bundle.kg.relations,
            "triples": bundle.kg.triples,
            "lexicon": bundle.kg.surface_lexicon,
        },
    }
    blob.update(extra or {})
    torch.save(blob, path)


def train_all(
    config: RunConfig, stages: tuple[str, ...] = STAGES
) -> tuple[dict[str, Path], MetricsReport]:
    """Run the requested training stages in order and write reports.

    Later stages may be re-run alone as long as the earlier checkpoints exist
    in the output directory; requesting a stage whose predecessor is neither
    requested nor checkpointed is an error.
    """
    if any(s not in STAGES for s in stages) or \
            tuple(sorted(stages, key=STAGES.index)) != tuple(stages):
        raise PipelineError(f"stages must be an ordered subset of {STAGES}")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, stage in enumerate(STAGES):
        if stage in stages:
            continue
        needed_by = [s for s in stages if STAGES.index(s) > i]
        if needed_by and not (out_dir / CKPT_FILES[stage]).exists():
            raise PipelineError(
                f"stage '{needed_by[0]}' requires a '{stage}' checkpoint in {out_dir}"
            )

    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    started = time.perf_counter()
    bundle = load_corpus_bundle(config)
    histories: dict[str, list[float]] = {}
    ckpts: dict[str, Path] = {s: out_dir / CKPT_FILES[s] for s in STAGES}

    # stage 1: sentiment predictor
    if "sentiment" in stages:
        s_cfg = SentimentConfig(
            vocab_size=len(bundle.vocab), d_model=config.dlg_dim,
            heads=config.heads, layers=config.enc_layers,
            ffn_dim=config.ffn_dim or config.dlg_dim, dropout=config.dropout,
            learning_rate=config.learning_rate,
            epochs=config.sentiment_epochs or config.epochs,
            batch_size=config.batch_size, seed=config.seed,
        )
        s_model = train_sentiment(bundle.db, s_cfg)
        histories["sentiment"] = list(s_model.train_history)
        _save_ckpt(ckpts["sentiment"], "sentiment", s_model.state_dict(), bundle,
                   config, {"sentiment_config": asdict(s_cfg)})
    else:
        s_model = _load_sentiment_ckpt(ckpts["sentiment"])

    prepared = prepare_dialogues(
        bundle.dialogues, bundle.db, s_model, config.retrieval_strategy(),
        bundle.vocab, config.link_rate, config.seed,
    )

    # stage 2: recommender
    if "recommender" in stages:
        instances = [
            r for r in build_rec_instances(prepared, bundle.kg, bundle.vocab)
            if r.entity_set.l > 0
        ]
        if not instances:
            raise PipelineError("no recommendation instances with entities")
        train_set, val_set = _split(instances, lambda r: r.dialogue_id, config)
        torch.manual_seed(config.seed + 1)
        rec_model = RecommenderModel(
            bundle.kg, bundle.catalog, config.rec_dim, config.gnn_layers,
            config.use_kg, config.head_depth,
        )
        histories["recommender"] = _train_epochs(
            "recommender", rec_model, train_set, val_set, _rec_batch_loss, config,
        )
        rec_model.set_prior([r.target for r in instances])
        _save_ckpt(ckpts["recommender"], "recommender", rec_model.state_dict(),
                   bundle, config)
    else:
        rec_model = _load_recommender_ckpt(ckpts["recommender"])

    # stage 3: dialogue, with recommender and KG parameters frozen
    if "dialogue" in stages:
        rec_model.eval()
        with torch.no_grad():
            frozen_table = rec_model.encoded_table().detach().clone()
        gens = build_gen_instances(
            prepared, bundle.kg, bundle.vocab, frozen_table,
            rec_model.entity_index, config,
        )
        if not gens:
            raise PipelineError("no generation instances")
        train_set, val_set = _split(gens, lambda g: g.dialogue_id, config)
        torch.manual_seed(config.seed + 2)
        dlg_model = DialogueModel(DialogueConfig(
            vocab_size=len(bundle.vocab), d_model=config.dlg_dim,
            heads=config.heads, enc_layers=config.enc_layers,
            dec_layers=config.dec_layers, ffn_dim=config.ffn_dim or config.dlg_dim,
            dropout=config.dropout, entity_dim=config.rec_dim,
            rev_cp=config.rev_cp, rev_ra=config.rev_ra, rev_en=config.rev_en,
        ))
        histories["dialogue"] = _train_epochs(
            "dialogue", dlg_model, train_set, val_set,
            lambda m, b: gen_loss(m, b), config,
        )
        _save_ckpt(ckpts["dialogue"], "dialogue", dlg_model.state_dict(), bundle,
                   config, {"dialogue_config": asdict(dlg_model.config)})

    if all(ckpts[s].exists() for s in STAGES):
        report = evaluate(out_dir, config)
    else:
        report = MetricsReport()
    report.stage_losses = {k: v[-1] for k, v in histories.items() if v}
    report.wall_clock = time.perf_counter() - started
    write_losses(histories, out_dir)
    write_metrics(report, out_dir)
    return ckpts, report


# ------------------------------------------------------------------ checkpoints

def _load_blob(path: Path, kind: str) -> dict:
    if not Path(path).exists():
        raise PipelineError(f"missing {kind} checkpoint at {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != kind:
        raise PipelineError(f"{path} is not a {kind} checkpoint")
    return blob


def _load_sentiment_ckpt(path: Path) -> SentimentModel:
    blob = _load_blob(path, "sentiment")
    model = SentimentModel(SentimentConfig(**blob["sentiment_config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    return model


def _restore_kg(blob: dict) -> KnowledgeGraph:
    kg = blob["kg"]
    return KnowledgeGraph(kg["entities"], kg["relations"], kg["triples"],
                          kg["lexicon"])


def _load_recommender_ckpt(path: Path) -> RecommenderModel:
    blob = _load_blob(path, "recommender")
    rc = RunConfig(**blob["run_config"])
    model = RecommenderModel(
        _restore_kg(blob), blob["catalog"], rc.rec_dim, rc.gnn_layers,
        rc.use_kg, rc.head_depth,
    )
    model.load_state_dict(blob["state"])
    model.eval()
    return model


def _load_dialogue_ckpt(path: Path) -> DialogueModel:
    blob = _load_blob(path, "dialogue")
    model = DialogueModel(DialogueConfig(**blob["dialogue_config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    return model


@dataclass
class LoadedCheckpoints:
    sentiment: SentimentModel
    recommender: RecommenderModel
    dialogue: DialogueModel
    vocab: Vocabulary
    kg: KnowledgeGraph
    catalog: list[str]
    run_config: RunConfig
    digest: str


def load_checkpoints(ckpt_dir: str | Path) -> LoadedCheckpoints:
    ckpt_dir = Path(ckpt_dir)
    blobs = {s: _load_blob(ckpt_dir / CKPT_FILES[s], s) for s in STAGES}
    digests = {b["digest"] for b in blobs.values()}
    if len(digests) != 1:
        raise PipelineError("checkpoint chain trained on different corpora")
    tokens = blobs["dialogue"]["vocab_tokens"]
    vocab = Vocabulary(tokens, {t: i for i, t in enumerate(tokens)})
    return LoadedCheckpoints(
        sentiment=_load_sentiment_ckpt(ckpt_dir / CKPT_FILES["sentiment"]),
        recommender=_load_recommender_ckpt(ckpt_dir / CKPT_FILES["recommender"]),
        dialogue=_load_dialogue_ckpt(ckpt_dir / CKPT_FILES["dialogue"]),
        vocab=vocab,
        kg=_restore_kg(blobs["recommender"]),
        catalog=blobs["recommender"]["catalog"],
        run_config=RunConfig(**blobs["dialogue"]["run_config"]),
        digest=blobs["dialogue"]["digest"],
    )


# ------------------------------------------------------------------ evaluation

def evaluate(
    ckpt_dir: str | Path,
    data_config: RunConfig,
    ks: tuple[int, ...] = (1, 10, 50),
    out_dir: str | Path | None = None,
) -> MetricsReport:
    """Full metrics over the corpus named by ``data_config``'s data paths.

    The vocabulary, KG, and catalog come from the checkpoints; evaluation
    targets outside the trained catalog are a hard error.
    """
    torch.set_num_threads(1)
    loaded = load_checkpoints(ckpt_dir)
    rc = loaded.run_config
    vocab, kg = loaded.vocab, loaded.kg
    dialogues = load_dialogues(data_config.dialogues, vocab, kg)
    db = load_reviews(data_config.reviews, vocab)
    for d in dialogues:
        for _, item in d.rec_targets:
            if item not in loaded.recommender.catalog_index:
                raise PipelineError(
                    f"catalog mismatch: eval target {item!r} unknown to checkpoint"
                )

    prepared = prepare_dialogues(
        dialogues, db, loaded.sentiment, rc.retrieval_strategy(), vocab,
        rc.link_rate, rc.seed,
    )

    rec = loaded.recommender
    rec.eval()
    recs = build_rec_instances(prepared, kg, vocab)
    ranked, targets = [], []
    with torch.no_grad():
        for inst in recs:
            p = rec(inst.entity_set)
            ranked.append(top_k(p, max(ks)))
            targets.append(rec.catalog_index[inst.target])
    recall = {k: recall_at_k(ranked, targets, k) for k in ks} if recs else \
        {k: 0.0 for k in ks}

    with torch.no_grad():
        frozen_table = rec.encoded_table().detach()
    gens = build_gen_instances(prepared, kg, vocab, frozen_table,
                               rec.entity_index, rc)
    ppl = perplexity(loaded.dialogue, gens) if gens else None
    outputs = []
    for g in gens:
        toks = generate(
            loaded.dialogue, g.context_ids, g.review_ids, g.entity_rows,
            g.kg_scope, g.review_scope, max_len=rc.max_response,
        )
        outputs.append([t for t in toks if t != EOS_ID])
    dist = {n: distinct_n(outputs, n) for n in (2, 3, 4)} if outputs else {}

    report = MetricsReport(recall=recall, dist=dist, ppl=ppl)
    if out_dir is not None:
        write_metrics(report, out_dir)
    return report


# -------------------------------------------------------------------- ablation

def run_ablation(
    config: RunConfig,
    variants: tuple[str, ...] = ("full",),
    budgets: tuple[int, ...] = (20,),
    strategies: tuple[str, ...] = ("C-S-S",),
) -> list[dict]:
    """Train and evaluate every grid cell; one CSV row per cell."""
    for v in variants:
        if v not in VARIANTS:
            raise PipelineError(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")
    for s in strategies:
        RetrievalStrategy.parse(s)
    rows = []
    base = asdict(config)
    root = Path(config.out_dir)
    for variant in variants:
        for budget in budgets:
            for strategy in strategies:
                cell = dict(base)
                cell.update(VARIANTS[variant])
                cell["review_budget"] = budget
                cell["strategy"] = strategy
                cell_name = f"{variant.lstrip('-') or 'full'}_{strategy}_{budget}"
                cell["out_dir"] = str(root / "cells" / cell_name)
                cell_config = RunConfig(**cell)
                _, report = train_all(cell_config)
                row = {
                    "variant": variant, "strategy": strategy, "budget": budget,
                    "ppl": f"{report.ppl:.6f}" if report.ppl is not None else "",
                }
                for k, v in report.recall.items():
                    row[f"recall@{k}"] = f"{v:.6f}"
                for n, v in report.dist.items():
                    row[f"dist{n}"] = f"{v:.6f}"
                rows.append(row)
    write_ablation(rows, root)
    return rows
