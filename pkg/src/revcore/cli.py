"""Command-line interface.

    revcore train   --config cfg.yaml [--stages sentiment,recommender,dialogue]
    revcore eval    --config cfg.yaml --ckpt-dir run [--k 1,10,50]
    revcore ablate  --config cfg.yaml [--variants ...] [--budgets ...] [--strategies ...]
    revcore sentiment train|score
    revcore retrieve --item m3 --polarity pos --strategy C-S-S ...
    revcore rec train|eval
    revcore dlg train|eval|generate
    revcore serve   --ckpt-dir run [--port 8080] [--k 10]
    revcore fixtures --out corpus/
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from . import fixtures as fixture_gen
from . import pipeline
from .corpus import build_vocab, load_reviews
from .retrieval import RetrievalStrategy, retrieve
from .sentiment import (
    SentimentConfig,
    load_sentiment,
    predict_sentiment,
    save_sentiment,
    train_sentiment,
)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_ks(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


# ------------------------------------------------------------------- pipeline

@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--stages", default=",".join(pipeline.STAGES),
              help="Comma-separated ordered subset of the training stages.")
def train(config_path: str, stages: str):
    """Run the three-stage training protocol."""
    config = pipeline.RunConfig.from_file(config_path)
    ckpts, report = pipeline.train_all(config, tuple(stages.split(",")))
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    for stage, path in ckpts.items():
        if path.exists():
            click.echo(f"checkpoint[{stage}] {path}", err=True)


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
@click.option("--k", "ks", default="1,10,50", show_default=True)
@click.option("--out-dir", default=None, type=click.Path())
def eval_cmd(config_path: str, ckpt_dir: str, ks: str, out_dir: str | None):
    """Evaluate checkpoints against a corpus; emits the metrics JSON."""
    config = pipeline.RunConfig.from_file(config_path)
    report = pipeline.evaluate(ckpt_dir, config, _parse_ks(ks),
                               out_dir=out_dir or ckpt_dir)
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--variants", default="full", show_default=True,
              help="Comma-separated: full,-KG,-revCP,-revRA,-revEN")
@click.option("--budgets", default="20", show_default=True)
@click.option("--strategies", default="C-S-S", show_default=True)
def ablate(config_path: str, variants: str, budgets: str, strategies: str):
    """Train/evaluate an ablation grid; writes ablation.csv and a figure."""
    config = pipeline.RunConfig.from_file(config_path)
    rows = pipeline.run_ablation(
        config,
        tuple(variants.split(",")),
        tuple(int(b) for b in budgets.split(",")),
        tuple(strategies.split(",")),
    )
    click.echo(f"{len(rows)} rows -> {Path(config.out_dir) / 'ablation.csv'}")


# ------------------------------------------------------------------ sentiment

@main.group()
def sentiment():
    """Sentiment predictor utilities."""


@sentiment.command("train")
@click.option("--reviews", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", default=10, show_default=True)
@click.option("--d-model", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def sentiment_train(reviews: str, out_path: str, epochs: int, d_model: int, seed: int):
    """Train a standalone sentiment checkpoint from a reviews file."""
    vocab = build_vocab(review_paths=[reviews])
    db = load_reviews(reviews, vocab)
    config = SentimentConfig(vocab_size=len(vocab), d_model=d_model,
                             ffn_dim=d_model, epochs=epochs, seed=seed)
    model = train_sentiment(db, config)
    save_sentiment(model, out_path, vocab_tokens=vocab.tokens)
    click.echo(f"saved {out_path}")


@sentiment.command("score")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--text", required=True)
def sentiment_score(ckpt: str, text: str):
    """Score a piece of text with a trained checkpoint."""
    from .corpus import Vocabulary, tokenize

    model, tokens = load_sentiment(ckpt, with_vocab=True)
    if tokens is None:
        raise click.ClickException("checkpoint carries no vocabulary")
    vocab = Vocabulary(tokens, {t: i for i, t in enumerate(tokens)})
    ids = vocab.encode(tokenize(text))
    if not ids:
        raise click.ClickException("no tokens in input text")
    click.echo(f"{predict_sentiment(model, ids):.4f}")


# ------------------------------------------------------------------- retrieve

@main.command("retrieve")
@click.option("--item", required=True)
@click.option("--polarity", type=click.Choice(["pos", "neg"]), default="pos",
              show_default=True)
@click.option("--strategy", default="C-S-S", show_default=True)
@click.option("--budget", default=20, show_default=True)
@click.option("--reviews", required=True, type=click.Path(exists=True))
@click.option("--sentiment-ckpt", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
def retrieve_cmd(item, polarity, strategy, budget, reviews, sentiment_ckpt, seed):
    """Retrieve one review sentence for an item."""
    import random

    from .corpus import Vocabulary

    model, tokens = load_sentiment(sentiment_ckpt, with_vocab=True)
    if tokens is None:
        raise click.ClickException("checkpoint carries no vocabulary")
    vocab = Vocabulary(tokens, {t: i for i, t in enumerate(tokens)})
    db = load_reviews(reviews, vocab)
    sentence = retrieve(
        item, 1.0 if polarity == "pos" else 0.0, db, model,
        RetrievalStrategy.parse(strategy, budget), random.Random(seed),
    )
    if sentence is None:
        click.echo("no review found")
        return
    click.echo(json.dumps({
        "item": sentence.item,
        "review_id": sentence.source_review,
        "sentence_index": sentence.sentence_index,
        "sentiment": round(sentence.v, 4),
        "text": " ".join(vocab.decode(sentence.tokens)),
    }, indent=2))


# --------------------------------------------------------------- rec / dialog

@main.group()
def rec():
    """Recommender-component commands."""


@rec.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def rec_train(config_path: str):
    """Train stage 2 only (needs a stage-1 checkpoint in out_dir)."""
    config = pipeline.RunConfig.from_file(config_path)
    pipeline.train_all(config, ("recommender",))
    click.echo(f"recommender checkpoint in {config.out_dir}")


@rec.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
@click.option("--k", "ks", default="1,10,50", show_default=True)
def rec_eval(config_path: str, ckpt_dir: str, ks: str):
    """Emit the recommendation metrics JSON {recall@k...}."""
    config = pipeline.RunConfig.from_file(config_path)
    report = pipeline.evaluate(ckpt_dir, config, _parse_ks(ks))
    click.echo(json.dumps(
        {f"recall@{k}": v for k, v in sorted(report.recall.items())},
        indent=2, sort_keys=True,
    ))


@main.group()
def dlg():
    """Dialogue-component commands."""


@dlg.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def dlg_train(config_path: str):
    """Train stage 3 only (needs stage-1/2 checkpoints in out_dir)."""
    config = pipeline.RunConfig.from_file(config_path)
    pipeline.train_all(config, ("dialogue",))
    click.echo(f"dialogue checkpoint in {config.out_dir}")


@dlg.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
def dlg_eval(config_path: str, ckpt_dir: str):
    """Emit the conversation metrics JSON {ppl, dist2, dist3, dist4}."""
    config = pipeline.RunConfig.from_file(config_path)
    report = pipeline.evaluate(ckpt_dir, config)
    out = {f"dist{n}": v for n, v in sorted(report.dist.items())}
    out["ppl"] = report.ppl
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@dlg.command("generate")
@click.option("--context", "context_path", required=True, type=click.Path(exists=True),
              help="Text file; each line is one seeker message, sent in order.")
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
def dlg_generate(context_path: str, ckpt_dir: str):
    """Feed a scripted context through a fresh session and print the replies."""
    from .service import build_engine

    engine = build_engine(ckpt_dir)
    sid = engine.open_session()
    for line in Path(context_path).read_text().splitlines():
        if not line.strip():
            continue
        result = engine.step(sid, line)
        click.echo(f"> {line}")
        click.echo(result["response"])


# ---------------------------------------------------------------------- serve

@main.command()
@click.option("--ckpt-dir", required=True, envvar="REVCORE_CKPT_DIR",
              type=click.Path(exists=True))
@click.option("--reviews", default=None, envvar="REVCORE_REVIEWS",
              type=click.Path(exists=True),
              help="Review database; defaults to the one the checkpoint was trained on.")
@click.option("--port", default=8080, envvar="REVCORE_PORT", show_default=True)
@click.option("--host", default="127.0.0.1", envvar="REVCORE_HOST", show_default=True)
@click.option("--k", default=10, envvar="REVCORE_K", show_default=True)
def serve(ckpt_dir: str, reviews: str | None, port: int, host: str, k: int):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(ckpt_dir, reviews, k), host=host, port=port)


# ------------------------------------------------------------------- fixtures

@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--dialogues", default=20, show_default=True)
@click.option("--items", default=50, show_default=True)
@click.option("--entities", default=30, show_default=True)
@click.option("--seed", default=13, show_default=True)
def fixtures(out_dir: str, dialogues: int, items: int, entities: int, seed: int):
    """Generate a synthetic corpus (dialogues, reviews, KG, lexicon)."""
    paths = fixture_gen.make_corpus(
        out_dir, n_dialogues=dialogues, n_items=items, n_entities=entities, seed=seed
    )
    for name in ("dialogues", "reviews", "kg", "lexicon"):
        click.echo(f"{name}: {getattr(paths, name)}")


if __name__ == "__main__":
    main()
