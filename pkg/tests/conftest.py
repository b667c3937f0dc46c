import pytest
import torch

from revcore.fixtures import make_corpus, separable_reviews
from revcore.corpus import build_vocab, load_dialogues, load_kg, load_reviews
from revcore.pipeline import RunConfig, load_corpus_bundle
from revcore.sentiment import SentimentConfig, train_sentiment


def small_run_config(paths, out_dir, **overrides) -> RunConfig:
    """A RunConfig sized for fast fixture-scale training."""
    base = dict(
        dialogues=str(paths.dialogues), reviews=str(paths.reviews),
        kg=str(paths.kg), lexicon=str(paths.lexicon), out_dir=str(out_dir),
        rec_dim=24, dlg_dim=32, ffn_dim=32, heads=2, enc_layers=1, dec_layers=1,
        epochs=3, sentiment_epochs=2, batch_size=16, early_stop=False,
        dropout=0.0, seed=7,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def corpus_paths(tmp_path_factory):
    return make_corpus(
        tmp_path_factory.mktemp("corpus"),
        n_dialogues=8, n_items=12, n_entities=10, reviews_per_item=4, seed=3,
    )


@pytest.fixture(scope="session")
def bundle(corpus_paths, tmp_path_factory):
    cfg = small_run_config(corpus_paths, tmp_path_factory.mktemp("nullrun"))
    return load_corpus_bundle(cfg)


@pytest.fixture(scope="session")
def separable_db(tmp_path_factory):
    path = separable_reviews(
        tmp_path_factory.mktemp("sep") / "reviews.jsonl", n=200, seed=7
    )
    vocab = build_vocab(review_paths=[path])
    return load_reviews(path, vocab), vocab, path


@pytest.fixture(scope="session")
def sentiment_small(separable_db):
    """A small predictor trained to separate the disjoint-vocabulary corpus."""
    db, vocab, _ = separable_db
    torch.manual_seed(0)
    config = SentimentConfig(
        vocab_size=len(vocab), d_model=32, heads=2, layers=1, ffn_dim=32,
        dropout=0.0, epochs=6, seed=0,
    )
    return train_sentiment(db, config), vocab


@pytest.fixture(scope="session")
def fixture_sentiment(bundle):
    """Predictor trained on the synthetic corpus reviews (for retrieval tests)."""
    torch.manual_seed(1)
    config = SentimentConfig(
        vocab_size=len(bundle.vocab), d_model=32, heads=2, layers=1, ffn_dim=32,
        dropout=0.0, epochs=5, seed=1,
    )
    return train_sentiment(bundle.db, config)


@pytest.fixture(scope="session")
def trained_run(corpus_paths, tmp_path_factory):
    """A complete (small) three-stage training run shared by service tests."""
    from revcore.pipeline import train_all

    out = tmp_path_factory.mktemp("trained_run")
    cfg = small_run_config(corpus_paths, out, epochs=4, sentiment_epochs=2)
    ckpts, report = train_all(cfg)
    return cfg, ckpts, report
