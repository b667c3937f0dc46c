"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import math
import random
import time
from pathlib import Path

import pytest
import torch

from revcore.corpus import BOS_ID, EOS_ID
from revcore.dialogue import (
    DialogueConfig,
    DialogueModel,
    GenInstance,
    distinct_n,
    gen_loss,
    loss_from_probabilities,
    perplexity_from_probabilities,
)
from revcore.fixtures import make_corpus
from revcore.pipeline import RunConfig, evaluate, train_all
from revcore.recommender import (
    AttentionPool,
    EntitySet,
    make_head,
    recall_at_k,
    rec_loss,
    recommend,
)
from revcore.retrieval import RetrievalStrategy, retrieve
from revcore.service import build_engine

from conftest import small_run_config
from oracle_utils import finite_difference_errors
from test_retrieval import reference_retrieve

COUNT_TOL = 1e-9
LOSS_TOL = 1e-6


def _report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[ACCEPT] {name}: {status}" + (f" ({detail})" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


class TestMetricOracles:
    def test_metric_oracles(self):
        started = time.perf_counter()

        # recall@k: counting oracle
        ok = (
            recall_at_k([[5, 2, 3]], [5], 1) == 1.0
            and recall_at_k([list(range(11))], [10], 10) == 0.0
            and abs(recall_at_k([[1, 2], [3, 4], [5, 6]], [1, 4, 9], 10) - 2 / 3)
            < COUNT_TOL
        )

        # distinct-n: hand enumeration
        ok = ok and (
            distinct_n([["a", "b", "c", "d"]], 2) == 1.0
            and abs(distinct_n([["a", "a", "a", "a"]], 2) - 1 / 3) < COUNT_TOL
            and abs(distinct_n([["a", "b", "c", "d"], ["a", "a", "a"]], 2) - 0.75)
            < COUNT_TOL
        )

        # perplexity: hand computation
        ppl = perplexity_from_probabilities(
            [torch.tensor([0.5, 0.5, 0.25], dtype=torch.float64)]
        )
        ok = ok and abs(ppl - math.exp((2 * math.log(2) + math.log(4)) / 3)) < LOSS_TOL

        # rec_loss: analytic values
        uniform = torch.full((4,), 0.25, dtype=torch.float64)
        pair = [torch.tensor([0.5, 0.5], dtype=torch.float64),
                torch.tensor([0.25, 0.75], dtype=torch.float64)]
        ok = ok and (
            abs(float(rec_loss([uniform], [1])) - math.log(4)) < LOSS_TOL
            and abs(float(rec_loss(pair, [0, 0]))
                    - (math.log(2) + math.log(4)) / 2) < LOSS_TOL
        )

        # gen_loss: hand computation
        got = float(loss_from_probabilities(
            [torch.tensor([0.5, 0.1], dtype=torch.float64)]
        ))
        ok = ok and abs(got + (math.log(0.5) + math.log(0.1)) / 2) < LOSS_TOL

        elapsed = time.perf_counter() - started
        _report("metric-oracles", ok and elapsed < 10.0, f"{elapsed:.2f}s")


class TestRetrievalEquivalence:
    def test_1000_queries_match_reference(self, bundle, fixture_sentiment):
        started = time.perf_counter()
        strategy = RetrievalStrategy.parse("C-S-S")
        rng = random.Random(2024)
        items = bundle.catalog + ["ghost1", "ghost2"]
        mismatches = 0
        for _ in range(1000):
            item = rng.choice(items)
            v_star = rng.choice([0.0, 1.0])
            seed = rng.randint(0, 10**9)
            got = retrieve(item, v_star, bundle.db, fixture_sentiment, strategy,
                           random.Random(seed))
            want = reference_retrieve(item, v_star, bundle.db, fixture_sentiment,
                                      strategy, random.Random(seed))
            if want is None:
                mismatches += got is not None
            elif got is None or (got.source_review, got.sentence_index) != want:
                mismatches += 1
        elapsed = time.perf_counter() - started
        _report(
            "retrieval-equivalence",
            mismatches == 0 and elapsed < 30.0,
            f"{mismatches} mismatches, {elapsed:.1f}s",
        )


class TestNormalization:
    def test_ten_thousand_random_parameterizations(self):
        rng = torch.Generator().manual_seed(77)
        failures = 0

        # attention pooling weights (Eq. 3 shape): 4000 draws
        for _ in range(4000):
            d = int(torch.randint(2, 9, (1,), generator=rng))
            l = int(torch.randint(1, 7, (1,), generator=rng))
            scale = float(torch.rand(1, generator=rng)) * 10 + 0.01
            pool = AttentionPool(d)
            with torch.no_grad():
                pool.weight.copy_(torch.randn(d, d, generator=rng) * scale)
                pool.bias_vec.copy_(torch.randn(d, generator=rng) * scale)
                rows = torch.randn(l, d, generator=rng) * scale
                _, alpha = pool(rows)
            if abs(float(alpha.sum()) - 1.0) > 1e-6 or float(alpha.min()) < 0:
                failures += 1

        # catalog distribution (Eq. 4): 3000 draws
        for _ in range(3000):
            d = int(torch.randint(2, 9, (1,), generator=rng))
            cat = int(torch.randint(2, 12, (1,), generator=rng))
            head = make_head(d, cat)
            with torch.no_grad():
                head.weight.copy_(torch.randn(cat, d, generator=rng) * 5)
                head.bias.copy_(torch.randn(cat, generator=rng) * 5)
                p = recommend(torch.randn(d, generator=rng), head)
            if abs(float(p.sum()) - 1.0) > 1e-6 or float(p.min()) < 0:
                failures += 1

        # token mixture (Eq. 11): 3000 draws, scopes sometimes empty
        model = DialogueModel(DialogueConfig(
            vocab_size=20, d_model=8, heads=2, enc_layers=1, dec_layers=1,
            ffn_dim=8, dropout=0.0, entity_dim=4,
        ))
        vocab_ids = list(range(5, 20))
        py_rng = random.Random(5)
        for _ in range(3000):
            with torch.no_grad():
                for lin in (model.vocab_head, model.gate):
                    lin.weight.copy_(torch.randn_like(lin.weight) * 3)
                    lin.bias.copy_(torch.randn_like(lin.bias) * 3)
                model.kg_copy.weight.copy_(torch.randn_like(model.kg_copy.weight))
                model.rev_copy.weight.copy_(torch.randn_like(model.rev_copy.weight))
                kg_scope = py_rng.sample(vocab_ids, py_rng.randint(0, 6))
                rev_scope = py_rng.sample(vocab_ids, py_rng.randint(0, 6))
                dist = model.next_token_distribution(
                    torch.randn(8, generator=rng) * 4, kg_scope, rev_scope
                )
            bad = abs(float(dist.pr.sum()) - 1.0) > 1e-6
            bad = bad or float(dist.pr.min()) < 0
            bad = bad or abs(float(dist.gates.sum()) - 1.0) > 1e-6
            out_kg = [t for t in range(20) if t not in set(kg_scope)]
            out_rev = [t for t in range(20) if t not in set(rev_scope)]
            bad = bad or any(float(dist.pr2[t]) != 0.0 for t in out_kg)
            bad = bad or any(float(dist.pr3[t]) != 0.0 for t in out_rev)
            failures += bad

        _report("normalization-10k", failures == 0, f"{failures} failures")


class TestGradientChecks:
    def test_rec_loss_gradients(self):
        torch.manual_seed(41)
        pool = AttentionPool(4).double()
        head = make_head(4, 5).double()
        rows = torch.nn.Parameter(torch.randn(3, 4, dtype=torch.float64))

        def loss_fn():
            u, _ = pool(rows)
            return rec_loss([recommend(u, head)], [3])

        named = [("W_alpha", pool.weight), ("b", pool.bias_vec),
                 ("head.w", head.weight), ("head.b", head.bias), ("rows", rows)]
        errors = finite_difference_errors(loss_fn, named, eps=1e-5,
                                          entries_per_tensor=10, seed=3)
        worst = max(e[-1] for e in errors)
        _report("gradient-check-recommendation", worst < 1e-4, f"worst {worst:.2e}")

    def test_gen_loss_gradients(self):
        torch.manual_seed(42)
        model = DialogueModel(DialogueConfig(
            vocab_size=12, d_model=8, heads=2, enc_layers=1, dec_layers=2,
            ffn_dim=8, dropout=0.0, entity_dim=4,
        )).double()
        rows = torch.randn(2, 4, dtype=torch.float64)
        insts = [
            GenInstance(context_ids=[5, 6, 7], review_ids=[8, 9],
                        target_ids=[6, 7, EOS_ID], kg_scope=[5, 6],
                        review_scope=[8, 9], entity_rows=rows),
            GenInstance(context_ids=[9, 10], review_ids=[],
                        target_ids=[11, EOS_ID], kg_scope=[10], review_scope=[]),
        ]
        errors = finite_difference_errors(
            lambda: gen_loss(model, insts),
            list(model.named_parameters()), eps=1e-5, entries_per_tensor=3, seed=4,
        )
        worst = max(e[-1] for e in errors)
        _report("gradient-check-generation", worst < 1e-4, f"worst {worst:.2e}")


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    paths = make_corpus(
        tmp_path_factory.mktemp("overfit_corpus"),
        n_dialogues=20, n_items=50, n_entities=30, reviews_per_item=4, seed=13,
    )
    out = tmp_path_factory.mktemp("overfit_run")
    config = RunConfig(
        dialogues=str(paths.dialogues), reviews=str(paths.reviews),
        kg=str(paths.kg), lexicon=str(paths.lexicon), out_dir=str(out),
        rec_dim=32, dlg_dim=48, ffn_dim=96, heads=2, enc_layers=1, dec_layers=2,
        epochs=200, sentiment_epochs=3, batch_size=8, learning_rate=0.001,
        early_stop=False, dropout=0.0, seed=11, link_rate=0.4,
    )
    started = time.perf_counter()
    ckpts, report = train_all(config)
    elapsed = time.perf_counter() - started
    return config, ckpts, report, elapsed


class TestOverfit:
    def test_memorization_targets(self, overfit_run):
        config, ckpts, report, elapsed = overfit_run
        detail = (f"R@1 {report.recall[1]:.3f}, PPL {report.ppl:.3f}, "
                  f"{elapsed:.0f}s")
        ok = report.recall[1] >= 0.9 and report.ppl <= 2.0 and elapsed < 600
        _report("overfit-memorization", ok, detail)

    def test_memorized_responses_reproduce_token_exactly(self, overfit_run):
        from revcore.dialogue import generate
        from revcore.pipeline import (build_gen_instances, load_checkpoints,
                                      load_corpus_bundle, prepare_dialogues)

        config, ckpts, _, _ = overfit_run
        loaded = load_checkpoints(Path(config.out_dir))
        bundle = load_corpus_bundle(config)
        prepared = prepare_dialogues(
            bundle.dialogues, bundle.db, loaded.sentiment,
            config.retrieval_strategy(), bundle.vocab, config.link_rate,
            config.seed,
        )
        with torch.no_grad():
            table = loaded.recommender.encoded_table().detach()
        gens = build_gen_instances(prepared, bundle.kg, bundle.vocab, table,
                                   loaded.recommender.entity_index, config)
        exact = 0
        for inst in gens:
            produced = generate(
                loaded.dialogue, inst.context_ids, inst.review_ids,
                inst.entity_rows, inst.kg_scope, inst.review_scope,
                max_len=config.max_response,
            )
            want = [t for t in inst.target_ids if t != EOS_ID]
            got = [t for t in produced if t != EOS_ID]
            exact += got == want
        _report("overfit-token-exact-generation", exact == len(gens),
                f"{exact}/{len(gens)} responses reproduced")


class TestCausalityAndAblations:
    def test_decoder_causality_all_positions_and_depths(self):
        ok = True
        for layers in (1, 2, 3):
            torch.manual_seed(layers)
            model = DialogueModel(DialogueConfig(
                vocab_size=13, d_model=8, heads=2, enc_layers=1,
                dec_layers=layers, ffn_dim=8, dropout=0.0, entity_dim=4,
            ))
            model.eval()
            with torch.no_grad():
                enc = model.encode([5, 6, 7], [9, 10])
                rows = torch.randn(2, 4)
                prefix = [BOS_ID, 5, 6, 7, 8, 9]
                base = model.decode_states(prefix, enc, rows)
                for j in range(1, len(prefix)):
                    changed = list(prefix)
                    changed[j] = 11 if prefix[j] != 11 else 12
                    out = model.decode_states(changed, enc, rows)
                    if not torch.allclose(out[:j], base[:j], atol=1e-12):
                        ok = False
        _report("decoder-causality", ok)

    def test_ablation_variants_build_and_train(self, corpus_paths, tmp_path):
        results = {}
        for variant, flags in (
            ("-revCP", {"rev_cp": False}),
            ("-revRA", {"rev_ra": False}),
            ("-revEN", {"rev_en": False}),
        ):
            cfg = small_run_config(
                corpus_paths, tmp_path / variant.strip("-"),
                epochs=1, sentiment_epochs=1, **flags,
            )
            _, report = train_all(cfg)
            results[variant] = report.stage_losses.get("dialogue")

        full = DialogueModel(DialogueConfig(vocab_size=50, d_model=8, heads=2,
                                            ffn_dim=8))
        no_cp = DialogueModel(DialogueConfig(vocab_size=50, d_model=8, heads=2,
                                             ffn_dim=8, rev_cp=False))
        no_ra = DialogueModel(DialogueConfig(vocab_size=50, d_model=8, heads=2,
                                             ffn_dim=8, rev_ra=False))
        no_en = DialogueModel(DialogueConfig(vocab_size=50, d_model=8, heads=2,
                                             ffn_dim=8, rev_en=False))
        count = lambda m: sum(p.numel() for p in m.parameters())

        structure_ok = (
            no_cp.rev_copy is None
            and count(full) - count(no_cp) == full.rev_copy.weight.numel()
            and all(l.rev_attn is None for l in no_ra.layers)
            and count(no_ra) < count(full)
            and no_en.review_encoder is no_en.context_encoder
            and count(no_en) < count(full)
        )
        gate_pinned = float(no_cp.next_token_distribution(
            torch.randn(8), kg_scope=[6], review_scope=[7]
        ).gates[2]) == 0.0
        trained_ok = all(v is not None and math.isfinite(v)
                         for v in results.values())
        _report(
            "ablation-structure",
            structure_ok and gate_pinned and trained_ok,
            f"one-epoch losses {results}",
        )


class TestDeterminism:
    def test_bit_identical_metrics(self, corpus_paths, tmp_path):
        payloads = []
        for run in ("a", "b"):
            cfg = small_run_config(corpus_paths, tmp_path / run,
                                   epochs=3, sentiment_epochs=2, seed=123)
            train_all(cfg)
            payloads.append((tmp_path / run / "metrics.json").read_bytes())
        _report("determinism-bit-identical", payloads[0] == payloads[1],
                f"{len(payloads[0])} bytes")


class TestServiceGolden:
    def test_three_turn_script_reproduces_bytes(self, trained_run):
        cfg, ckpts, _ = trained_run
        from revcore.fixtures import entity_name, item_title

        script = [
            f"hi i loved {item_title(0)} and {entity_name(1)}",
            f"have you seen {item_title(3)} ?",
            "thanks , anything else ?",
        ]
        blobs = []
        for _ in range(2):
            engine = build_engine(ckpts["sentiment"].parent)
            sid = engine.open_session()
            transcript = [engine.step(sid, text) for text in script]
            blobs.append(json.dumps(transcript, sort_keys=True).encode())
        _report("service-golden-bytes", blobs[0] == blobs[1],
                f"{len(blobs[0])} bytes")
