import json

import pytest
from hypothesis import given, settings, strategies as st

from revcore.corpus import (
    Attitude,
    CorpusError,
    KnowledgeGraph,
    MAX_CONTEXT_TOKENS,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    Vocabulary,
    assemble_context,
    build_vocab,
    link_entities,
    load_dialogues,
    load_kg,
    load_reviews,
    split_sentences,
    tokenize,
)


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def dialogue_record(dlg_id="d0", texts=("hi i loved @m1 .", "try @m2 it is great")):
    roles = ["seeker", "recommender"]
    return {
        "id": dlg_id,
        "turns": [
            {"role": roles[i % 2], "text": t,
             "mentions": ([{"item": f"m{i + 1}", "attitude": "liked"}])}
            for i, t in enumerate(texts)
        ],
        "targets": [{"turn": 1, "item": "m2"}],
    }


@pytest.fixture()
def vocab():
    return Vocabulary.build(
        "hi i loved try it is great @m1 @m2 . x y z".split()
    )


class TestVocabulary:
    def test_reserved_ids_distinct(self, vocab):
        assert vocab.decode([0, 1, 2, 3, 4]) == ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"]

    def test_bijection(self, vocab):
        for tok, ix in vocab.index.items():
            assert vocab.tokens[ix] == tok

    def test_unknown_maps_to_unk(self, vocab):
        assert vocab.encode(["zzzz"]) == [UNK_ID]


class TestTokenize:
    def test_item_placeholder_is_one_token(self):
        assert tokenize("I loved @m12!") == ["i", "loved", "@m12", "!"]

    def test_sentence_split_on_terminal_punctuation(self):
        toks = tokenize("good film . bad ending ! why")
        assert split_sentences(toks) == [
            ["good", "film", "."], ["bad", "ending", "!"], ["why"],
        ]


class TestLoadDialogues:
    def test_round_trip_two_turns(self, tmp_path, vocab):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [dialogue_record()])
        (dlg,) = load_dialogues(path, vocab)
        assert len(dlg.turns) == 2
        assert dlg.turns[0].speaker.value == "seeker"
        assert dlg.turns[0].item_mentions == [("m1", Attitude.LIKED)]
        assert dlg.rec_targets == [(1, "m2")]

    def test_recommender_first_rejected(self, tmp_path, vocab):
        rec = dialogue_record()
        rec["turns"][0]["role"] = "recommender"
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [rec])
        with pytest.raises(CorpusError, match="alternation"):
            load_dialogues(path, vocab)

    def test_malformed_json_reports_line(self, tmp_path, vocab):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(dialogue_record()) + "\n{oops\n")
        with pytest.raises(CorpusError, match=":2"):
            load_dialogues(path, vocab)

    def test_target_must_be_mentioned(self, tmp_path, vocab):
        rec = dialogue_record()
        rec["targets"] = [{"turn": 1, "item": "m9"}]
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [rec])
        with pytest.raises(CorpusError, match="m9"):
            load_dialogues(path, vocab)

    def test_deterministic(self, tmp_path, vocab):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [dialogue_record()])
        one, two = load_dialogues(path, vocab), load_dialogues(path, vocab)
        assert one == two


class TestContextTruncation:
    def test_300_tokens_keep_most_recent_256(self):
        turns = [list(range(10, 110)), list(range(200, 300)), list(range(300, 400))]
        ctx = assemble_context(turns)
        assert len(ctx) == MAX_CONTEXT_TOKENS
        flat = []
        for i, t in enumerate(turns):
            if i:
                flat.append(SEP_ID)
            flat.extend(t)
        assert ctx == flat[-256:]

    def test_short_context_untouched(self):
        assert assemble_context([[7, 8], [9]]) == [7, 8, SEP_ID, 9]


class TestLoadReviews:
    def _records(self, n, item="m1"):
        return [
            {"item": item, "text": f"token{i} fine movie .", "rating": 7,
             "helpful": i}
            for i in range(n)
        ]

    def test_top_30_by_helpful(self, tmp_path, vocab_from_records=None):
        path = tmp_path / "r.jsonl"
        records = self._records(35)
        write_jsonl(path, records)
        vocab = build_vocab(review_paths=[path])
        db = load_reviews(path, vocab)
        reviews = db.get("m1")
        assert len(reviews) == 30
        # 5 lowest helpful scores (0..4) dropped
        assert min(r.helpful_score for r in reviews) == 5

    def test_missing_item_absent(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_jsonl(path, self._records(2))
        vocab = build_vocab(review_paths=[path])
        db = load_reviews(path, vocab)
        assert "m9" not in db
        assert db.get("m9") == []

    def test_ties_break_by_review_id(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = [
            {"item": "m1", "text": f"text {i} .", "rating": 6, "helpful": h}
            for i, h in enumerate([5, 9, 5, 9, 5])
        ]
        write_jsonl(path, records)
        vocab = build_vocab(review_paths=[path])
        db = load_reviews(path, vocab)
        got = [(r.helpful_score, r.review_id) for r in db.get("m1")]
        # oracle: plain stable sort over (helpful desc, id asc)
        expected = sorted(
            [(h, i) for i, h in enumerate([5, 9, 5, 9, 5])],
            key=lambda x: (-x[0], x[1]),
        )
        assert got == expected

    def test_bad_rating_rejected_and_continue(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = self._records(2) + [
            {"item": "m1", "text": "broken .", "rating": 11, "helpful": 1},
            {"item": "m1", "text": "broken .", "rating": 0, "helpful": 1},
        ]
        write_jsonl(path, records)
        vocab = build_vocab(review_paths=[path])
        db = load_reviews(path, vocab)
        assert len(db.get("m1")) == 2
        assert db.rejected == 2

    def test_sorted_non_increasing_invariant(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_jsonl(path, [
            {"item": "m1", "text": f"t{i} .", "rating": 6, "helpful": (i * 7) % 13}
            for i in range(40)
        ])
        vocab = build_vocab(review_paths=[path])
        reviews = load_reviews(path, vocab).get("m1")
        assert len(reviews) <= 30
        scores = [r.helpful_score for r in reviews]
        assert scores == sorted(scores, reverse=True)


class TestLoadKG:
    def _write(self, tmp_path, kg_lines, lex_lines):
        kg = tmp_path / "kg.tsv"
        lex = tmp_path / "lexicon.tsv"
        kg.write_text("\n".join(kg_lines) + ("\n" if kg_lines else ""))
        lex.write_text("\n".join(lex_lines) + "\n")
        return kg, lex

    def test_triples_over_entities(self, tmp_path):
        kg, lex = self._write(
            tmp_path,
            ["a\tr\tb", "b\tr\tc", "c\ts\td"],
            ["alpha\ta", "bravo\tb", "charlie\tc", "delta\td"],
        )
        graph = load_kg(kg, lex)
        assert len(graph.entities) == 4
        assert len(graph.triples) == 3
        assert graph.relations == ["r", "s"]

    def test_dangling_tail_rejected_with_count(self, tmp_path):
        kg, lex = self._write(
            tmp_path, ["a\tr\tb", "a\tr\tzz"], ["alpha\ta", "bravo\tb"]
        )
        graph = load_kg(kg, lex)
        assert graph.triples == [("a", "r", "b")]
        assert graph.rejected_triples == 1

    def test_empty_triples_nonempty_entities(self, tmp_path):
        kg, lex = self._write(tmp_path, [], ["alpha\ta", "bravo\tb"])
        graph = load_kg(kg, lex)
        assert graph.triples == []
        assert graph.entities == ["a", "b"]


def oracle_longest_match(tokens, lexicon):
    out, i = [], 0
    while i < len(tokens):
        best = None
        for key, ent in lexicon.items():
            if tuple(tokens[i : i + len(key)]) == key:
                if best is None or len(key) > best[0]:
                    best = (len(key), ent)
        if best:
            out.append(best[1])
            i += best[0]
        else:
            i += 1
    return out


def make_kg(lexicon):
    return KnowledgeGraph(
        sorted(set(lexicon.values())), [], [], dict(lexicon)
    )


class TestLinkEntities:
    def test_single_key(self):
        kg = make_kg({("alan", "voss"): "e1"})
        assert link_entities("i like alan voss a lot".split(), kg) == ["e1"]

    def test_longest_match_wins(self):
        kg = make_kg({("new", "york"): "nyc", ("york",): "york"})
        assert link_entities("i visited new york today".split(), kg) == ["nyc"]

    def test_no_match_empty(self):
        kg = make_kg({("alan", "voss"): "e1"})
        assert link_entities("nothing here".split(), kg) == []

    @settings(max_examples=150, deadline=None)
    @given(
        tokens=st.lists(st.sampled_from("a b c d e".split()), max_size=12),
        surfaces=st.sets(
            st.tuples(st.sampled_from("a b c d e".split()),
                      st.sampled_from(["", "b", "c"])),
            min_size=1, max_size=5,
        ),
    )
    def test_matches_bruteforce_oracle(self, tokens, surfaces):
        lexicon = {}
        for i, (first, second) in enumerate(sorted(surfaces)):
            key = (first,) if not second else (first, second)
            lexicon.setdefault(key, f"e{i}")
        kg = make_kg(lexicon)
        assert link_entities(tokens, kg) == oracle_longest_match(tokens, lexicon)
