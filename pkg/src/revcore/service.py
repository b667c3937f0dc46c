"""Turn-by-turn inference service over trained checkpoints.

Sessions are in-memory and evicted after 30 idle minutes. Each user message
runs the full loop: entity linking, review retrieval for newly mentioned
items (link rate 1.0, polarity from a small cue-word lexicon), entity-set
update, top-k recommendation, and response generation capped at 30 tokens.

HTTP surface (JSON):
  POST /sessions                       -> {"session_id": ...}
  POST /sessions/{id}/messages {text}  -> {response, recommendations, reviews}
  GET  /sessions/{id}/recommendations?k=10
Errors come back as {"code": ..., "message": ...}.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import pydantic as _pydantic
import torch

from .corpus import (
    Attitude,
    Dialogue,
    EOS_ID,
    SEP_ID,
    Speaker,
    Utterance,
    assemble_context,
    link_entities,
    tokenize,
)
from .dialogue import clean_scope, generate
from .pipeline import (
    LoadedCheckpoints,
    build_gen_instances,  # noqa: F401 (kept for parity with training inputs)
    entity_scope_ids,
    load_checkpoints,
)
from .recommender import EntitySet, top_k
from .retrieval import ReviewSentence, polarity_target, retrieve
from .sentiment import Polarity, polarity_of_score

logger = logging.getLogger(__name__)

SESSION_TTL_SECONDS = 30 * 60
DEFAULT_TOP_K = 10

POSITIVE_CUES = frozenset(
    "like liked likes love loved enjoy enjoyed great good amazing favorite "
    "best wonderful fantastic".split()
)
NEGATIVE_CUES = frozenset(
    "hate hated dislike disliked boring awful terrible bad worst dull".split()
)


def detect_attitude(tokens: list[str]) -> Polarity:
    """Cue-word polarity for a live utterance; positive when nothing matches."""
    if any(t in NEGATIVE_CUES for t in tokens) and \
            not any(t in POSITIVE_CUES for t in tokens):
        return Polarity.NEGATIVE
    return Polarity.POSITIVE


@dataclass
class Session:
    id: str
    dialogue: Dialogue
    context_entities: list[str] = field(default_factory=list)
    review_sentences: list[ReviewSentence] = field(default_factory=list)
    review_items: list[str] = field(default_factory=list)  # mention provenance
    retrieved_for: set[str] = field(default_factory=set)
    created_at: float = field(default_factory=time.time)
    last_active: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceError(RuntimeError):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


class ChatEngine:
    """Session store plus the retrieval -> recommendation -> generation loop.

    Steps within one session are serialized by a per-session lock; distinct
    sessions never share mutable state.
    """

    def __init__(
        self,
        loaded: LoadedCheckpoints,
        db,
        k: int = DEFAULT_TOP_K,
        session_ttl: float = SESSION_TTL_SECONDS,
    ):
        self.loaded = loaded
        self.db = db
        self.k = k
        self.session_ttl = session_ttl
        self.vocab = loaded.vocab
        self.kg = loaded.kg
        self.strategy = loaded.run_config.retrieval_strategy()
        self.max_response = loaded.run_config.max_response
        self.max_context = loaded.run_config.max_context
        loaded.recommender.eval()
        loaded.dialogue.eval()
        with torch.no_grad():
            self.entity_table = loaded.recommender.encoded_table().detach()
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._counter = 0

    # ------------------------------------------------------------- sessions

    def open_session(self) -> str:
        with self._registry_lock:
            self._evict_stale()
            self._counter += 1
            sid = f"s{self._counter}"
            self._sessions[sid] = Session(sid, Dialogue(sid, []))
        return sid

    def _evict_stale(self) -> None:
        now = time.time()
        for sid in [s for s, sess in self._sessions.items()
                    if now - sess.last_active > self.session_ttl]:
            del self._sessions[sid]
            logger.info("evicted idle session %s", sid)

    def _session(self, session_id: str) -> Session:
        with self._registry_lock:
            self._evict_stale()
            sess = self._sessions.get(session_id)
        if sess is None:
            raise ServiceError("unknown_session", f"no session {session_id!r}", 404)
        return sess

    # ----------------------------------------------------------------- step

    def step(self, session_id: str, text: str) -> dict:
        sess = self._session(session_id)
        if not text or not text.strip():
            raise ServiceError("empty_text", "message text is empty", 400)
        with sess.lock:
            sess.last_active = time.time()
            return self._step_locked(sess, text)

    def _step_locked(self, sess: Session, text: str) -> dict:
        tokens = tokenize(text)
        ids = self.vocab.encode(tokens)
        entities = link_entities(tokens, self.kg)
        catalog = self.loaded.recommender.catalog_index
        attitude = detect_attitude(tokens)
        mentioned_items = [e for e in entities if e in catalog]

        turn_ix = len(sess.dialogue.turns)
        new_reviews: list[tuple[str, ReviewSentence]] = []
        for item in mentioned_items:
            if item in sess.retrieved_for:
                continue
            sess.retrieved_for.add(item)
            rng = random.Random(f"serve:{turn_ix}:{item}")
            sentence = retrieve(
                item, polarity_target(attitude), self.db,
                self.loaded.sentiment, self.strategy, rng,
            )
            if sentence is not None:
                new_reviews.append((item, sentence))

        utt = Utterance(
            Speaker.SEEKER, ids,
            item_mentions=[
                (item, Attitude.LIKED if attitude is Polarity.POSITIVE
                 else Attitude.DISLIKED)
                for item in mentioned_items
            ],
            entity_mentions=entities,
        )
        sess.dialogue.turns.append(utt)
        sess.context_entities.extend(entities)
        for item, sentence in new_reviews:
            sess.review_sentences.append(sentence)
            sess.review_items.append(item)

        entity_set = self._entity_set(sess)
        probs = self._distribution(entity_set)
        ranked = top_k(probs, self.k)
        response_ids = self._generate(sess, entity_set)

        response_tokens = [t for t in response_ids if t != EOS_ID]
        response_text = " ".join(self.vocab.decode(response_tokens))
        reply = Utterance(
            Speaker.RECOMMENDER, response_tokens,
            entity_mentions=link_entities(self.vocab.decode(response_tokens), self.kg),
        )
        sess.dialogue.turns.append(reply)
        sess.context_entities.extend(reply.entity_mentions)

        return {
            "response": response_text,
            "recommendations": self._items_payload(probs, ranked),
            "reviews": [
                {
                    "item": item,
                    "snippet": " ".join(self.vocab.decode(s.tokens)),
                    "review_id": s.source_review,
                    "sentiment": s.v,
                    "polarity": polarity_of_score(s.v).value,
                }
                for item, s in new_reviews
            ],
        }

    def _entity_set(self, sess: Session) -> EntitySet:
        review_entities: list[str] = []
        for sentence in sess.review_sentences:
            review_entities.extend(
                link_entities(self.vocab.decode(sentence.tokens), self.kg)
            )
        return EntitySet(list(sess.context_entities), review_entities)

    def _distribution(self, entity_set: EntitySet) -> torch.Tensor:
        with torch.no_grad():
            return self.loaded.recommender(entity_set)

    def _generate(self, sess: Session, entity_set: EntitySet) -> list[int]:
        context = assemble_context(
            [t.tokens for t in sess.dialogue.turns], self.max_context
        )
        review_ids: list[int] = []
        for sentence in sess.review_sentences:
            if review_ids:
                review_ids.append(SEP_ID)
            review_ids.extend(sentence.tokens)
        rows = None
        if entity_set.l:
            idx = torch.tensor(
                [self.loaded.recommender.entity_index[e] for e in entity_set.merged]
            )
            rows = self.entity_table[idx]
        return generate(
            self.loaded.dialogue, context, review_ids, rows,
            kg_scope=entity_scope_ids(entity_set.merged, self.kg, self.vocab),
            review_scope=clean_scope(
                [t for s in sess.review_sentences for t in s.tokens]
            ),
            max_len=self.max_response,
        )

    def _items_payload(self, probs: torch.Tensor, ranked: list[int]) -> list[dict]:
        catalog = self.loaded.recommender.catalog
        return [
            {"item": catalog[i], "score": float(probs[i])} for i in ranked
        ]

    def get_recommendations(self, session_id: str, k: int) -> list[dict]:
        sess = self._session(session_id)
        with sess.lock:
            sess.last_active = time.time()
            probs = self._distribution(self._entity_set(sess))
            return self._items_payload(probs, top_k(probs, k))


def build_engine(ckpt_dir: str | Path, reviews_path: str | Path | None = None,
                 k: int = DEFAULT_TOP_K) -> ChatEngine:
    """Load checkpoints plus the review database the retriever serves from."""
    from .corpus import load_reviews

    loaded = load_checkpoints(ckpt_dir)
    reviews = Path(reviews_path) if reviews_path else Path(loaded.run_config.reviews)
    return ChatEngine(loaded, load_reviews(reviews, loaded.vocab), k=k)


class _MessageIn(_pydantic.BaseModel):
    text: str


def create_app(ckpt_dir: str | Path, reviews_path: str | Path | None = None,
               k: int = DEFAULT_TOP_K):
    """FastAPI application exposing the engine."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    engine = build_engine(ckpt_dir, reviews_path, k)
    app = FastAPI(title="revcore service")
    app.state.engine = engine
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def service_error_handler(_: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.post("/sessions")
    def open_session():
        return {"session_id": engine.open_session()}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, message: _MessageIn):
        return engine.step(session_id, message.text)

    @app.get("/sessions/{session_id}/recommendations")
    def recommendations(session_id: str, k: int = DEFAULT_TOP_K):
        return {"recommendations": engine.get_recommendations(session_id, k)}

    return app
