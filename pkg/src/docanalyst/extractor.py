"""Per-document retrieval-augmented extraction, plus the flat-RAG baseline.

Retrieval is local and deterministic: a case-folded content-word overlap
scorer over fixed-size character chunks (an embedding scorer can be injected
through RetrievalConfig). The extraction loop fans out over (document,
template) pairs, buffers results, and re-sorts them so output order never
depends on thread scheduling.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .corpus import Chunk, Corpus, DocumentRecord, chunk_document, schema_description
from .errors import ConfigError, DocAnalystError, ExtractionError
from .gateway import ChatRequest, Gateway
from .planner import InstantiatedQuery, Plan, fill_template, satisfy_restriction
from .prompts import BASELINE_SYSTEM, READER_SYSTEM, baseline_prompt, reader_prompt

logger = logging.getLogger(__name__)

NO_ANSWER = "NO_ANSWER_FOUND"

# Small function-word list; enough to keep trivial words out of overlap
# scores on synthetic corpora. Configurable per RetrievalConfig.
DEFAULT_STOPWORDS = frozenset(
    """a an the of in on at to for from by with and or is are was were be been
    what which who when where how s its their this that these those
    的 了 在 是 和 与 及 或 其 于 对 等""".split()
)

_TOKEN_RE = re.compile(r"[0-9A-Za-z_一-鿿]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


def content_words(text: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> set[str]:
    return {tok for tok in tokenize(text) if tok not in stopwords}


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 3
    scorer: str = "lexical_overlap"  # or "injected"
    chunk_chars: int = 4000
    overlap_chars: int = 200
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    score_fn: Callable[[str, Chunk], float] | None = None  # required for "injected"

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.scorer not in ("lexical_overlap", "injected"):
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "injected" and self.score_fn is None:
            raise ConfigError("injected scorer requires score_fn")


@dataclass
class ExtractionPair:
    """One (metadata, instantiated sub-query, answer) triple plus retrieval trace."""

    metadata: dict[str, str]
    query: InstantiatedQuery
    answer: str
    retrieved: list[Chunk] = field(default_factory=list)
    retrieved_scores: list[float] = field(default_factory=list)


@dataclass
class FailedPair:
    doc_id: str
    template_index: int
    query_text: str
    error: str


@dataclass
class ExtractionRun:
    pairs: list[ExtractionPair]
    failed: list[FailedPair] = field(default_factory=list)


@dataclass
class BaselineAnswer:
    question: str
    answer: str
    retrieved: list[Chunk]
    metadata_in_prompt: bool


def _score(query: str, chunk: Chunk, cfg: RetrievalConfig) -> float:
    if cfg.scorer == "injected":
        return cfg.score_fn(query, chunk)
    qwords = content_words(query, cfg.stopwords)
    return float(len(qwords & content_words(chunk.text, cfg.stopwords)))


def retrieve_scored(
    doc: DocumentRecord, query: str, cfg: RetrievalConfig
) -> list[tuple[Chunk, float]]:
    """Top-k (chunk, score) pairs by score, ties broken by ascending chunk index."""
    chunks = chunk_document(doc, cfg.chunk_chars, cfg.overlap_chars)
    scored = [(chunk, _score(query, chunk, cfg)) for chunk in chunks]
    scored.sort(key=lambda item: (-item[1], item[0].index))
    return scored[: cfg.top_k]


def retrieve(doc: DocumentRecord, query: str, cfg: RetrievalConfig) -> list[Chunk]:
    """Top-k chunks by score, ties broken by ascending chunk index."""
    return [chunk for chunk, _ in retrieve_scored(doc, query, cfg)]


def answer_subquery(
    doc: DocumentRecord, iq: InstantiatedQuery, cfg: RetrievalConfig, gateway: Gateway
) -> ExtractionPair:
    """Retrieve, build the reader prompt, and ask the reader role."""
    if iq.doc_id != doc.doc_id:
        raise ExtractionError(
            f"query doc_id {iq.doc_id!r} does not match document {doc.doc_id!r}",
            doc_id=doc.doc_id,
            template_index=iq.template_index,
        )
    scored = retrieve_scored(doc, iq.query_text, cfg)
    retrieved = [chunk for chunk, _ in scored]
    prompt = reader_prompt(doc.doc_id, iq.query_text, [c.text for c in retrieved])
    try:
        response = gateway.complete(
            ChatRequest(role_tag="reader", system_prompt=READER_SYSTEM, user_prompt=prompt)
        )
    except DocAnalystError as exc:
        raise ExtractionError(
            f"doc={doc.doc_id} template={iq.template_index}: {exc}",
            doc_id=doc.doc_id,
            template_index=iq.template_index,
        ) from exc
    return ExtractionPair(
        metadata=dict(doc.metadata),
        query=iq,
        answer=response.text,
        retrieved=retrieved,
        retrieved_scores=[score for _, score in scored],
    )


def extract_all(
    corpus: Corpus,
    plan: Plan,
    cfg: RetrievalConfig,
    gateway: Gateway,
    parallelism: int = 8,
) -> ExtractionRun:
    """Run the (document x template) extraction loop.

    Emits one pair per combination whose restriction the document satisfies,
    ordered by (document position, template index) regardless of completion
    order. Per-pair failures become FailedPair records, never aborts.
    """
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")

    jobs: list[tuple[int, int, DocumentRecord, InstantiatedQuery]] = []
    for doc_pos, doc in enumerate(corpus.documents):
        for t_idx, template in enumerate(plan.templates):
            if satisfy_restriction(doc.metadata, template):
                iq = fill_template(template, doc.metadata, doc_id=doc.doc_id, template_index=t_idx)
                jobs.append((doc_pos, t_idx, doc, iq))

    if not jobs:
        logger.warning("plan restrictions match no document; empty extraction")
        return ExtractionRun(pairs=[], failed=[])

    results: dict[tuple[int, int], ExtractionPair] = {}
    failures: dict[tuple[int, int], FailedPair] = {}

    def _work(job):
        doc_pos, t_idx, doc, iq = job
        try:
            return (doc_pos, t_idx), answer_subquery(doc, iq, cfg, gateway), None
        except DocAnalystError as exc:
            return (doc_pos, t_idx), None, FailedPair(
                doc_id=doc.doc_id, template_index=t_idx, query_text=iq.query_text, error=str(exc)
            )

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        for key, pair, failure in pool.map(_work, jobs):
            if pair is not None:
                results[key] = pair
            else:
                failures[key] = failure

    pairs = [results[key] for key in sorted(results)]
    failed = [failures[key] for key in sorted(failures)]
    if failed:
        logger.warning("%d of %d extraction pairs failed", len(failed), len(jobs))
    return ExtractionRun(pairs=pairs, failed=failed)


def metadata_listing(corpus: Corpus) -> str:
    """Per-document metadata lines for the metadata-in-prompt baseline."""
    lines = [schema_description(corpus.schema), ""]
    for doc in corpus.documents:
        rendered = ", ".join(f"{k}={doc.metadata[k]}" for k in corpus.schema.field_names)
        lines.append(f"- {rendered}")
    return "\n".join(lines)


def flat_rag(
    question: str,
    corpus: Corpus,
    budget: int,
    metadata_in_prompt: bool,
    gateway: Gateway,
    cfg: RetrievalConfig = RetrievalConfig(),
) -> BaselineAnswer:
    """Single-call baseline over one corpus-wide retrieval pool.

    Scores all chunks of all documents against the question and keeps the
    top ``budget`` globally (ties: document position, then chunk index).
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    pool: list[tuple[float, int, Chunk]] = []
    for doc_pos, doc in enumerate(corpus.documents):
        for chunk in chunk_document(doc, cfg.chunk_chars, cfg.overlap_chars):
            pool.append((_score(question, chunk, cfg), doc_pos, chunk))
    pool.sort(key=lambda item: (-item[0], item[1], item[2].index))
    retrieved = [chunk for _, _, chunk in pool[:budget]]

    listing = metadata_listing(corpus) if metadata_in_prompt else None
    prompt = baseline_prompt(question, [c.text for c in retrieved], listing)
    response = gateway.complete(
        ChatRequest(role_tag="reader", system_prompt=BASELINE_SYSTEM, user_prompt=prompt)
    )
    return BaselineAnswer(
        question=question,
        answer=response.text,
        retrieved=retrieved,
        metadata_in_prompt=metadata_in_prompt,
    )
