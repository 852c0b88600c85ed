"""Document collection with metadata index, chunking, and restriction filtering.

A Corpus is loaded from a JSON manifest that names a metadata schema and a
list of documents (text files on disk, one metadata map each, optionally a
fact sidecar for synthetic corpora). Everything is immutable after load and
safe to share across threads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError

logger = logging.getLogger(__name__)

VALUE_KINDS = ("categorical", "year", "identifier")


@dataclass(frozen=True)
class MetadataField:
    name: str
    description: str
    kind: str  # one of VALUE_KINDS


@dataclass(frozen=True)
class MetadataSchema:
    """Ordered metadata field declarations shared by every document."""

    fields: tuple[MetadataField, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if any(not n for n in names):
            raise CorpusError("schema field names must be non-empty")
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate schema field names: {names}")
        for f in self.fields:
            if f.kind not in VALUE_KINDS:
                raise CorpusError(f"unknown value kind {f.kind!r} for field {f.name!r}")

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @classmethod
    def default(cls) -> "MetadataSchema":
        return cls(
            fields=(
                MetadataField("ticker_symbol", "identifies the company behind the document", "identifier"),
                MetadataField("fiscal_year", "the period the document covers, distinct from its publication year", "year"),
                MetadataField("document_type", "the disclosure category of the document", "categorical"),
            )
        )


@dataclass(frozen=True)
class SidecarFact:
    """Machine-readable ground truth for one metric embedded in a document."""

    value: str
    statement: str


class DocumentRecord:
    """One document's text plus its metadata map.

    Text may be loaded lazily from ``text_path``; the first access caches it.
    Records are treated as immutable after construction.
    """

    __slots__ = ("doc_id", "metadata", "fact_sidecar", "text_path", "sidecar_path", "_abs_text_path", "_text")

    def __init__(
        self,
        doc_id: str,
        metadata: dict[str, str],
        text: str | None = None,
        text_path: str | Path | None = None,
        fact_sidecar: dict[str, SidecarFact] | None = None,
        sidecar_path: str | Path | None = None,
        abs_text_path: str | Path | None = None,
    ):
        if text is None and text_path is None and abs_text_path is None:
            raise CorpusError(f"document {doc_id!r} has neither text nor text_path")
        self.doc_id = doc_id
        self.metadata = dict(metadata)
        self.fact_sidecar = fact_sidecar
        # text_path stays manifest-relative for round-trip serialization;
        # _abs_text_path is what lazy loading actually reads.
        self.text_path = str(text_path) if text_path is not None else None
        self.sidecar_path = str(sidecar_path) if sidecar_path is not None else None
        self._abs_text_path = str(abs_text_path) if abs_text_path is not None else self.text_path
        self._text = text

    @property
    def text(self) -> str:
        if self._text is None:
            self._text = Path(self._abs_text_path).read_text(encoding="utf-8")
        return self._text

    def __repr__(self) -> str:  # pragma: no cover
        return f"DocumentRecord({self.doc_id!r}, metadata={self.metadata!r})"


@dataclass(frozen=True)
class Chunk:
    """A contiguous slice of one document's text."""

    doc_id: str
    index: int
    text: str
    char_span: tuple[int, int]


@dataclass
class Corpus:
    schema: MetadataSchema
    documents: list[DocumentRecord] = field(default_factory=list)

    def __post_init__(self):
        expected = set(self.schema.field_names)
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            if set(doc.metadata) != expected:
                raise CorpusError(
                    f"metadata key mismatch for doc {doc.doc_id!r}: "
                    f"got {sorted(doc.metadata)}, schema wants {sorted(expected)}"
                )

    def doc_by_id(self, doc_id: str) -> DocumentRecord:
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise CorpusError(f"unknown doc_id {doc_id!r}")

    def subset(self, doc_ids: list[str]) -> "Corpus":
        """New Corpus containing the named documents, in the given order."""
        return Corpus(self.schema, [self.doc_by_id(d) for d in doc_ids])


def load_manifest(path: str | Path, eager: bool = True) -> Corpus:
    """Load a corpus from a manifest file.

    The manifest format is JSON: ``{"schema": [{"name", "description",
    "kind"}], "documents": [{"doc_id", "text_path", "metadata",
    "fact_sidecar_path"?}]}``. Paths are resolved relative to the manifest's
    directory. With ``eager`` false, document text is read on first access.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"manifest is not valid JSON: {exc}") from exc

    try:
        schema = MetadataSchema(
            fields=tuple(
                MetadataField(f["name"], f.get("description", ""), f.get("kind", "categorical"))
                for f in payload["schema"]
            )
        )
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed schema block: {exc}") from exc

    base = path.parent
    documents: list[DocumentRecord] = []
    for entry in payload.get("documents", []):
        try:
            doc_id = entry["doc_id"]
            text_path = base / entry["text_path"]
            metadata = {str(k): _coerce_meta_value(v) for k, v in entry["metadata"].items()}
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"malformed document entry: {exc}") from exc
        sidecar = None
        sidecar_rel = entry.get("fact_sidecar_path")
        sidecar_path = base / sidecar_rel if sidecar_rel else None
        if sidecar_path is not None:
            sidecar = load_sidecar(sidecar_path)
        if not text_path.exists():
            raise CorpusError(f"text file missing for doc {doc_id!r}: {text_path}")
        documents.append(
            DocumentRecord(
                doc_id=doc_id,
                metadata=metadata,
                text=text_path.read_text(encoding="utf-8") if eager else None,
                text_path=entry["text_path"],
                fact_sidecar=sidecar,
                sidecar_path=sidecar_rel,
                abs_text_path=text_path,
            )
        )
    return Corpus(schema=schema, documents=documents)


def load_sidecar(path: str | Path) -> dict[str, SidecarFact]:
    """Read a fact sidecar file: metric name -> {value, statement}."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        metric: SidecarFact(value=str(entry["value"]), statement=str(entry["statement"]))
        for metric, entry in payload.items()
    }


def manifest_payload(corpus: Corpus) -> dict:
    """Canonical manifest dict for a corpus whose documents carry paths."""
    docs = []
    for doc in corpus.documents:
        if doc.text_path is None:
            raise CorpusError(f"doc {doc.doc_id!r} has no text_path; cannot serialize manifest")
        entry: dict = {
            "doc_id": doc.doc_id,
            "text_path": doc.text_path,
            "metadata": {name: doc.metadata[name] for name in corpus.schema.field_names},
        }
        if doc.sidecar_path:
            entry["fact_sidecar_path"] = doc.sidecar_path
        docs.append(entry)
    return {
        "schema": [
            {"name": f.name, "description": f.description, "kind": f.kind}
            for f in corpus.schema.fields
        ],
        "documents": docs,
    }


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical manifest JSON (stable key order, LF-terminated)."""
    text = json.dumps(manifest_payload(corpus), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _coerce_meta_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return str(value)
    raise CorpusError(f"metadata values must be scalar strings, got {type(value).__name__}")


def restriction_allows(metadata: dict[str, str], restriction: dict[str, list[str]] | None) -> bool:
    """True iff the metadata satisfies every restricted field.

    Conjunction across fields, disjunction within each allowed list. Values
    are compared exactly after trimming surrounding whitespace; an absent or
    empty restriction allows everything.
    """
    if not restriction:
        return True
    for fname, allowed in restriction.items():
        value = metadata.get(fname, "").strip()
        if value not in {a.strip() for a in allowed}:
            return False
    return True


def filter_by_restriction(
    corpus: Corpus, restriction: dict[str, list[str]]
) -> list[DocumentRecord]:
    """Documents whose metadata satisfies the restriction, in corpus order."""
    unknown = set(restriction) - set(corpus.schema.field_names)
    if unknown:
        raise CorpusError(f"unknown field name(s) in restriction: {sorted(unknown)}")
    return [doc for doc in corpus.documents if restriction_allows(doc.metadata, restriction)]


def chunk_document(doc: DocumentRecord, chunk_chars: int, overlap_chars: int = 0) -> list[Chunk]:
    """Split a document into left-to-right fixed-size chunks.

    Every chunk except possibly the last has exactly ``chunk_chars``
    characters and consecutive chunks share ``overlap_chars`` characters.
    """
    if chunk_chars <= 0:
        raise CorpusError("chunk_chars must be positive")
    if overlap_chars < 0 or overlap_chars >= chunk_chars:
        raise CorpusError("overlap_chars must satisfy 0 <= overlap_chars < chunk_chars")
    text = doc.text
    if not text:
        raise CorpusError(f"document {doc.doc_id!r} has empty text")

    chunks: list[Chunk] = []
    start = 0
    index = 0
    while True:
        end = min(start + chunk_chars, len(text))
        chunks.append(Chunk(doc_id=doc.doc_id, index=index, text=text[start:end], char_span=(start, end)))
        if end == len(text):
            break
        start = end - overlap_chars
        index += 1
    return chunks


def schema_description(schema: MetadataSchema) -> str:
    """Deterministic one-line-per-field rendering, in declared order."""
    return "\n".join(f"{f.name} — {f.description} ({f.kind})" for f in schema.fields)
