import json
import sys
from pathlib import Path

import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from docanalyst.corpus import Corpus, DocumentRecord, MetadataSchema  # noqa: E402
from docanalyst.gateway import Gateway, ProviderConfig, ScriptedProvider  # noqa: E402


def make_doc(doc_id, ticker, year, dtype="annual_report", text="placeholder text", sidecar=None):
    return DocumentRecord(
        doc_id=doc_id,
        metadata={"ticker_symbol": ticker, "fiscal_year": year, "document_type": dtype},
        text=text,
        fact_sidecar=sidecar,
    )


@pytest.fixture
def default_schema():
    return MetadataSchema.default()


@pytest.fixture
def small_corpus(default_schema):
    docs = [
        make_doc("A_2021", "AAA", "2021"),
        make_doc("B_2022", "BBB", "2022"),
        make_doc("C_2023", "CCC", "2023"),
    ]
    return Corpus(schema=default_schema, documents=docs)


def scripted_gateway(script, fallback="UNMATCHED_PROMPT", **config):
    return Gateway(ScriptedProvider(script, fallback), ProviderConfig(**config))


class QueueProvider:
    """Replies from a fixed queue, one per call; repeats the last reply."""

    provider_id = "queue"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def send(self, request):
        self.calls += 1
        if len(self.replies) > 1:
            return self.replies.pop(0)
        return self.replies[0]


class RecordingProvider:
    """Captures prompts and returns a fixed reply."""

    provider_id = "recording"

    def __init__(self, reply="ok"):
        self.reply = reply
        self.prompts = []
        self.requests = []

    def send(self, request):
        self.prompts.append(request.user_prompt)
        self.requests.append(request)
        return self.reply


def write_manifest(tmp_path, docs, schema=None):
    """Write a corpus manifest plus text files; returns the manifest path."""
    schema = schema or [
        {"name": "ticker_symbol", "description": "company", "kind": "identifier"},
        {"name": "fiscal_year", "description": "period covered", "kind": "year"},
        {"name": "document_type", "description": "disclosure category", "kind": "categorical"},
    ]
    (tmp_path / "texts").mkdir(exist_ok=True)
    entries = []
    for doc in docs:
        text_rel = f"texts/{doc['doc_id']}.txt"
        (tmp_path / text_rel).write_text(doc.get("text", "body"), encoding="utf-8")
        entry = {"doc_id": doc["doc_id"], "text_path": text_rel, "metadata": doc["metadata"]}
        if "sidecar" in doc:
            sidecar_rel = f"texts/{doc['doc_id']}.sidecar.json"
            (tmp_path / sidecar_rel).write_text(
                json.dumps(doc["sidecar"]), encoding="utf-8"
            )
            entry["fact_sidecar_path"] = sidecar_rel
        entries.append(entry)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps({"schema": schema, "documents": entries}, indent=2) + "\n", encoding="utf-8"
    )
    return manifest
