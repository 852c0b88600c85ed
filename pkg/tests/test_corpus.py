import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_doc, write_manifest
from docanalyst.corpus import (
    Corpus,
    MetadataField,
    MetadataSchema,
    chunk_document,
    filter_by_restriction,
    load_manifest,
    manifest_payload,
    save_manifest,
    schema_description,
)
from docanalyst.errors import CorpusError


def _meta(ticker, year, dtype="annual_report"):
    return {"ticker_symbol": ticker, "fiscal_year": year, "document_type": dtype}


class TestLoadManifest:
    def test_loads_two_documents(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                {"doc_id": "d1", "metadata": _meta("AAA", "2021"), "text": "one"},
                {"doc_id": "d2", "metadata": _meta("BBB", "2022"), "text": "two"},
            ],
        )
        corpus = load_manifest(manifest)
        assert len(corpus.documents) == 2
        assert corpus.documents[0].text == "one"
        assert corpus.schema.field_names == ("ticker_symbol", "fiscal_year", "document_type")

    def test_metadata_key_mismatch(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [{"doc_id": "d1", "metadata": {"ticker_symbol": "AAA", "document_type": "x"}}],
        )
        with pytest.raises(CorpusError, match="metadata key mismatch"):
            load_manifest(manifest)

    def test_duplicate_doc_id(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                {"doc_id": "d1", "metadata": _meta("AAA", "2021")},
                {"doc_id": "d1", "metadata": _meta("BBB", "2022")},
            ],
        )
        with pytest.raises(CorpusError, match="duplicate doc_id"):
            load_manifest(manifest)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            load_manifest(tmp_path / "nope.json")

    def test_lazy_loading_reads_on_access(self, tmp_path):
        manifest = write_manifest(
            tmp_path, [{"doc_id": "d1", "metadata": _meta("AAA", "2021"), "text": "lazy body"}]
        )
        corpus = load_manifest(manifest, eager=False)
        doc = corpus.documents[0]
        assert doc._text is None
        assert doc.text == "lazy body"

    def test_sidecar_loaded(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                {
                    "doc_id": "d1",
                    "metadata": _meta("AAA", "2021"),
                    "sidecar": {"revenue": {"value": "42.00", "statement": "AAA's revenue was 42.00."}},
                }
            ],
        )
        corpus = load_manifest(manifest)
        fact = corpus.documents[0].fact_sidecar["revenue"]
        assert fact.value == "42.00"
        assert "42.00" in fact.statement

    def test_reserialization_is_byte_identical(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                {"doc_id": "d1", "metadata": _meta("AAA", "2021")},
                {"doc_id": "d2", "metadata": _meta("BBB", "2022")},
            ],
        )
        corpus = load_manifest(manifest)
        out1 = tmp_path / "round1.json"
        save_manifest(corpus, out1)
        corpus2 = load_manifest(out1)
        out2 = tmp_path / "round2.json"
        save_manifest(corpus2, out2)
        assert out1.read_bytes() == out2.read_bytes()
        # canonical payloads agree with the original modulo key order
        original = json.loads(manifest.read_text())
        assert manifest_payload(corpus) == manifest_payload(load_manifest(manifest))
        assert {d["doc_id"] for d in original["documents"]} == {
            d["doc_id"] for d in manifest_payload(corpus)["documents"]
        }


class TestFilterByRestriction:
    def _corpus(self):
        docs = [
            make_doc("A", "AAA", "2021"),
            make_doc("B", "BBB", "2022"),
            make_doc("C", "CCC", "2023"),
        ]
        return Corpus(schema=MetadataSchema.default(), documents=docs)

    def test_year_list_restriction(self):
        got = filter_by_restriction(self._corpus(), {"fiscal_year": ["2021", "2022"]})
        assert [d.doc_id for d in got] == ["A", "B"]

    def test_empty_restriction_returns_all(self):
        assert len(filter_by_restriction(self._corpus(), {})) == 3

    def test_unknown_field(self):
        with pytest.raises(CorpusError, match="unknown field"):
            filter_by_restriction(self._corpus(), {"publication_year": ["2021"]})

    def test_conjunction_matches_brute_force(self):
        docs = [
            make_doc(f"d{i}", t, y, dt)
            for i, (t, y, dt) in enumerate(
                [
                    ("AAA", "2021", "esg"),
                    ("AAA", "2022", "esg"),
                    ("BBB", "2021", "annual_report"),
                    ("BBB", "2021", "esg"),
                    ("CCC", "2022", "annual_report"),
                    ("CCC", "2021", "esg"),
                ]
            )
        ]
        corpus = Corpus(schema=MetadataSchema.default(), documents=docs)
        restriction = {"fiscal_year": ["2021"], "document_type": ["esg"]}
        got = {d.doc_id for d in filter_by_restriction(corpus, restriction)}
        # independent oracle: naive per-document predicate scan
        expected = {
            d.doc_id
            for d in docs
            if d.metadata["fiscal_year"] in restriction["fiscal_year"]
            and d.metadata["document_type"] in restriction["document_type"]
        }
        assert got == expected == {"d0", "d3", "d5"}

    def test_whitespace_trimming(self):
        got = filter_by_restriction(self._corpus(), {"fiscal_year": [" 2021 "]})
        assert [d.doc_id for d in got] == ["A"]


@st.composite
def _corpus_and_restriction(draw):
    tickers = ["AAA", "BBB", "CCC"]
    years = ["2020", "2021", "2022"]
    dtypes = ["annual_report", "esg"]
    n = draw(st.integers(min_value=1, max_value=8))
    docs = [
        make_doc(f"d{i}", draw(st.sampled_from(tickers)), draw(st.sampled_from(years)),
                 draw(st.sampled_from(dtypes)))
        for i in range(n)
    ]
    restriction = {}
    for field, pool in (("ticker_symbol", tickers), ("fiscal_year", years), ("document_type", dtypes)):
        if draw(st.booleans()):
            restriction[field] = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=3))
    return docs, restriction


@settings(max_examples=60, deadline=None)
@given(_corpus_and_restriction())
def test_filter_matches_naive_scan(case):
    docs, restriction = case
    corpus = Corpus(schema=MetadataSchema.default(), documents=docs)
    got = [d.doc_id for d in filter_by_restriction(corpus, restriction)]
    expected = [
        d.doc_id
        for d in docs
        if all(d.metadata[f].strip() in {v.strip() for v in allowed} for f, allowed in restriction.items())
    ]
    assert got == expected


@settings(max_examples=40, deadline=None)
@given(_corpus_and_restriction(), st.sampled_from(["ticker_symbol", "fiscal_year"]))
def test_filter_is_monotone_in_allowed_values(case, field):
    docs, restriction = case
    corpus = Corpus(schema=MetadataSchema.default(), documents=docs)
    before = {d.doc_id for d in filter_by_restriction(corpus, restriction)}
    widened = {k: list(v) for k, v in restriction.items()}
    if field in widened:
        widened[field] = widened[field] + ["ZZZ_extra"]
        after = {d.doc_id for d in filter_by_restriction(corpus, widened)}
        assert before <= after


class TestChunkDocument:
    def test_hand_enumerated_sliding_window(self):
        doc = make_doc("d", "AAA", "2021", text="0123456789")
        chunks = chunk_document(doc, chunk_chars=4, overlap_chars=1)
        assert [c.char_span for c in chunks] == [(0, 4), (3, 7), (6, 10)]
        assert [c.index for c in chunks] == [0, 1, 2]
        assert [c.text for c in chunks] == ["0123", "3456", "6789"]

    def test_short_text_single_chunk(self):
        doc = make_doc("d", "AAA", "2021", text="hi")
        chunks = chunk_document(doc, chunk_chars=10, overlap_chars=2)
        assert len(chunks) == 1
        assert chunks[0].char_span == (0, 2)
        assert chunks[0].text == "hi"

    def test_overlap_equal_to_chunk_is_error(self):
        doc = make_doc("d", "AAA", "2021", text="0123456789")
        with pytest.raises(CorpusError):
            chunk_document(doc, chunk_chars=4, overlap_chars=4)

    def test_empty_text_is_error(self):
        doc = make_doc("d", "AAA", "2021", text="")
        with pytest.raises(CorpusError, match="empty text"):
            chunk_document(doc, chunk_chars=4, overlap_chars=0)

    @settings(max_examples=80, deadline=None)
    @given(
        st.text(min_size=1, max_size=200),
        st.integers(min_value=1, max_value=40),
        st.integers(min_value=0, max_value=39),
    )
    def test_spans_cover_text_without_gaps(self, text, chunk_chars, overlap):
        if overlap >= chunk_chars:
            overlap = chunk_chars - 1
        doc = make_doc("d", "AAA", "2021", text=text)
        chunks = chunk_document(doc, chunk_chars, overlap)
        assert chunks[0].char_span[0] == 0
        assert chunks[-1].char_span[1] == len(text)
        for prev, cur in zip(chunks, chunks[1:]):
            assert cur.char_span[0] == prev.char_span[1] - overlap  # no gaps
        # concatenation minus overlaps reconstructs the text
        rebuilt = chunks[0].text + "".join(c.text[overlap:] for c in chunks[1:])
        assert rebuilt == text
        for c in chunks:
            assert doc.text[c.char_span[0] : c.char_span[1]] == c.text


class TestSchemaDescription:
    def test_default_schema_three_lines(self, default_schema):
        desc = schema_description(default_schema)
        lines = desc.splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("ticker_symbol")
        assert lines[1].startswith("fiscal_year")
        assert "(year)" in lines[1]

    def test_empty_schema_empty_string(self):
        assert schema_description(MetadataSchema(fields=())) == ""

    def test_deterministic(self, default_schema):
        assert schema_description(default_schema) == schema_description(default_schema)


class TestSchemaValidation:
    def test_duplicate_field_names(self):
        with pytest.raises(CorpusError):
            MetadataSchema(
                fields=(
                    MetadataField("a", "", "categorical"),
                    MetadataField("a", "", "categorical"),
                )
            )

    def test_unknown_kind(self):
        with pytest.raises(CorpusError):
            MetadataSchema(fields=(MetadataField("a", "", "float"),))
