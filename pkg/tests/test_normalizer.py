import pytest

from conftest import QueueProvider, scripted_gateway
from docanalyst.errors import ConfigError, NormalizationError
from docanalyst.extractor import ExtractionPair
from docanalyst.gateway import Gateway
from docanalyst.normalizer import (
    NormalizeConfig,
    RecordSchema,
    canonical_value,
    define_schema,
    normalize_all,
    normalize_batch,
    parse_tagged,
)
from docanalyst.planner import InstantiatedQuery
from docanalyst.reference import ReferenceNormalizerProvider


def _pair(doc_id="d1", idx=0, question="What was ACME's total cost in fiscal year 2021?",
          answer="ACME's total cost in fiscal year 2021 was 42.00.", ticker="ACME", year="2021"):
    return ExtractionPair(
        metadata={"ticker_symbol": ticker, "fiscal_year": year, "document_type": "annual_report"},
        query=InstantiatedQuery(doc_id=doc_id, template_index=idx, query_text=question),
        answer=answer,
    )


SCHEMA_REPLY = (
    '<des>per-company cost</des>'
    '<json>[{"ticker": "ACME", "fiscal_year": "2021", "total_cost": 42.0}]</json>'
)


class TestParseTagged:
    def test_extracts_content(self):
        assert parse_tagged("x <json>[1]</json> y", "json") == "[1]"

    def test_greedy_first_open_to_last_close(self):
        raw = "<json>[1]</json> mid <json>[2]</json>"
        assert parse_tagged(raw, "json") == "[1]</json> mid <json>[2]"

    def test_absent_tag_raises(self):
        with pytest.raises(NormalizationError, match="absent"):
            parse_tagged("no tags here", "json")


class TestDefineSchema:
    def test_parses_schema_and_records(self):
        gw = scripted_gateway([("Transcript", SCHEMA_REPLY)])
        schema, records = define_schema([_pair()], "the question", gw)
        assert schema.field_names == ("ticker", "fiscal_year", "total_cost")
        assert schema.description == "per-company cost"
        assert records == [{"ticker": "ACME", "fiscal_year": 2021, "total_cost": 42.0}]

    def test_nested_value_rejected(self):
        reply = '<des>d</des><json>[{"a": {"nested": 1}}]</json>'
        gw = scripted_gateway([], fallback=reply)
        with pytest.raises(NormalizationError, match="nested structure"):
            define_schema([_pair()], "q", gw, repair_retries=0)

    def test_missing_des_retries_then_fails(self):
        provider = QueueProvider(['<json>[{"a": 1}]</json>'])
        with pytest.raises(NormalizationError):
            define_schema([_pair()], "q", Gateway(provider), repair_retries=2)
        assert provider.calls == 3  # initial + 2 repairs

    def test_repair_retry_recovers(self):
        provider = QueueProvider(["garbage", SCHEMA_REPLY])
        schema, records = define_schema([_pair()], "q", Gateway(provider), repair_retries=1)
        assert schema.field_names == ("ticker", "fiscal_year", "total_cost")

    def test_empty_sample_rejected(self):
        with pytest.raises(NormalizationError):
            define_schema([], "q", scripted_gateway([]))


class TestNormalizeBatch:
    SCHEMA = RecordSchema(description="d", field_names=("ticker", "fiscal_year", "total_cost"))

    def test_conforming_records_pass_through(self):
        reply = '<json>[{"ticker": "A", "fiscal_year": "2021", "total_cost": 1.0}, {"ticker": "B", "fiscal_year": "2021", "total_cost": 2.0}]</json>'
        gw = scripted_gateway([], fallback=reply)
        records = normalize_batch([_pair(), _pair("d2")], self.SCHEMA, [], gw)
        assert len(records) == 2
        assert records[0] == {"ticker": "A", "fiscal_year": 2021, "total_cost": 1.0}

    def test_unknown_key_dropped_with_warning(self, caplog):
        reply = '<json>[{"ticker": "A", "fiscal_year": "2021", "total_cost": 1.0, "note": "x"}]</json>'
        gw = scripted_gateway([], fallback=reply)
        with caplog.at_level("WARNING"):
            records = normalize_batch([_pair()], self.SCHEMA, [], gw)
        assert "note" not in records[0]
        assert any("unknown record keys" in r.message for r in caplog.records)

    def test_missing_key_filled_with_null(self):
        reply = '<json>[{"ticker": "A", "fiscal_year": "2021"}]</json>'
        gw = scripted_gateway([], fallback=reply)
        records = normalize_batch([_pair()], self.SCHEMA, [], gw)
        assert records[0]["total_cost"] is None

    def test_unparseable_batch_fails_after_retries(self):
        gw = scripted_gateway([], fallback="no tags")
        with pytest.raises(NormalizationError):
            normalize_batch([_pair()], self.SCHEMA, [], gw, repair_retries=1)


class TestCanonicalValue:
    def test_numeric_strings_become_numbers(self):
        assert canonical_value("42.00") == 42.0
        assert canonical_value("2021") == 2021
        assert canonical_value("-3.5") == -3.5

    def test_non_numeric_strings_stay(self):
        assert canonical_value("2023-05-10") == "2023-05-10"
        assert canonical_value("ALDER LLP") == "ALDER LLP"

    def test_native_types_pass_through(self):
        assert canonical_value(7) == 7
        assert canonical_value(None) is None
        assert canonical_value(True) is True

    def test_nested_rejected(self):
        with pytest.raises(NormalizationError):
            canonical_value({"a": 1})


class CountingNormalizer(ReferenceNormalizerProvider):
    def __init__(self):
        self.calls = 0

    def send(self, request):
        self.calls += 1
        return super().send(request)


def _oracle_pairs(n, metric="total operating cost"):
    pairs = []
    for i in range(n):
        ticker = f"TK{i:02d}"
        pairs.append(
            _pair(
                doc_id=f"{ticker}_2021",
                question=f"What was {ticker}'s {metric} in fiscal year 2021?",
                answer=f"{ticker}'s {metric} in fiscal year 2021 was {100 + i}.25.",
                ticker=ticker,
            )
        )
    return pairs


class TestNormalizeAll:
    def test_batch_count_is_ceiling(self):
        provider = CountingNormalizer()
        pairs = _oracle_pairs(10)
        rs = normalize_all(pairs, "q", NormalizeConfig(batch_size=4, sample_size=2), Gateway(provider))
        # 1 schema call + ceil(10/4) = 3 batches
        assert provider.calls == 4
        assert len(rs.records) == 10
        assert rs.provenance[0] == [("TK00_2021", 0)]

    def test_single_batch_when_b_large(self):
        provider = CountingNormalizer()
        rs = normalize_all(_oracle_pairs(4), "q", NormalizeConfig(batch_size=10, sample_size=2), Gateway(provider))
        assert provider.calls == 2  # schema + 1 batch
        assert len(rs.records) == 4

    def test_failed_batch_drops_exact_pairs(self):
        class FlakyNormalizer(ReferenceNormalizerProvider):
            def __init__(self):
                self.calls = 0

            def send(self, request):
                self.calls += 1
                if self.calls == 3:  # second batch (after schema + batch1)
                    return "garbage with no tags"
                return super().send(request)

        pairs = _oracle_pairs(9)
        cfg = NormalizeConfig(batch_size=3, sample_size=2, repair_retries=0)
        rs = normalize_all(pairs, "q", cfg, Gateway(FlakyNormalizer()))
        assert len(rs.records) == 6
        dropped_docs = {doc for doc, _ in rs.dropped}
        assert dropped_docs == {"TK03_2021", "TK04_2021", "TK05_2021"}
        assert rs.warnings

    def test_schema_failure_is_fatal(self):
        gw = scripted_gateway([], fallback="no tags at all")
        with pytest.raises(NormalizationError):
            normalize_all(_oracle_pairs(3), "q", NormalizeConfig(repair_retries=0), gw)

    def test_records_are_flat(self):
        rs = normalize_all(_oracle_pairs(6), "q", NormalizeConfig(batch_size=3, sample_size=2), Gateway(ReferenceNormalizerProvider()))
        for record in rs.records:
            for value in record.values():
                assert not isinstance(value, (dict, list, tuple))

    def test_batch_invariance_across_batch_sizes(self):
        pairs = _oracle_pairs(11)
        results = []
        for b in (1, 4, 100):
            cfg = NormalizeConfig(batch_size=b, sample_size=min(1, b))
            rs = normalize_all(pairs, "q", cfg, Gateway(ReferenceNormalizerProvider()))
            results.append(rs.records)
        assert results[0] == results[1] == results[2]

    def test_schema_never_widens_after_definition(self):
        # second batch introduces a field unknown to the schema: dropped
        pairs = _oracle_pairs(4) + [
            _pair(
                doc_id="TK99_2021",
                question="What was TK99's net income in fiscal year 2021?",
                answer="TK99's net income in fiscal year 2021 was 5.00.",
                ticker="TK99",
            )
        ]
        cfg = NormalizeConfig(batch_size=4, sample_size=2)
        rs = normalize_all(pairs, "q", cfg, Gateway(ReferenceNormalizerProvider()))
        assert "net_income" not in rs.schema.field_names
        assert all("net_income" not in r for r in rs.records)

    def test_sample_size_capped_by_batch_size(self):
        with pytest.raises(ConfigError):
            NormalizeConfig(batch_size=2, sample_size=5)

    def test_merged_records_get_coarse_provenance(self):
        # an agent merging a 3-pair batch into 1 record attributes the record
        # to every pair of the batch, with a warning
        class MergingNormalizer(ReferenceNormalizerProvider):
            def send(self, request):
                if "<exemplar>" in request.user_prompt:
                    return '<json>[{"ticker_symbol": "TK00", "fiscal_year": "2021"}]</json>'
                return super().send(request)

        pairs = _oracle_pairs(3)
        cfg = NormalizeConfig(batch_size=3, sample_size=2)
        rs = normalize_all(pairs, "q", cfg, Gateway(MergingNormalizer()))
        assert len(rs.records) == 1
        assert rs.provenance[0] == [(p.query.doc_id, p.query.template_index) for p in pairs]
        assert any("coarse provenance" in w for w in rs.warnings)
