import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scripted_gateway
from docanalyst.corpus import MetadataSchema
from docanalyst.errors import PlanningError, PlanParseError
from docanalyst.planner import (
    Plan,
    SubQueryTemplate,
    fill_template,
    parse_plan,
    plan,
    satisfy_restriction,
    serialize_plan,
)

SCHEMA = MetadataSchema.default()

PLAN_REPLY = json.dumps(
    [
        {
            "subtask": "What was {ticker_symbol}'s total operating cost in fiscal year {fiscal_year}?",
            "restriction": {"fiscal_year": ["2021"]},
        }
    ]
)


class TestPlan:
    def test_parses_single_template_with_restriction(self):
        gw = scripted_gateway([("templates", PLAN_REPLY)])
        result = plan("What are the templates?", SCHEMA, gw)
        assert len(result.templates) == 1
        assert result.templates[0].restriction == {"fiscal_year": ["2021"]}
        assert result.question == "What are the templates?"

    def test_unparseable_reply_raises_after_retries(self):
        gw = scripted_gateway([], fallback="not json at all")
        with pytest.raises(PlanningError) as exc_info:
            plan("q", SCHEMA, gw, repair_retries=1)
        assert exc_info.value.raw_reply == "not json at all"

    def test_restriction_optional_per_template(self):
        reply = json.dumps(
            [
                {"subtask": "Cost of {ticker_symbol} in {fiscal_year}?", "restriction": {"fiscal_year": ["2021"]}},
                {"subtask": "Auditor of {ticker_symbol} per the {document_type}?"},
            ]
        )
        gw = scripted_gateway([("q", reply)])
        result = plan("q", SCHEMA, gw)
        assert result.templates[0].restriction is not None
        assert result.templates[1].restriction is None

    def test_repair_retry_recovers(self):
        from conftest import QueueProvider
        from docanalyst.gateway import Gateway

        provider = QueueProvider(["garbage", PLAN_REPLY])
        result = plan("q", SCHEMA, Gateway(provider), repair_retries=2)
        assert len(result.templates) == 1
        assert provider.calls == 2

    def test_empty_question_rejected(self):
        with pytest.raises(PlanningError):
            plan("  ", SCHEMA, scripted_gateway([]))


class TestParsePlan:
    def test_code_fenced_list(self):
        raw = "Here is the plan:\n```json\n" + PLAN_REPLY + "\n```\nDone."
        result = parse_plan(raw, SCHEMA)
        assert len(result.templates) == 1

    def test_unknown_placeholder(self):
        raw = json.dumps([{"subtask": "cost in {yearr}"}])
        with pytest.raises(PlanParseError, match="unknown placeholder 'yearr'"):
            parse_plan(raw, SCHEMA)

    def test_unknown_restriction_field(self):
        raw = json.dumps(
            [{"subtask": "cost of {ticker_symbol}", "restriction": {"publication_year": ["2021"]}}]
        )
        with pytest.raises(PlanParseError, match="unknown restriction field"):
            parse_plan(raw, SCHEMA)

    def test_duplicate_subtasks_dedupe_first_wins(self, caplog):
        raw = json.dumps(
            [
                {"subtask": "same {ticker_symbol}", "restriction": {"fiscal_year": ["2021"]}},
                {"subtask": "same {ticker_symbol}"},
            ]
        )
        with caplog.at_level("WARNING"):
            result = parse_plan(raw, SCHEMA)
        assert len(result.templates) == 1
        assert result.templates[0].restriction == {"fiscal_year": ["2021"]}
        assert any("duplicate subtask" in r.message for r in caplog.records)

    def test_missing_field_coverage_warns_but_passes(self, caplog):
        raw = json.dumps([{"subtask": "fixed question, no placeholders"}])
        with caplog.at_level("WARNING"):
            result = parse_plan(raw, SCHEMA)
        assert len(result.templates) == 1
        assert any("appear in no template" in r.message for r in caplog.records)


class TestSatisfyRestriction:
    def test_member_of_allowed_list(self):
        t = SubQueryTemplate("q", {"fiscal_year": ["2021", "2022"]})
        assert satisfy_restriction({"fiscal_year": "2021"}, t) is True

    def test_not_member(self):
        t = SubQueryTemplate("q", {"fiscal_year": ["2021", "2022"]})
        assert satisfy_restriction({"fiscal_year": "2023"}, t) is False

    def test_no_restriction_vacuously_true(self):
        t = SubQueryTemplate("q", None)
        assert satisfy_restriction({"fiscal_year": "1999"}, t) is True


class TestFillTemplate:
    def test_substitution(self):
        t = SubQueryTemplate("cost of {ticker_symbol} in {fiscal_year}")
        iq = fill_template(t, {"ticker_symbol": "ACME", "fiscal_year": "2021"}, doc_id="d", template_index=2)
        assert iq.query_text == "cost of ACME in 2021"
        assert iq.template_index == 2

    def test_no_placeholders_identity(self):
        t = SubQueryTemplate("a fixed question")
        iq = fill_template(t, {"ticker_symbol": "ACME"})
        assert iq.query_text == "a fixed question"

    def test_missing_metadata_field(self):
        t = SubQueryTemplate("cost of {ticker_symbol}")
        with pytest.raises(PlanningError, match="missing from metadata"):
            fill_template(t, {"fiscal_year": "2021"})


_word = st.text(alphabet="abcdefgh", min_size=1, max_size=6)


@st.composite
def _plans(draw):
    n = draw(st.integers(min_value=1, max_value=4))
    templates = []
    seen = set()
    for i in range(n):
        subtask = f"ask about {draw(_word)} {i} for {{ticker_symbol}}"
        if subtask in seen:
            continue
        seen.add(subtask)
        restriction = None
        if draw(st.booleans()):
            restriction = {"fiscal_year": draw(st.lists(st.sampled_from(["2020", "2021"]), min_size=1, max_size=2, unique=True))}
        templates.append(SubQueryTemplate(subtask, restriction))
    return Plan(question="q", templates=templates)


@settings(max_examples=50, deadline=None)
@given(_plans())
def test_parse_serialize_round_trip(p):
    parsed = parse_plan(serialize_plan(p), SCHEMA, question=p.question)
    assert parsed == p


def test_fill_template_injective_for_word_values():
    t = SubQueryTemplate("{ticker_symbol} in {fiscal_year} via {document_type}")
    seen = {}
    for ticker in ("AAA", "BBB"):
        for year in ("2021", "2022"):
            meta = {"ticker_symbol": ticker, "fiscal_year": year, "document_type": "esg"}
            text = fill_template(t, meta).query_text
            assert text not in seen
            seen[text] = meta
