"""Deterministic stand-ins for every model role.

These providers make the full pipeline verifiable offline:

* OracleReaderProvider answers sub-queries from document fact sidecars.
* ReferenceNormalizerProvider converts transcripts into flat records by
  parsing the canonical fact-sentence grammar.
* ReferenceSynthesizerProvider echoes the analysis stdout as the answer.
* RuleJudgeProvider implements the judging rules (entity containment plus
  the integer-digits/first-decimal numeric rule) as code.

The module also builds scripted fixtures (plans and analysis programs) for
benchmark instances, keyed on their question text.
"""

from __future__ import annotations

import json
import re

from .corpus import Corpus
from .errors import GenerationError, OracleError
from .extractor import NO_ANSWER, tokenize
from .gateway import ChatRequest
from .normalizer import parse_tagged
from .textmatch import supports, value_supported

# Canonical single-metric fact sentence; the generator renders it and this
# module parses it back.
FACT_SENTENCE = "{ticker}'s {label} in fiscal year {year} was {value}."
_FACT_RE = re.compile(
    r"^(?P<ticker>[A-Z0-9.]+)'s (?P<label>[a-z][a-z &\-]*?) in fiscal year "
    r"(?P<year>\w+) was (?P<value>.+?)\.$"
)

RECORDS_DESCRIPTION = (
    "Flat records keyed by ticker_symbol and fiscal_year, one field per "
    "extracted metric; unknown values are null."
)


def metric_label(metric: str) -> str:
    return metric.replace("_", " ")


def fact_sentence(ticker: str, metric: str, year: str, value) -> str:
    return FACT_SENTENCE.format(
        ticker=ticker, label=metric_label(metric), year=year, value=render_value(value)
    )


def merged_fact_sentence(ticker: str, metric: str, y1: str, v1, y2: str, v2) -> str:
    label = metric_label(metric)
    return (
        f"{ticker}'s {label} in fiscal year {y1} was {render_value(v1)} "
        f"and in fiscal year {y2} was {render_value(v2)}."
    )


def render_value(value) -> str:
    if isinstance(value, bool):  # bool is an int; keep it out of the .2f path
        return str(value)
    if isinstance(value, (int, float)):
        return f"{float(value):.2f}"
    return str(value)


class OracleReaderProvider:
    """Answers reader prompts from the queried document's fact sidecar.

    A sidecar metric matches a query iff all of the metric name's words
    appear (case-folded) in the query text; two or more matches are an
    oracle error, zero matches yield the not-found sentinel.
    """

    BASELINE_REPLY = (
        "No offline oracle exists for corpus-wide questions; retrieved excerpts "
        "were recorded for process judging."
    )

    def __init__(self, corpus: Corpus):
        self.provider_id = "oracle-reader"
        self._docs = {doc.doc_id: doc for doc in corpus.documents}

    def send(self, request: ChatRequest) -> str:
        if "<doc_id>" not in request.user_prompt:
            # flat-RAG baseline prompt: no single document to consult
            return self.BASELINE_REPLY
        doc_id = parse_tagged(request.user_prompt, "doc_id")
        query = parse_tagged(request.user_prompt, "query")
        doc = self._docs.get(doc_id)
        if doc is None:
            raise OracleError(f"oracle reader knows no document {doc_id!r}")
        sidecar = doc.fact_sidecar
        if not sidecar:
            raise OracleError(f"document {doc_id!r} has no fact sidecar")
        qtokens = set(tokenize(query))
        matches = [m for m in sidecar if set(m.split("_")) <= qtokens]
        if len(matches) > 1:
            raise OracleError(f"ambiguous oracle match {sorted(matches)} for query {query!r}")
        if not matches:
            return NO_ANSWER
        return sidecar[matches[0]].statement


class ReferenceNormalizerProvider:
    """Parses the transcript JSON from norm prompts into flat records.

    One record per pair: ticker_symbol and fiscal_year from the pair's
    metadata plus one field per fact parsed from the canonical sentence.
    """

    provider_id = "reference-normalizer"

    def send(self, request: ChatRequest) -> str:
        entries = json.loads(parse_tagged(request.user_prompt, "transcript"))
        records = [self._to_record(entry) for entry in entries]
        body = json.dumps(records, ensure_ascii=False)
        if "<exemplar>" in request.user_prompt:
            return f"<json>{body}</json>"
        return f"<des>{RECORDS_DESCRIPTION}</des>\n<json>{body}</json>"

    @staticmethod
    def _to_record(entry: dict) -> dict:
        metadata = entry.get("metadata", {})
        record = {
            "ticker_symbol": metadata.get("ticker_symbol"),
            "fiscal_year": metadata.get("fiscal_year"),
        }
        answer = str(entry.get("answer", "")).strip()
        match = _FACT_RE.match(answer)
        if match:
            record[match["label"].replace(" ", "_")] = match["value"]
        return record


class ReferenceSynthesizerProvider:
    """Final answer = the analysis program's stdout (or an explicit caveat)."""

    provider_id = "reference-synthesizer"

    def send(self, request: ChatRequest) -> str:
        stdout = parse_tagged(request.user_prompt, "stdout").strip()
        if stdout:
            return stdout
        return "The analysis produced no usable output, so no reliable answer is available."


class RuleJudgeProvider:
    """Judging rules as code: entity containment + first-decimal numeric rule."""

    provider_id = "rule-judge"

    def send(self, request: ChatRequest) -> str:
        prompt = request.user_prompt
        if '"correct_metric_fields"' in prompt:
            return self._judge_cells(prompt)
        if '"is_correct"' in prompt:
            return self._judge_final(prompt)
        if '"correct_extractions"' in prompt:
            return self._judge_coverage(prompt, error_side=False)
        if '"error_extractions"' in prompt:
            return self._judge_coverage(prompt, error_side=True)
        raise OracleError("rule judge received an unrecognized prompt")

    @staticmethod
    def _judge_final(prompt: str) -> str:
        reference = parse_tagged(prompt, "reference")
        model_answer = parse_tagged(prompt, "model_answer")
        ok = supports(model_answer, reference)
        return json.dumps({"is_correct": ok, "explanation": "deterministic rule check"})

    @staticmethod
    def _judge_coverage(prompt: str, error_side: bool) -> str:
        facts = json.loads(parse_tagged(prompt, "facts"))
        info = parse_tagged(prompt, "info")
        supported = sum(1 for fact in facts if supports(info, fact))
        if error_side:
            payload = {"error_extractions": len(facts) - supported, "total_required": len(facts)}
        else:
            payload = {"correct_extractions": supported, "total_required": len(facts)}
        payload["explanation"] = "deterministic rule check"
        return json.dumps(payload)

    @staticmethod
    def _judge_cells(prompt: str) -> str:
        columns = json.loads(parse_tagged(prompt, "metric_columns"))
        transcript = parse_tagged(prompt, "transcript")
        correct = [
            col["field"] for col in columns if value_supported(transcript, str(col["value"]))
        ]
        return json.dumps({"correct_metric_fields": correct})


# ---------------------------------------------------------------------------
# Scripted fixtures for benchmark instances


def build_reference_plan(params: dict) -> str:
    """Plan reply JSON for one instance: one template per required metric."""
    templates = []
    for metric in params["metrics"]:
        templates.append(
            {
                "subtask": (
                    "According to the {document_type} of {ticker_symbol} for fiscal year "
                    "{fiscal_year}, what was its " + metric_label(metric) + "?"
                ),
                "restriction": {
                    "fiscal_year": list(params["years"]),
                    "document_type": [params["document_type"]],
                },
            }
        )
    return json.dumps(templates, ensure_ascii=False, indent=2)


_PROGRAM_HEADER = """\
import json
import os
import sys
from datetime import date

path = os.environ.get("MUDA_DATA_PATH") or sys.argv[1]
with open(path, encoding="utf-8") as fh:
    rows = json.load(fh)

merged = {}
for row in rows:
    key = (str(row.get("ticker_symbol")), str(row.get("fiscal_year")))
    slot = merged.setdefault(key, {})
    for name, value in row.items():
        if value is not None:
            slot[name] = value
"""

_PROGRAM_BODIES = {
    "top_k_by_metric": """\
values = {t: s[METRIC] for (t, y), s in merged.items() if y == YEAR and METRIC in s}
top = sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))[:K]
listing = ", ".join("%s (%.2f)" % (t, v) for t, v in top)
print("Top %d companies by %s in fiscal year %s: %s" % (K, LABEL, YEAR, listing))
""",
    "range": """\
ordered = sorted((t, s[METRIC]) for (t, y), s in merged.items() if y == YEAR and METRIC in s)
values = [v for _, v in ordered]
span = max(values) - min(values)
print("The maximum %s in fiscal year %s was %.2f, the minimum was %.2f, and the range was %.2f."
      % (LABEL, YEAR, max(values), min(values), span))
""",
    "variance": """\
ordered = sorted((t, s[METRIC]) for (t, y), s in merged.items() if y == YEAR and METRIC in s)
values = [v for _, v in ordered]
mean = sum(values) / len(values)
variance = sum((x - mean) ** 2 for x in values) / len(values)
print("The variance of %s across companies in fiscal year %s was %.2f." % (LABEL, YEAR, variance))
""",
    "growth_rate_top_k": """\
first = {t: s[METRIC] for (t, y), s in merged.items() if y == Y1 and METRIC in s}
second = {t: s[METRIC] for (t, y), s in merged.items() if y == Y2 and METRIC in s}
rates = {t: (second[t] - first[t]) / first[t] * 100.0 for t in sorted(set(first) & set(second))}
top = sorted(rates.items(), key=lambda kv: (-kv[1], kv[0]))[:K]
listing = ", ".join("%s (%.2f%%)" % (t, r) for t, r in top)
print("Highest %s growth from fiscal year %s to %s: %s" % (LABEL, Y1, Y2, listing))
""",
    "change_detection": """\
first = {t: str(s[METRIC]).strip() for (t, y), s in merged.items() if y == Y1 and METRIC in s}
second = {t: str(s[METRIC]).strip() for (t, y), s in merged.items() if y == Y2 and METRIC in s}
changed = sorted(t for t in set(first) & set(second) if first[t] != second[t])
print("Companies that changed %s from fiscal year %s to %s: %s" % (LABEL, Y1, Y2, ", ".join(changed)))
""",
    "interval_days": """\
regs = {t: s["share_registration_date"] for (t, y), s in merged.items() if y == YEAR and "share_registration_date" in s}
exds = {t: s["ex_dividend_date"] for (t, y), s in merged.items() if y == YEAR and "ex_dividend_date" in s}
spans = {t: (date.fromisoformat(exds[t]) - date.fromisoformat(regs[t])).days
         for t in sorted(set(regs) & set(exds))}
shortest = sorted(spans.items(), key=lambda kv: (kv[1], kv[0]))[:K]
listing = ", ".join("%s (%d days)" % (t, d) for t, d in shortest)
print("Shortest registration-to-ex-dividend intervals in fiscal year %s: %s" % (YEAR, listing))
""",
    "outlier_2sigma": """\
first = {t: s[METRIC] for (t, y), s in merged.items() if y == Y1 and METRIC in s}
second = {t: s[METRIC] for (t, y), s in merged.items() if y == Y2 and METRIC in s}
rates = {t: (second[t] - first[t]) / first[t] * 100.0 for t in sorted(set(first) & set(second))}
values = [rates[t] for t in sorted(rates)]
mean = sum(values) / len(values)
sigma = (sum((x - mean) ** 2 for x in values) / len(values)) ** 0.5
outliers = sorted(t for t, r in rates.items() if r < mean - 2.0 * sigma or r > mean + 2.0 * sigma)
print("Outlier companies for %s change rate from fiscal year %s to %s: %s" % (LABEL, Y1, Y2, ", ".join(outliers)))
""",
}


def build_reference_program(oracle: str, params: dict) -> str:
    """Analysis program source computing the instance's answer from records."""
    body = _PROGRAM_BODIES.get(oracle)
    if body is None:
        raise GenerationError(f"no reference program for oracle {oracle!r}")
    years = list(params["years"])
    metric = params.get("metric")
    label = metric_label(metric) if metric else ""
    assignments = [
        f"METRIC = {metric!r}",
        f"LABEL = {label!r}",
        f"K = {int(params.get('k', 1))}",
    ]
    if len(years) == 1:
        assignments.append(f"YEAR = {years[0]!r}")
    else:
        assignments.append(f"Y1 = {years[0]!r}")
        assignments.append(f"Y2 = {years[1]!r}")
    return _PROGRAM_HEADER + "\n" + "\n".join(assignments) + "\n\n" + body


def build_fixtures(instances) -> tuple[list[dict], list[dict]]:
    """Scripted-provider fixture entries (plan and code roles) per instance."""
    plan_fixtures = []
    code_fixtures = []
    for instance in instances:
        plan_fixtures.append(
            {"match": instance.question, "reply": build_reference_plan(instance.params)}
        )
        program = build_reference_program(instance.oracle, instance.params)
        code_fixtures.append(
            {"match": instance.question, "reply": f"<execute>\n{program}\n</execute>"}
        )
    return plan_fixtures, code_fixtures
