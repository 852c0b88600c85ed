"""Distant-supervision benchmark construction.

A master table of per-document structured indicators is rendered into
synthetic documents (one canonical fact sentence per metric, embedded
verbatim, plus seeded filler prose and a machine-readable fact sidecar).
Question templates instantiate against row selections: the gold answer is
computed exhaustively by the named oracle, gold facts are the rendered
sentences (merged per company pair for cross-year questions), and aligned
rows carry the metric cells for cell-wise judging.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

from . import oracles
from .corpus import Corpus, DocumentRecord, MetadataSchema, SidecarFact, save_manifest
from .errors import GenerationError
from .evaluator import AlignedRow, BenchmarkInstance
from .extractor import RetrievalConfig, answer_subquery
from .gateway import Gateway
from .planner import InstantiatedQuery
from .reference import (
    FACT_SENTENCE,
    build_fixtures,
    fact_sentence,
    merged_fact_sentence,
    metric_label,
    render_value,
)
from .textmatch import value_supported

logger = logging.getLogger(__name__)

ANNUAL_TYPE = "annual_report"
DIVIDEND_TYPE = "dividend_announcement"

ANNUAL_NUMERIC_METRICS = (
    "revenue",
    "total_operating_cost",
    "net_income",
    "total_assets",
    "capital_adequacy_ratio",
)
AUDITOR_METRIC = "auditor"
DIVIDEND_METRICS = ("dividend_per_share", "share_registration_date", "ex_dividend_date")

AUDITOR_POOL = ("ALDER LLP", "BRIGHT LLP", "CASTLE LLP", "DELTA LLP", "EVERGREEN LLP")

# Filler vocabulary is disjoint from every metric name so lexical retrieval
# and the oracle matcher never hit it.
_FILLER_SUBJECTS = ("The harbor", "A quiet orchard", "The northern trail", "A small museum", "The old lighthouse")
_FILLER_VERBS = ("welcomed", "overlooked", "sheltered", "inspired", "bordered")
_FILLER_OBJECTS = ("morning visitors", "a field of lavender", "three wooden boats", "an autumn festival", "the winding river")


@dataclass
class TableRow:
    metadata: dict[str, str]
    metrics: dict[str, float | str]

    @property
    def key(self) -> tuple[str, str, str]:
        return (
            self.metadata["ticker_symbol"],
            self.metadata["fiscal_year"],
            self.metadata["document_type"],
        )

    @property
    def doc_id(self) -> str:
        return "_".join(self.key)


@dataclass
class MasterTable:
    rows: list[TableRow]

    def __post_init__(self):
        keys = [row.key for row in self.rows]
        if len(set(keys)) != len(keys):
            raise GenerationError("metadata collision: duplicate (ticker, year, type) rows")

    def select(
        self,
        document_type: str,
        fiscal_years: tuple[str, ...],
        tickers: tuple[str, ...] | None = None,
    ) -> list[TableRow]:
        rows = [
            row
            for row in self.rows
            if row.metadata["document_type"] == document_type
            and row.metadata["fiscal_year"] in fiscal_years
            and (tickers is None or row.metadata["ticker_symbol"] in tickers)
        ]
        return sorted(rows, key=lambda r: (r.metadata["ticker_symbol"], r.metadata["fiscal_year"]))


@dataclass(frozen=True)
class DocSelection:
    document_type: str
    fiscal_years: tuple[str, ...]
    tickers: tuple[str, ...] | None = None


@dataclass(frozen=True)
class QuestionTemplate:
    """A concrete question family instance: the oracle fully determines gold."""

    id: str
    text_template: str
    tier: str
    required_metrics: tuple[str, ...]
    answer_oracle: str
    oracle_params: dict
    fact_statement_template: str = ""
    cross_year: bool = False


TEMPLATE_TEXTS = {
    "top_k_by_metric": (
        "Which {k} companies had the highest {label} in fiscal year {year}? "
        "List their ticker symbols."
    ),
    "range": (
        "What were the maximum, minimum, and range of {label} across companies "
        "in fiscal year {year}?"
    ),
    "variance": "What was the variance of {label} across companies in fiscal year {year}?",
    "growth_rate_top_k": (
        "Which {k} companies had the highest {label} growth rate from fiscal year {y1} "
        "to fiscal year {y2}? List their ticker symbols and growth rates."
    ),
    "change_detection": (
        "Which companies changed their {label} between fiscal year {y1} and fiscal year {y2}? "
        "List their ticker symbols."
    ),
    "interval_days": (
        "Which {k} companies had the shortest interval between their share registration date "
        "and ex-dividend date in fiscal year {year}? List their ticker symbols and the "
        "interval in days."
    ),
    "outlier_2sigma": (
        "Which companies' {label} change rate from fiscal year {y1} to fiscal year {y2} fell "
        "outside the mean plus or minus two standard deviations across companies? "
        "List their ticker symbols."
    ),
}

TEMPLATE_TIERS = {
    "top_k_by_metric": "simple",
    "range": "simple",
    "variance": "simple",
    "growth_rate_top_k": "complex",
    "change_detection": "complex",
    "interval_days": "complex",
    "outlier_2sigma": "complex",
}

CROSS_YEAR_FAMILIES = ("growth_rate_top_k", "change_detection", "outlier_2sigma")


def make_template(family: str, metric: str | None = None, k: int = 3) -> QuestionTemplate:
    if family not in TEMPLATE_TEXTS:
        raise GenerationError(f"unknown question family {family!r}")
    if family == "interval_days":
        required: tuple[str, ...] = ("share_registration_date", "ex_dividend_date")
    elif family == "change_detection":
        required = (metric or AUDITOR_METRIC,)
    else:
        if metric is None:
            raise GenerationError(f"family {family!r} needs a metric")
        required = (metric,)
    params: dict = {"k": k, "tie_rule": "ticker_symbol_lexicographic"}
    if metric is not None:
        params["metric"] = metric
    elif family == "change_detection":
        params["metric"] = AUDITOR_METRIC
    return QuestionTemplate(
        id=family,
        text_template=TEMPLATE_TEXTS[family],
        tier=TEMPLATE_TIERS[family],
        required_metrics=required,
        answer_oracle=family,
        oracle_params=params,
        fact_statement_template=FACT_SENTENCE,
        cross_year=family in CROSS_YEAR_FAMILIES,
    )


# ---------------------------------------------------------------------------
# master table generation


def _make_tickers(count: int, rng: random.Random) -> list[str]:
    consonants = "BCDFGKLMNPRSTVZ"
    vowels = "AEIOU"
    tickers: list[str] = []
    seen = set()
    while len(tickers) < count:
        name = "".join(
            rng.choice(consonants) + rng.choice(vowels) for _ in range(rng.choice((2, 3)))
        )
        if name not in seen:
            seen.add(name)
            tickers.append(name)
    return tickers


def generate_master_table(
    companies: int, years: tuple[str, ...], seed: int
) -> MasterTable:
    """Synthetic indicators: one annual-report and one dividend row per company-year.

    Company 0 is deliberately volatile (large year-over-year jumps) so
    outlier questions always have a detectable answer; one company changes
    auditor at each year boundary so change questions are never empty.
    """
    if companies < 4 or len(years) < 2:
        raise GenerationError("need at least 4 companies and 2 years")
    rng = random.Random(seed)
    tickers = _make_tickers(companies, rng)
    rows: list[TableRow] = []
    for idx, ticker in enumerate(tickers):
        base = {
            "revenue": rng.uniform(500.0, 5000.0),
            "total_operating_cost": rng.uniform(300.0, 3000.0),
            "net_income": rng.uniform(40.0, 900.0),
            "total_assets": rng.uniform(1000.0, 20000.0),
            "capital_adequacy_ratio": rng.uniform(8.0, 16.0),
        }
        dividend = rng.uniform(0.2, 4.0)
        auditor = AUDITOR_POOL[idx % len(AUDITOR_POOL)]
        for y_idx, year in enumerate(years):
            if y_idx > 0:
                factor = rng.uniform(1.9, 2.2) if idx == 0 else rng.uniform(0.96, 1.08)
                for name in base:
                    base[name] *= factor
                dividend *= rng.uniform(0.9, 1.15)
            # one auditor change per year boundary: company idx switches at year idx
            current_auditor = auditor
            if 0 < idx < len(years) and y_idx >= idx:
                current_auditor = AUDITOR_POOL[(idx + 2) % len(AUDITOR_POOL)]
            annual_metrics: dict[str, float | str] = {
                name: round(value, 2) for name, value in base.items()
            }
            annual_metrics[AUDITOR_METRIC] = current_auditor
            rows.append(
                TableRow(
                    metadata={
                        "ticker_symbol": ticker,
                        "fiscal_year": year,
                        "document_type": ANNUAL_TYPE,
                    },
                    metrics=annual_metrics,
                )
            )
            reg_day = 2 + (idx * 2 + y_idx * 3) % 24
            span_days = 1 + (idx * 7 + y_idx * 3) % 25
            reg = date(int(year), 6, reg_day)
            rows.append(
                TableRow(
                    metadata={
                        "ticker_symbol": ticker,
                        "fiscal_year": year,
                        "document_type": DIVIDEND_TYPE,
                    },
                    metrics={
                        "dividend_per_share": round(dividend, 2),
                        "share_registration_date": reg.isoformat(),
                        "ex_dividend_date": (reg + timedelta(days=span_days)).isoformat(),
                    },
                )
            )
    return MasterTable(rows=rows)


def save_master_table(table: MasterTable, path: str | Path) -> None:
    """CSV wire format: metadata columns then the union of metric columns."""
    metric_names: list[str] = []
    for row in table.rows:
        for name in row.metrics:
            if name not in metric_names:
                metric_names.append(name)
    header = ["ticker_symbol", "fiscal_year", "document_type"] + metric_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table.rows:
            writer.writerow(
                [row.metadata["ticker_symbol"], row.metadata["fiscal_year"], row.metadata["document_type"]]
                + [row.metrics.get(name, "") for name in metric_names]
            )


def load_master_table(path: str | Path) -> MasterTable:
    rows: list[TableRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            metadata = {
                "ticker_symbol": record.pop("ticker_symbol"),
                "fiscal_year": record.pop("fiscal_year"),
                "document_type": record.pop("document_type"),
            }
            metrics: dict[str, float | str] = {}
            for name, value in record.items():
                if value == "" or value is None:
                    continue
                try:
                    metrics[name] = float(value)
                except ValueError:
                    metrics[name] = value
            rows.append(TableRow(metadata=metadata, metrics=metrics))
    return MasterTable(rows=rows)


# ---------------------------------------------------------------------------
# corpus rendering


def _filler_paragraph(rng: random.Random) -> str:
    sentences = [
        f"{rng.choice(_FILLER_SUBJECTS)} {rng.choice(_FILLER_VERBS)} {rng.choice(_FILLER_OBJECTS)}."
        for _ in range(3)
    ]
    return " ".join(sentences)


def render_document(row: TableRow, filler_paragraphs: int, seed: int) -> DocumentRecord:
    rng = random.Random(f"{seed}:{row.doc_id}")
    facts: list[str] = []
    sidecar: dict[str, SidecarFact] = {}
    year = row.metadata["fiscal_year"]
    ticker = row.metadata["ticker_symbol"]
    for metric, value in row.metrics.items():
        sentence = fact_sentence(ticker, metric, year, value)
        facts.append(sentence)
        sidecar[metric] = SidecarFact(value=render_value(value), statement=sentence)
    # with zero filler the text is exactly the fact sentences
    paragraphs = ["\n".join(facts)]
    paragraphs.extend(_filler_paragraph(rng) for _ in range(filler_paragraphs))
    return DocumentRecord(
        doc_id=row.doc_id,
        metadata=dict(row.metadata),
        text="\n\n".join(paragraphs),
        fact_sidecar=sidecar,
    )


def render_corpus(table: MasterTable, filler_paragraphs: int, seed: int) -> Corpus:
    """One synthetic document per master-table row; deterministic for a seed."""
    if not table.rows:
        raise GenerationError("master table is empty")
    documents = [render_document(row, filler_paragraphs, seed) for row in table.rows]
    return Corpus(schema=MetadataSchema.default(), documents=documents)


def save_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write text files, sidecars, and the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "texts").mkdir(parents=True, exist_ok=True)
    (out_dir / "sidecars").mkdir(parents=True, exist_ok=True)
    for doc in corpus.documents:
        text_rel = f"texts/{doc.doc_id}.txt"
        (out_dir / text_rel).write_text(doc.text, encoding="utf-8")
        doc.text_path = text_rel
        doc._abs_text_path = str(out_dir / text_rel)
        if doc.fact_sidecar is not None:
            sidecar_rel = f"sidecars/{doc.doc_id}.json"
            payload = {
                metric: {"value": fact.value, "statement": fact.statement}
                for metric, fact in doc.fact_sidecar.items()
            }
            (out_dir / sidecar_rel).write_text(
                json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )
            doc.sidecar_path = sidecar_rel
    manifest_path = out_dir / "manifest.json"
    save_manifest(corpus, manifest_path)
    return manifest_path


# ---------------------------------------------------------------------------
# instantiation


def instantiate(
    table: MasterTable,
    template: QuestionTemplate,
    selection: DocSelection,
    instance_id: str = "",
) -> BenchmarkInstance:
    """Build one benchmark instance: question, gold facts, oracle answer, aligned rows."""
    rows = table.select(selection.document_type, selection.fiscal_years, selection.tickers)
    if not rows:
        raise GenerationError("selection matches no master-table rows")
    for row in rows:
        missing = [m for m in template.required_metrics if m not in row.metrics]
        if missing:
            raise GenerationError(f"row {row.doc_id} lacks required metrics {missing}")

    years = tuple(sorted(selection.fiscal_years))
    params = dict(template.oracle_params)
    params["years"] = list(years)
    params["document_type"] = selection.document_type
    params["metrics"] = list(template.required_metrics)
    metric = params.get("metric")
    label = metric_label(metric) if metric else ""
    k = int(params.get("k", 1))

    if template.cross_year:
        if len(years) != 2:
            raise GenerationError(f"{template.id} needs exactly 2 fiscal years")
        question, gold_answer, gold_facts = _cross_year_gold(template, rows, years, metric, label, k)
    elif template.id == "interval_days":
        if len(years) != 1:
            raise GenerationError("interval_days needs exactly 1 fiscal year")
        question, gold_answer, gold_facts = _interval_gold(template, rows, years[0], k)
    else:
        if len(years) != 1:
            raise GenerationError(f"{template.id} needs exactly 1 fiscal year")
        question, gold_answer, gold_facts = _single_year_gold(template, rows, years[0], metric, label, k)

    aligned_rows = [
        AlignedRow(
            doc_id=row.doc_id,
            metric_columns=[(m, render_value(row.metrics[m])) for m in template.required_metrics],
        )
        for row in rows
    ]
    return BenchmarkInstance(
        instance_id=instance_id or f"{template.id}-{'-'.join(years)}-{metric or 'dates'}",
        question=question,
        doc_ids=[row.doc_id for row in rows],
        metadata=[dict(row.metadata) for row in rows],
        gold_facts=gold_facts,
        gold_answer=gold_answer,
        tier=template.tier,
        aligned_rows=aligned_rows,
        oracle=template.answer_oracle,
        params=params,
    )


def _metric_values(rows: list[TableRow], metric: str, year: str) -> dict[str, float]:
    return {
        row.metadata["ticker_symbol"]: float(row.metrics[metric])
        for row in rows
        if row.metadata["fiscal_year"] == year
    }


def _require_tie_rule(values: dict, params: dict, oracle: str) -> None:
    """Ranking over tied values is only defined when a tie rule is configured."""
    tied = len(set(values.values())) != len(values)
    if tied and not params.get("tie_rule"):
        raise GenerationError(f"{oracle}: tied values with no tie_rule in oracle_params")


def _single_year_gold(template, rows, year, metric, label, k):
    question = template.text_template.format(k=k, label=label, year=year)
    gold_facts = [
        fact_sentence(row.metadata["ticker_symbol"], metric, year, row.metrics[metric])
        for row in rows
    ]
    values = _metric_values(rows, metric, year)
    if template.answer_oracle == "top_k_by_metric":
        _require_tie_rule(values, template.oracle_params, template.answer_oracle)
        top = oracles.top_k_by_metric(values, k)
        gold_answer = ", ".join(t for t, _ in top)
    elif template.answer_oracle == "range":
        mx, mn, span = oracles.value_range(values)
        gold_answer = (
            f"The maximum {label} in fiscal year {year} was {mx:.2f}, "
            f"the minimum was {mn:.2f}, and the range was {span:.2f}."
        )
    elif template.answer_oracle == "variance":
        variance = oracles.population_variance(values)
        gold_answer = (
            f"The variance of {label} across companies in fiscal year {year} was {variance:.2f}."
        )
    else:
        raise GenerationError(f"unhandled single-year oracle {template.answer_oracle!r}")
    return question, gold_answer, gold_facts


def _pair_values(rows, metric, years):
    y1, y2 = years
    first = _metric_values_any(rows, metric, y1)
    second = _metric_values_any(rows, metric, y2)
    tickers = sorted(set(first) & set(second))
    if len(tickers) * 2 != len(rows):
        raise GenerationError("cross-year selection must pair every company across both years")
    return first, second, tickers


def _metric_values_any(rows, metric, year):
    return {
        row.metadata["ticker_symbol"]: row.metrics[metric]
        for row in rows
        if row.metadata["fiscal_year"] == year
    }


def _cross_year_gold(template, rows, years, metric, label, k):
    y1, y2 = years
    question = template.text_template.format(k=k, label=label, y1=y1, y2=y2)
    first, second, tickers = _pair_values(rows, metric, years)
    gold_facts = [
        merged_fact_sentence(t, metric, y1, first[t], y2, second[t]) for t in tickers
    ]
    if template.answer_oracle == "growth_rate_top_k":
        rates = oracles.growth_rates(
            {t: float(v) for t, v in first.items()}, {t: float(v) for t, v in second.items()}
        )
        _require_tie_rule(rates, template.oracle_params, template.answer_oracle)
        top = sorted(rates.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        gold_answer = ", ".join(f"{t} ({r:.2f}%)" for t, r in top)
    elif template.answer_oracle == "change_detection":
        changed = oracles.changed_values(
            {t: str(v) for t, v in first.items()}, {t: str(v) for t, v in second.items()}
        )
        if not changed:
            raise GenerationError("change_detection instance has no changes; adjust selection")
        gold_answer = ", ".join(changed)
    elif template.answer_oracle == "outlier_2sigma":
        rates = oracles.growth_rates(
            {t: float(v) for t, v in first.items()}, {t: float(v) for t, v in second.items()}
        )
        outliers = oracles.outliers_two_sigma(rates)
        if not outliers:
            raise GenerationError("outlier_2sigma instance has no outliers; adjust selection")
        gold_answer = ", ".join(outliers)
    else:
        raise GenerationError(f"unhandled cross-year oracle {template.answer_oracle!r}")
    return question, gold_answer, gold_facts


def _interval_gold(template, rows, year, k):
    question = template.text_template.format(k=k, year=year)
    gold_facts = []
    spans: dict[str, int] = {}
    for row in rows:
        ticker = row.metadata["ticker_symbol"]
        reg = str(row.metrics["share_registration_date"])
        exd = str(row.metrics["ex_dividend_date"])
        gold_facts.append(fact_sentence(ticker, "share_registration_date", year, reg))
        gold_facts.append(fact_sentence(ticker, "ex_dividend_date", year, exd))
        spans[ticker] = oracles.interval_days(reg, exd)
    _require_tie_rule(spans, template.oracle_params, template.answer_oracle)
    shortest = sorted(spans.items(), key=lambda kv: (kv[1], kv[0]))[:k]
    gold_answer = ", ".join(f"{t} ({d} days)" for t, d in shortest)
    return question, gold_answer, gold_facts


# ---------------------------------------------------------------------------
# noise injection


def inject_noise(
    instance: BenchmarkInstance, corpus: Corpus, ratio: float, seed: int
) -> tuple[BenchmarkInstance, Corpus]:
    """Append floor(ratio * |docs|) out-of-scope documents to the corpus.

    Noise documents reuse the instance's tickers and document type but carry
    fiscal years outside the instance's years, so every restriction implied
    by the instance excludes them. Gold facts and the gold answer are
    untouched.
    """
    if ratio < 0:
        raise GenerationError("noise ratio must be non-negative")
    count = int(ratio * len(instance.doc_ids))
    if count == 0:
        return instance, corpus

    tickers = sorted({m["ticker_symbol"] for m in instance.metadata})
    if not tickers:
        raise GenerationError("cannot construct noise documents without tickers")
    document_type = instance.metadata[0]["document_type"]
    used_years = {m["fiscal_year"] for m in instance.metadata}

    rng = random.Random(seed)
    noise_docs: list[DocumentRecord] = []
    noise_year = 2009
    i = 0
    while len(noise_docs) < count:
        year = str(noise_year - (i // len(tickers)))
        if year in used_years:
            raise GenerationError("cannot construct enough out-of-scope fiscal years")
        ticker = tickers[i % len(tickers)]
        if document_type == DIVIDEND_TYPE:
            reg = date(int(year), 6, 1 + rng.randrange(20))
            metrics: dict[str, float | str] = {
                "dividend_per_share": round(rng.uniform(0.2, 4.0), 2),
                "share_registration_date": reg.isoformat(),
                "ex_dividend_date": (reg + timedelta(days=1 + rng.randrange(25))).isoformat(),
            }
        else:
            metrics = {
                name: round(rng.uniform(10.0, 5000.0), 2) for name in ANNUAL_NUMERIC_METRICS
            }
            metrics[AUDITOR_METRIC] = rng.choice(AUDITOR_POOL)
        row = TableRow(
            metadata={
                "ticker_symbol": ticker,
                "fiscal_year": year,
                "document_type": document_type,
            },
            metrics=metrics,
        )
        noise_docs.append(render_document(row, filler_paragraphs=1, seed=seed))
        i += 1

    noisy = Corpus(schema=corpus.schema, documents=list(corpus.documents) + noise_docs)
    noisy_instance = BenchmarkInstance(
        instance_id=instance.instance_id,
        question=instance.question,
        doc_ids=list(instance.doc_ids),
        metadata=[dict(m) for m in instance.metadata],
        gold_facts=list(instance.gold_facts),
        gold_answer=instance.gold_answer,
        tier=instance.tier,
        aligned_rows=instance.aligned_rows,
        oracle=instance.oracle,
        params=dict(instance.params),
        noise_doc_ids=[doc.doc_id for doc in noise_docs],
    )
    return noisy_instance, noisy


# ---------------------------------------------------------------------------
# annotation verification


@dataclass
class VerificationReport:
    instance_id: str
    probes: int
    contradictions: list[dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.contradictions


def verify_instance(
    instance: BenchmarkInstance,
    corpus: Corpus,
    gateway: Gateway,
    cfg: RetrievalConfig = RetrievalConfig(),
) -> VerificationReport:
    """Probe every gold metric cell with a single-document query.

    Each aligned cell becomes one query against its own document, answered
    through the configured single-document RAG path; an answer that fails to
    support the expected value is reported as a contradiction.
    """
    if not instance.aligned_rows:
        raise GenerationError("verification needs aligned rows")
    probes = 0
    contradictions: list[dict] = []
    for row in instance.aligned_rows:
        doc = corpus.doc_by_id(row.doc_id)
        for metric, expected in row.metric_columns:
            query_text = (
                f"According to the {doc.metadata['document_type']} of "
                f"{doc.metadata['ticker_symbol']} for fiscal year "
                f"{doc.metadata['fiscal_year']}, what was its {metric_label(metric)}?"
            )
            iq = InstantiatedQuery(doc_id=doc.doc_id, template_index=0, query_text=query_text)
            pair = answer_subquery(doc, iq, cfg, gateway)
            probes += 1
            if not value_supported(pair.answer, expected):
                contradictions.append(
                    {
                        "doc_id": doc.doc_id,
                        "metric": metric,
                        "expected": expected,
                        "answer": pair.answer,
                    }
                )
    return VerificationReport(
        instance_id=instance.instance_id, probes=probes, contradictions=contradictions
    )


# ---------------------------------------------------------------------------
# benchmark assembly


def instance_to_dict(instance: BenchmarkInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "question": instance.question,
        "doc_ids": list(instance.doc_ids),
        "metadata": [dict(m) for m in instance.metadata],
        "gold_facts": list(instance.gold_facts),
        "gold_answer": instance.gold_answer,
        "tier": instance.tier,
        "aligned_rows": [
            {"doc_id": row.doc_id, "metric_columns": [[m, v] for m, v in row.metric_columns]}
            for row in (instance.aligned_rows or [])
        ],
        "oracle": instance.oracle,
        "params": dict(instance.params),
        "noise_doc_ids": list(instance.noise_doc_ids),
    }


def instance_from_dict(payload: dict) -> BenchmarkInstance:
    return BenchmarkInstance(
        instance_id=payload["instance_id"],
        question=payload["question"],
        doc_ids=list(payload["doc_ids"]),
        metadata=[dict(m) for m in payload["metadata"]],
        gold_facts=list(payload["gold_facts"]),
        gold_answer=payload["gold_answer"],
        tier=payload["tier"],
        aligned_rows=[
            AlignedRow(doc_id=row["doc_id"], metric_columns=[(m, v) for m, v in row["metric_columns"]])
            for row in payload.get("aligned_rows", [])
        ]
        or None,
        oracle=payload.get("oracle", ""),
        params=dict(payload.get("params", {})),
        noise_doc_ids=list(payload.get("noise_doc_ids", [])),
    )


def save_benchmark(instances: list[BenchmarkInstance], path: str | Path) -> None:
    payload = [instance_to_dict(i) for i in instances]
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def save_question_templates(templates: list[QuestionTemplate], path: str | Path) -> None:
    payload = [
        {
            "id": t.id,
            "text_template": t.text_template,
            "tier": t.tier,
            "required_metrics": list(t.required_metrics),
            "answer_oracle": t.answer_oracle,
            "oracle_params": dict(t.oracle_params),
            "fact_statement_template": t.fact_statement_template,
            "cross_year": t.cross_year,
        }
        for t in templates
    ]
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def load_question_templates(path: str | Path) -> list[QuestionTemplate]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        QuestionTemplate(
            id=entry["id"],
            text_template=entry["text_template"],
            tier=entry["tier"],
            required_metrics=tuple(entry["required_metrics"]),
            answer_oracle=entry["answer_oracle"],
            oracle_params=dict(entry["oracle_params"]),
            fact_statement_template=entry.get("fact_statement_template", ""),
            cross_year=entry.get("cross_year", False),
        )
        for entry in payload
    ]


def load_benchmark(path: str | Path) -> list[BenchmarkInstance]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [instance_from_dict(entry) for entry in payload]


@dataclass
class GenerationSummary:
    out_dir: str
    documents: int
    instances: int
    families: list[str]
    manifest_path: str
    benchmark_path: str
    plan_fixtures_path: str
    code_fixtures_path: str


def _rotate(seq: list[str], start: int, size: int) -> list[str]:
    return [seq[(start + i) % len(seq)] for i in range(min(size, len(seq)))]


def generate_benchmark(
    out_dir: str | Path,
    companies: int = 25,
    years: tuple[str, ...] = ("2020", "2021", "2022", "2023"),
    per_family: int = 8,
    seed: int = 7,
    filler_paragraphs: int = 2,
    subset_size: int = 12,
) -> GenerationSummary:
    """Generate the corpus, benchmark file, and scripted fixtures in one pass."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = generate_master_table(companies, years, seed)
    corpus = render_corpus(table, filler_paragraphs, seed)
    save_master_table(table, out_dir / "master_table.csv")
    manifest_path = save_corpus(corpus, out_dir)

    tickers = sorted({row.metadata["ticker_symbol"] for row in table.rows})
    volatile = table.rows[0].metadata["ticker_symbol"]
    by_position = tickers_by_position(table)
    # every ordered year combination, with its start index (the year after
    # which generated auditor changes are guaranteed to have happened)
    year_pairs = [
        (a, (years[a], years[b]))
        for a in range(len(years))
        for b in range(a + 1, len(years))
    ]
    numeric_cycle = list(ANNUAL_NUMERIC_METRICS)
    cross_metrics = ("revenue", "net_income", "total_assets")
    ks = (3, 2, 4)

    instances: list[BenchmarkInstance] = []
    counters: dict[str, int] = {}
    used_templates: dict[tuple, QuestionTemplate] = {}

    def _add(family: str, template: QuestionTemplate, selection: DocSelection):
        idx = counters.get(family, 0)
        counters[family] = idx + 1
        instance = instantiate(table, template, selection, instance_id=f"{family}-{idx:03d}")
        instances.append(instance)
        key = (template.id, template.oracle_params.get("metric"), template.oracle_params.get("k"))
        used_templates.setdefault(key, template)

    for family in TEMPLATE_TEXTS:
        count = per_family
        if family == "change_detection":
            # the question text only varies by the year pair
            count = min(per_family, len(year_pairs))
        for i in range(count):
            subset = _rotate(tickers, start=i * 5, size=subset_size)
            if family == "top_k_by_metric":
                metric = (numeric_cycle + ["dividend_per_share"])[i % (len(numeric_cycle) + 1)]
                dtype = DIVIDEND_TYPE if metric == "dividend_per_share" else ANNUAL_TYPE
                template = make_template(family, metric=metric, k=ks[i % len(ks)])
                selection = DocSelection(dtype, (years[i % len(years)],), tuple(subset))
            elif family in ("range", "variance"):
                metric = numeric_cycle[i % len(numeric_cycle)]
                template = make_template(family, metric=metric)
                selection = DocSelection(ANNUAL_TYPE, (years[(i + 1) % len(years)],), tuple(subset))
            elif family == "growth_rate_top_k":
                metric = cross_metrics[i % 3]
                _, pair = year_pairs[(i // 3) % len(year_pairs)]
                if volatile not in subset:
                    subset = [volatile] + subset[:-1]
                template = make_template(family, metric=metric, k=ks[i % len(ks)])
                selection = DocSelection(ANNUAL_TYPE, pair, tuple(sorted(subset)))
            elif family == "change_detection":
                start_idx, pair = year_pairs[i % len(year_pairs)]
                changer = by_position[start_idx + 1]
                if changer not in subset:
                    subset = [changer] + subset[:-1]
                template = make_template(family, metric=AUDITOR_METRIC)
                selection = DocSelection(ANNUAL_TYPE, pair, tuple(sorted(subset)))
            elif family == "interval_days":
                template = make_template(family, k=ks[i % len(ks)])
                selection = DocSelection(DIVIDEND_TYPE, (years[i % len(years)],), tuple(subset))
            elif family == "outlier_2sigma":
                metric = cross_metrics[(i + 1) % 3]
                _, pair = year_pairs[(i // 3) % len(year_pairs)]
                # a single planted outlier sits sqrt(N-1) sigmas out, so the
                # selection must be large enough for 2-sigma detection
                subset = _rotate(tickers, start=i * 5, size=max(subset_size, 9))
                if volatile not in subset:
                    subset = [volatile] + subset[:-1]
                template = make_template(family, metric=metric)
                selection = DocSelection(ANNUAL_TYPE, pair, tuple(sorted(subset)))
            else:  # pragma: no cover
                raise GenerationError(family)
            _add(family, template, selection)

    questions = [inst.question for inst in instances]
    if len(set(questions)) != len(questions):
        raise GenerationError("instance questions are not unique; fixture matching would collide")

    benchmark_path = out_dir / "benchmark.json"
    save_benchmark(instances, benchmark_path)
    save_question_templates(list(used_templates.values()), out_dir / "question_templates.json")

    plan_fixtures, code_fixtures = build_fixtures(instances)
    fixtures_dir = out_dir / "fixtures"
    fixtures_dir.mkdir(exist_ok=True)
    plan_path = fixtures_dir / "plan_fixtures.json"
    code_path = fixtures_dir / "code_fixtures.json"
    plan_path.write_text(json.dumps(plan_fixtures, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    code_path.write_text(json.dumps(code_fixtures, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    summary = GenerationSummary(
        out_dir=str(out_dir),
        documents=len(corpus.documents),
        instances=len(instances),
        families=sorted(TEMPLATE_TEXTS),
        manifest_path=str(manifest_path),
        benchmark_path=str(benchmark_path),
        plan_fixtures_path=str(plan_path),
        code_fixtures_path=str(code_path),
    )
    logger.info(
        "generated %d documents and %d instances across %d families under %s",
        summary.documents, summary.instances, len(summary.families), summary.out_dir,
    )
    return summary


def tickers_by_position(table: MasterTable) -> list[str]:
    """Tickers in generation order (company index order)."""
    seen: list[str] = []
    for row in table.rows:
        t = row.metadata["ticker_symbol"]
        if t not in seen:
            seen.append(t)
    return seen
