import re
import statistics
from datetime import date

import pytest

from docanalyst import benchgen
from docanalyst.benchgen import (
    DocSelection,
    QuestionTemplate,
    MasterTable,
    TableRow,
    generate_master_table,
    inject_noise,
    instantiate,
    load_master_table,
    make_template,
    render_corpus,
    save_master_table,
    verify_instance,
)
from docanalyst.corpus import SidecarFact, filter_by_restriction
from docanalyst.errors import GenerationError
from docanalyst.extractor import RetrievalConfig
from docanalyst.gateway import Gateway
from docanalyst.reference import OracleReaderProvider


def _row(ticker, year, metrics, dtype="annual_report"):
    return TableRow(
        metadata={"ticker_symbol": ticker, "fiscal_year": year, "document_type": dtype},
        metrics=metrics,
    )


class TestMasterTable:
    def test_generation_shape_and_determinism(self):
        t1 = generate_master_table(6, ("2021", "2022"), seed=5)
        t2 = generate_master_table(6, ("2021", "2022"), seed=5)
        assert len(t1.rows) == 6 * 2 * 2  # annual + dividend per company-year
        assert [r.metrics for r in t1.rows] == [r.metrics for r in t2.rows]

    def test_duplicate_rows_rejected(self):
        row = _row("AAA", "2021", {"revenue": 1.0})
        with pytest.raises(GenerationError, match="collision"):
            MasterTable(rows=[row, row])

    def test_csv_round_trip(self, tmp_path):
        table = generate_master_table(4, ("2021", "2022"), seed=1)
        path = tmp_path / "master.csv"
        save_master_table(table, path)
        loaded = load_master_table(path)
        assert len(loaded.rows) == len(table.rows)
        assert loaded.rows[0].metadata == table.rows[0].metadata
        assert loaded.rows[0].metrics == table.rows[0].metrics


class TestRenderCorpus:
    def test_one_doc_per_row_with_sidecar(self):
        table = MasterTable(rows=[
            _row("AAA", "2021", {"revenue": 100.0}),
            _row("BBB", "2021", {"revenue": 150.0}),
            _row("CCC", "2021", {"revenue": 120.0}),
        ])
        corpus = render_corpus(table, filler_paragraphs=1, seed=3)
        assert len(corpus.documents) == 3
        for doc, row in zip(corpus.documents, table.rows):
            assert set(doc.fact_sidecar) == set(row.metrics)
            for fact in doc.fact_sidecar.values():
                assert fact.statement in doc.text

    def test_zero_filler_text_is_exactly_the_fact_sentences(self):
        table = MasterTable(rows=[_row("AAA", "2021", {"revenue": 100.0, "net_income": 5.0})])
        corpus = render_corpus(table, filler_paragraphs=0, seed=3)
        text = corpus.documents[0].text
        assert text == (
            "AAA's revenue in fiscal year 2021 was 100.00.\n"
            "AAA's net income in fiscal year 2021 was 5.00."
        )

    def test_same_seed_byte_identical(self):
        table = generate_master_table(4, ("2021", "2022"), seed=9)
        c1 = render_corpus(table, 2, seed=11)
        c2 = render_corpus(table, 2, seed=11)
        assert [d.text for d in c1.documents] == [d.text for d in c2.documents]


class TestInstantiate:
    def _revenue_table(self):
        return MasterTable(rows=[
            _row("AAA", "2021", {"revenue": 100.0}),
            _row("BBB", "2021", {"revenue": 150.0}),
            _row("CCC", "2021", {"revenue": 120.0}),
        ])

    def test_top_k_names_the_maximum(self):
        template = make_template("top_k_by_metric", metric="revenue", k=1)
        instance = instantiate(self._revenue_table(), template, DocSelection("annual_report", ("2021",)))
        # independent oracle: brute-force max
        assert instance.gold_answer == "BBB"
        assert len(instance.gold_facts) == 3
        assert instance.tier == "simple"

    def test_range_min_max_span(self):
        table = MasterTable(rows=[
            _row("AAA", "2021", {"total_operating_cost": 10.0}),
            _row("BBB", "2021", {"total_operating_cost": 30.0}),
            _row("CCC", "2021", {"total_operating_cost": 25.0}),
        ])
        template = make_template("range", metric="total_operating_cost")
        instance = instantiate(table, template, DocSelection("annual_report", ("2021",)))
        assert "30.00" in instance.gold_answer
        assert "10.00" in instance.gold_answer
        assert "20.00" in instance.gold_answer
        assert len(instance.gold_facts) == 3  # one statement per doc

    def test_cross_year_merges_facts_to_half(self):
        table = MasterTable(rows=[
            _row("AAA", "2021", {"revenue": 100.0}),
            _row("AAA", "2022", {"revenue": 106.0}),
            _row("BBB", "2021", {"revenue": 200.0}),
            _row("BBB", "2022", {"revenue": 210.0}),
        ])
        template = make_template("growth_rate_top_k", metric="revenue", k=1)
        instance = instantiate(table, template, DocSelection("annual_report", ("2021", "2022")))
        assert len(instance.doc_ids) == 4
        assert len(instance.gold_facts) == 2  # half the collection size
        assert instance.non_atomic_risk is True
        assert instance.gold_answer.startswith("AAA (6.00%)")

    def test_aligned_rows_cover_every_doc(self):
        template = make_template("top_k_by_metric", metric="revenue", k=2)
        instance = instantiate(self._revenue_table(), template, DocSelection("annual_report", ("2021",)))
        assert len(instance.aligned_rows) == len(instance.doc_ids)
        for row in instance.aligned_rows:
            assert len(row.metric_columns) == len(template.required_metrics)

    def test_missing_metric_rejected(self):
        table = MasterTable(rows=[_row("AAA", "2021", {"net_income": 5.0})])
        template = make_template("top_k_by_metric", metric="revenue", k=1)
        with pytest.raises(GenerationError, match="lacks required metrics"):
            instantiate(table, template, DocSelection("annual_report", ("2021",)))

    def test_empty_selection_rejected(self):
        template = make_template("top_k_by_metric", metric="revenue", k=1)
        with pytest.raises(GenerationError, match="no master-table rows"):
            instantiate(self._revenue_table(), template, DocSelection("annual_report", ("1999",)))

    def test_tied_values_need_a_tie_rule(self):
        table = MasterTable(rows=[
            _row("AAA", "2021", {"revenue": 100.0}),
            _row("BBB", "2021", {"revenue": 100.0}),
        ])
        template = make_template("top_k_by_metric", metric="revenue", k=1)
        stripped = QuestionTemplate(
            id=template.id, text_template=template.text_template, tier=template.tier,
            required_metrics=template.required_metrics, answer_oracle=template.answer_oracle,
            oracle_params={"k": 1, "metric": "revenue"},
            fact_statement_template=template.fact_statement_template,
        )
        with pytest.raises(GenerationError, match="tie_rule"):
            instantiate(table, stripped, DocSelection("annual_report", ("2021",)))
        # with the default tie rule the lexicographically smaller ticker wins
        instance = instantiate(table, template, DocSelection("annual_report", ("2021",)))
        assert instance.gold_answer == "AAA"


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    summary = benchgen.generate_benchmark(
        out, companies=10, years=("2021", "2022", "2023"), per_family=2, subset_size=7, seed=21
    )
    table = load_master_table(summary.out_dir + "/master_table.csv")
    instances = benchgen.load_benchmark(summary.benchmark_path)
    return table, instances


class TestDualOracleCheck:
    """Gold answers must match independent re-implementations of every oracle."""

    @staticmethod
    def _values(table, instance, metric, year):
        tickers = {m["ticker_symbol"] for m in instance.metadata}
        return {
            r.metadata["ticker_symbol"]: r.metrics[metric]
            for r in table.rows
            if r.metadata["ticker_symbol"] in tickers
            and r.metadata["fiscal_year"] == year
            and r.metadata["document_type"] == instance.params["document_type"]
        }

    def test_gold_answers_match_independent_recomputation(self, generated):
        table, instances = generated
        assert len(instances) == 14
        for instance in instances:
            params = instance.params
            years = params["years"]
            metric = params.get("metric")
            if instance.oracle == "top_k_by_metric":
                values = self._values(table, instance, metric, years[0])
                # independent: repeated max-extraction
                remaining = dict(values)
                winners = []
                for _ in range(params["k"]):
                    best = sorted(remaining, key=lambda t: (-remaining[t], t))[0]
                    winners.append(best)
                    remaining.pop(best)
                assert instance.gold_answer == ", ".join(winners)
            elif instance.oracle == "range":
                values = self._values(table, instance, metric, years[0])
                ordered = sorted(values.values())
                assert f"{ordered[-1]:.2f}" in instance.gold_answer
                assert f"{ordered[0]:.2f}" in instance.gold_answer
                assert f"{ordered[-1] - ordered[0]:.2f}" in instance.gold_answer
            elif instance.oracle == "variance":
                values = self._values(table, instance, metric, years[0])
                expected = statistics.pvariance(list(values.values()))
                got = float(re.search(r"was (-?[\d.]+)\.$", instance.gold_answer).group(1))
                assert got == pytest.approx(expected, rel=1e-6)
            elif instance.oracle == "growth_rate_top_k":
                first = self._values(table, instance, metric, years[0])
                second = self._values(table, instance, metric, years[1])
                rates = {t: (second[t] - first[t]) / first[t] * 100 for t in first}
                expected = sorted(rates.items(), key=lambda kv: (-kv[1], kv[0]))[: params["k"]]
                assert instance.gold_answer == ", ".join(f"{t} ({r:.2f}%)" for t, r in expected)
            elif instance.oracle == "change_detection":
                first = self._values(table, instance, metric, years[0])
                second = self._values(table, instance, metric, years[1])
                changed = sorted(t for t in first if first[t] != second[t])
                assert instance.gold_answer == ", ".join(changed)
                assert changed
            elif instance.oracle == "interval_days":
                regs = self._values(table, instance, "share_registration_date", years[0])
                exds = self._values(table, instance, "ex_dividend_date", years[0])
                spans = {
                    t: (date.fromisoformat(exds[t]) - date.fromisoformat(regs[t])).days
                    for t in regs
                }
                expected = sorted(spans.items(), key=lambda kv: (kv[1], kv[0]))[: params["k"]]
                assert instance.gold_answer == ", ".join(f"{t} ({d} days)" for t, d in expected)
            elif instance.oracle == "outlier_2sigma":
                first = self._values(table, instance, metric, years[0])
                second = self._values(table, instance, metric, years[1])
                rates = {t: (second[t] - first[t]) / first[t] * 100 for t in first}
                mean = statistics.fmean(rates.values())
                sigma = statistics.pstdev(rates.values())
                expected = sorted(
                    t for t, r in rates.items() if r < mean - 2 * sigma or r > mean + 2 * sigma
                )
                assert instance.gold_answer == ", ".join(expected)
                assert expected
            else:
                pytest.fail(f"unknown oracle {instance.oracle}")

    def test_every_fact_appears_verbatim_in_the_right_documents(self, generated):
        table, instances = generated
        corpus = render_corpus(table, filler_paragraphs=2, seed=21)
        texts = {doc.doc_id: doc.text for doc in corpus.documents}
        for instance in instances:
            if instance.oracle in benchgen.CROSS_YEAR_FAMILIES:
                # merged statements: each single-year half appears in its pair doc
                for fact in instance.gold_facts:
                    halves = fact.rstrip(".").split(" and ")
                    ticker = fact.split("'s ")[0]
                    assert len(halves) == 2
                    year_docs = [d for d in instance.doc_ids if d.startswith(ticker + "_")]
                    assert len(year_docs) == 2
                    first_half = halves[0] + "."
                    assert any(first_half in texts[d] for d in year_docs)
            else:
                for fact in instance.gold_facts:
                    containing = [d for d in instance.doc_ids if fact in texts[d]]
                    assert len(containing) == 1

    def test_questions_unique_and_tiers_covered(self, generated):
        _, instances = generated
        questions = [i.question for i in instances]
        assert len(set(questions)) == len(questions)
        assert {i.tier for i in instances} == {"simple", "complex"}


def test_question_template_file_round_trip(tmp_path):
    templates = [
        benchgen.make_template("top_k_by_metric", metric="revenue", k=2),
        benchgen.make_template("interval_days", k=3),
        benchgen.make_template("growth_rate_top_k", metric="net_income", k=3),
    ]
    path = tmp_path / "templates.json"
    benchgen.save_question_templates(templates, path)
    loaded = benchgen.load_question_templates(path)
    assert loaded == templates


class TestInjectNoise:
    def _instance_and_corpus(self):
        table = generate_master_table(8, ("2021", "2022"), seed=2)
        corpus = render_corpus(table, 1, seed=2)
        template = make_template("top_k_by_metric", metric="revenue", k=3)
        tickers = tuple(sorted({r.metadata["ticker_symbol"] for r in table.rows}))[:7]
        instance = instantiate(
            table, template, DocSelection("annual_report", ("2021",), tickers), "t-0"
        )
        return instance, corpus.subset(instance.doc_ids)

    def test_noise_count_is_floor_of_ratio(self):
        instance, corpus = self._instance_and_corpus()
        assert len(instance.doc_ids) == 7
        noisy_instance, noisy = inject_noise(instance, corpus, ratio=0.5, seed=4)
        assert len(noisy.documents) == 7 + 3  # floor(0.5 * 7)
        assert len(noisy_instance.noise_doc_ids) == 3

    def test_zero_ratio_is_identity(self):
        instance, corpus = self._instance_and_corpus()
        same_instance, same = inject_noise(instance, corpus, ratio=0.0, seed=4)
        assert same is corpus
        assert same_instance is instance

    def test_noise_never_satisfies_instance_restrictions(self):
        instance, corpus = self._instance_and_corpus()
        noisy_instance, noisy = inject_noise(instance, corpus, ratio=1.0, seed=4)
        years = sorted({m["fiscal_year"] for m in instance.metadata})
        kept = filter_by_restriction(noisy, {"fiscal_year": years})
        kept_ids = {d.doc_id for d in kept}
        assert kept_ids == set(instance.doc_ids)
        assert kept_ids.isdisjoint(noisy_instance.noise_doc_ids)

    def test_gold_unchanged(self):
        instance, corpus = self._instance_and_corpus()
        noisy_instance, _ = inject_noise(instance, corpus, ratio=0.5, seed=4)
        assert noisy_instance.gold_answer == instance.gold_answer
        assert noisy_instance.gold_facts == instance.gold_facts


class TestVerifyInstance:
    def _setup(self):
        table = generate_master_table(6, ("2021", "2022"), seed=8)
        corpus = render_corpus(table, 1, seed=8)
        template = make_template("top_k_by_metric", metric="net_income", k=2)
        instance = instantiate(table, template, DocSelection("annual_report", ("2021",)), "v-0")
        sub = corpus.subset(instance.doc_ids)
        return instance, sub

    def test_oracle_corpus_has_zero_contradictions(self):
        instance, corpus = self._setup()
        gw = Gateway(OracleReaderProvider(corpus))
        report = verify_instance(instance, corpus, gw, RetrievalConfig(top_k=1, chunk_chars=2000, overlap_chars=0))
        assert report.clean
        assert report.probes == len(instance.doc_ids)

    def test_planted_corruption_detected_exactly_once(self):
        instance, corpus = self._setup()
        victim = corpus.documents[2]
        original = victim.fact_sidecar["net_income"]
        corrupted_statement = original.statement.replace("was ", "was 9999")
        victim.fact_sidecar["net_income"] = SidecarFact(value="9999.99", statement=corrupted_statement)
        gw = Gateway(OracleReaderProvider(corpus))
        report = verify_instance(instance, corpus, gw, RetrievalConfig(top_k=1, chunk_chars=2000, overlap_chars=0))
        assert len(report.contradictions) == 1
        assert report.contradictions[0]["doc_id"] == victim.doc_id

    def test_degenerate_reader_flags_everything(self):
        from conftest import scripted_gateway

        instance, corpus = self._setup()
        gw = scripted_gateway([], fallback="NO_ANSWER_FOUND")
        report = verify_instance(instance, corpus, gw, RetrievalConfig(top_k=1, chunk_chars=2000, overlap_chars=0))
        assert len(report.contradictions) == report.probes
