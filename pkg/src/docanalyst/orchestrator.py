"""End-to-end wiring: workflow phases, baseline, evaluation, run persistence.

A run owns its run directory. Each phase persists its artifact before the
next phase starts, so a killed run resumes from the last completed phase.
Phase artifacts are pure functions of the corpus, question, and provider
replies: wall-clock measurements go to a separate timings file so two runs
of the same config are byte-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import benchgen
from .analyst import (
    DEMO_SIZE,
    ExecutionResult,
    FinalAnswer,
    demo_records,
    generate_and_run,
    synthesize,
    write_records_file,
)
from .corpus import Corpus
from .errors import ConfigError, DocAnalystError, EvalError, PhaseError
from .evaluator import (
    BenchmarkInstance,
    Judgment,
    MetricReport,
    ProcessScore,
    aggregate,
    judge_cells,
    judge_final,
    judge_rag_coverage,
    render_report,
)
from .extractor import (
    BaselineAnswer,
    ExtractionPair,
    ExtractionRun,
    RetrievalConfig,
    extract_all,
    flat_rag,
)
from .gateway import (
    Gateway,
    Provider,
    ProviderConfig,
    ScriptedProvider,
    load_script_fixture,
)
from .normalizer import NormalizeConfig, RecordSchema, RecordSet, normalize_all
from .planner import InstantiatedQuery, parse_plan, plan as plan_question, serialize_plan
from .reference import (
    OracleReaderProvider,
    ReferenceNormalizerProvider,
    ReferenceSynthesizerProvider,
    RuleJudgeProvider,
)
from .sandbox import LocalSandboxRunner, WorkerSandboxRunner

logger = logging.getLogger(__name__)

WORKFLOW_MODE = "workflow"
BASELINE_MODE = "baseline"

PHASES = ("plan", "extract", "normalize", "analyze", "synthesize")

PROVIDER_MODES = ("reference", "scripted", "http")


@dataclass
class RunConfig:
    run_id: str
    run_dir: str
    mode: str = WORKFLOW_MODE
    provider_mode: str = "reference"
    plan_fixtures: str | None = None
    code_fixtures: str | None = None
    script_fixtures: str | None = None  # scripted mode: one fixture file for all roles
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    normalize: NormalizeConfig = field(default_factory=NormalizeConfig)
    wall_ms: int = 30_000
    memory_mb: int = 512
    parallelism: int = 8
    repair_retries: int = 2
    noise_ratio: float = 0.0
    noise_seed: int = 0
    budget_multiplier: float = 1.0
    metadata_in_prompt: bool = False
    sandbox_worker_cmd: list[str] | None = None
    http_providers: dict[str, ProviderConfig] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (WORKFLOW_MODE, BASELINE_MODE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.provider_mode not in PROVIDER_MODES:
            raise ConfigError(f"unknown provider_mode {self.provider_mode!r}")
        if self.mode == BASELINE_MODE and self.budget_multiplier <= 0:
            raise ConfigError("budget_multiplier must be positive")
        if self.noise_ratio < 0:
            raise ConfigError("noise_ratio must be non-negative")

    def snapshot(self) -> dict:
        """JSON-serializable snapshot sufficient to re-execute the run."""
        return {
            "run_id": self.run_id,
            "run_dir": self.run_dir,
            "mode": self.mode,
            "provider_mode": self.provider_mode,
            "plan_fixtures": self.plan_fixtures,
            "code_fixtures": self.code_fixtures,
            "script_fixtures": self.script_fixtures,
            "retrieval": {
                "top_k": self.retrieval.top_k,
                "scorer": self.retrieval.scorer,
                "chunk_chars": self.retrieval.chunk_chars,
                "overlap_chars": self.retrieval.overlap_chars,
            },
            "normalize": {
                "batch_size": self.normalize.batch_size,
                "sample_size": self.normalize.sample_size,
                "repair_retries": self.normalize.repair_retries,
            },
            "wall_ms": self.wall_ms,
            "memory_mb": self.memory_mb,
            "parallelism": self.parallelism,
            "repair_retries": self.repair_retries,
            "noise_ratio": self.noise_ratio,
            "noise_seed": self.noise_seed,
            "budget_multiplier": self.budget_multiplier,
            "metadata_in_prompt": self.metadata_in_prompt,
            "sandbox_worker_cmd": self.sandbox_worker_cmd,
        }

    @classmethod
    def from_snapshot(cls, payload: dict) -> "RunConfig":
        retrieval = RetrievalConfig(**payload.get("retrieval", {}))
        normalize = NormalizeConfig(**payload.get("normalize", {}))
        fields = {
            k: payload[k]
            for k in (
                "run_id", "run_dir", "mode", "provider_mode", "plan_fixtures",
                "code_fixtures", "script_fixtures", "wall_ms", "memory_mb", "parallelism",
                "repair_retries", "noise_ratio", "noise_seed", "budget_multiplier",
                "metadata_in_prompt", "sandbox_worker_cmd",
            )
            if k in payload
        }
        return cls(retrieval=retrieval, normalize=normalize, **fields)


def build_gateways(cfg: RunConfig, corpus: Corpus) -> dict[str, Gateway]:
    """Per-role gateways for the configured provider mode."""
    roles = ("planner", "reader", "normalizer", "coder", "synthesizer", "judge")
    providers: dict[str, Provider] = {}
    if cfg.provider_mode == "reference":
        plan_script = load_script_fixture(cfg.plan_fixtures) if cfg.plan_fixtures else []
        code_script = load_script_fixture(cfg.code_fixtures) if cfg.code_fixtures else []
        providers = {
            "planner": ScriptedProvider(plan_script),
            "reader": OracleReaderProvider(corpus),
            "normalizer": ReferenceNormalizerProvider(),
            "coder": ScriptedProvider(code_script),
            "synthesizer": ReferenceSynthesizerProvider(),
            "judge": RuleJudgeProvider(),
        }
    elif cfg.provider_mode == "scripted":
        if not cfg.script_fixtures:
            raise ConfigError("scripted provider_mode requires script_fixtures")
        script = load_script_fixture(cfg.script_fixtures)
        providers = {role: ScriptedProvider(script) for role in roles}
    else:  # http
        for role in roles:
            pc = cfg.http_providers.get(role) or cfg.http_providers.get("default")
            if pc is None:
                raise ConfigError(f"http provider_mode: no provider config for role {role!r}")
            from .gateway import HttpChatProvider

            providers[role] = HttpChatProvider(pc)
    gateways = {}
    for role, provider in providers.items():
        pc = None
        if cfg.provider_mode == "http":
            pc = cfg.http_providers.get(role) or cfg.http_providers.get("default")
        gateways[role] = Gateway(provider, pc or ProviderConfig(parallelism_limit=max(cfg.parallelism, 1)))
    return gateways


def build_runner(cfg: RunConfig, run_dir: Path):
    if cfg.sandbox_worker_cmd:
        return WorkerSandboxRunner(cfg.sandbox_worker_cmd, run_dir)
    return LocalSandboxRunner(run_dir)


# ---------------------------------------------------------------------------
# artifact IO


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


class RunRecord:
    """Append-only artifact store for one run directory."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.status_path = self.run_dir / "status.json"

    def status(self) -> dict:
        if self.status_path.exists():
            return _read_json(self.status_path)
        return {}

    def mark(self, phase: str, state: str) -> None:
        status = self.status()
        status[phase] = state
        _write_json(self.status_path, status)

    def phase_done(self, phase: str) -> bool:
        return self.status().get(phase) == "done"

    def path(self, name: str) -> Path:
        return self.run_dir / name


def _persist_extraction(record: RunRecord, run: ExtractionRun) -> None:
    lines = []
    for pair in run.pairs:
        lines.append(
            json.dumps(
                {
                    "doc_id": pair.query.doc_id,
                    "template_index": pair.query.template_index,
                    "query_text": pair.query.query_text,
                    "answer": pair.answer,
                    "retrieved": [
                        [chunk.index, score]
                        for chunk, score in zip(pair.retrieved, pair.retrieved_scores)
                    ],
                    "status": "ok",
                },
                ensure_ascii=False,
            )
        )
    for failure in run.failed:
        lines.append(
            json.dumps(
                {
                    "doc_id": failure.doc_id,
                    "template_index": failure.template_index,
                    "query_text": failure.query_text,
                    "error": failure.error,
                    "status": "failed",
                },
                ensure_ascii=False,
            )
        )
    record.path("extraction.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_extraction(record: RunRecord, corpus: Corpus) -> ExtractionRun:
    pairs: list[ExtractionPair] = []
    failed = []
    for line in record.path("extraction.jsonl").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if row["status"] != "ok":
            continue
        doc = corpus.doc_by_id(row["doc_id"])
        pairs.append(
            ExtractionPair(
                metadata=dict(doc.metadata),
                query=InstantiatedQuery(
                    doc_id=row["doc_id"],
                    template_index=row["template_index"],
                    query_text=row["query_text"],
                ),
                answer=row["answer"],
                retrieved=[],
            )
        )
    return ExtractionRun(pairs=pairs, failed=failed)


def _persist_recordset(record: RunRecord, rs: RecordSet) -> None:
    _write_json(
        record.path("normalized.json"),
        {
            "schema": {"description": rs.schema.description, "field_names": list(rs.schema.field_names)},
            "records": rs.records,
            "provenance": [[list(key) for key in keys] for keys in rs.provenance],
            "dropped": [list(key) for key in rs.dropped],
            "warnings": rs.warnings,
        },
    )


def _load_recordset(record: RunRecord) -> RecordSet:
    payload = _read_json(record.path("normalized.json"))
    return RecordSet(
        schema=RecordSchema(
            description=payload["schema"]["description"],
            field_names=tuple(payload["schema"]["field_names"]),
        ),
        records=payload["records"],
        provenance=[[tuple(key) for key in keys] for keys in payload["provenance"]],
        dropped=[tuple(key) for key in payload.get("dropped", [])],
        warnings=payload.get("warnings", []),
    )


# ---------------------------------------------------------------------------
# workflow


def run_workflow(
    question: str,
    corpus: Corpus,
    cfg: RunConfig,
    gateways: dict[str, Gateway] | None = None,
    runner=None,
    resume: bool = False,
) -> FinalAnswer:
    """Execute the five-phase workflow, persisting each artifact before the next phase."""
    if not corpus.documents:
        raise PhaseError("plan", "corpus is empty")
    record = RunRecord(cfg.run_dir)
    if not record.path("config.json").exists():
        _write_json(record.path("config.json"), {"question": question, **cfg.snapshot()})
    gateways = gateways or build_gateways(cfg, corpus)
    runner = runner or build_runner(cfg, record.run_dir)

    # Phase 1: plan
    if resume and record.phase_done("plan"):
        the_plan = parse_plan(
            record.path("plan.json").read_text(encoding="utf-8"), corpus.schema, question
        )
    else:
        try:
            the_plan = plan_question(question, corpus.schema, gateways["planner"], cfg.repair_retries)
        except DocAnalystError as exc:
            record.mark("plan", f"failed: {exc}")
            raise PhaseError("plan", str(exc)) from exc
        record.path("plan.json").write_text(serialize_plan(the_plan) + "\n", encoding="utf-8")
        record.mark("plan", "done")

    # Phase 2: extraction
    if resume and record.phase_done("extract"):
        extraction = _load_extraction(record, corpus)
    else:
        extraction = extract_all(
            corpus, the_plan, cfg.retrieval, gateways["reader"], cfg.parallelism
        )
        _persist_extraction(record, extraction)
        if not extraction.pairs:
            record.mark("extract", "failed: empty extraction")
            raise PhaseError("extract", "empty extraction")
        record.mark("extract", "done")

    # Phase 3: normalization
    if resume and record.phase_done("normalize"):
        recordset = _load_recordset(record)
    else:
        try:
            recordset = normalize_all(extraction.pairs, question, cfg.normalize, gateways["normalizer"])
        except DocAnalystError as exc:
            record.mark("normalize", f"failed: {exc}")
            raise PhaseError("normalize", str(exc)) from exc
        _persist_recordset(record, recordset)
        record.mark("normalize", "done")

    # Phase 4: programmatic analysis
    if resume and record.phase_done("analyze"):
        code = record.path("analysis_code.py").read_text(encoding="utf-8")
        exec_payload = _read_json(record.path("execution.json"))
        exec_result = ExecutionResult(
            stdout=exec_payload["stdout"],
            stderr=exec_payload["stderr"],
            exit_code=exec_payload["exit_code"],
            wall_ms=0,
            timed_out=exec_payload["timed_out"],
        )
        demo = demo_records(_load_recordset(record), DEMO_SIZE)
    else:
        try:
            data_path = write_records_file(recordset, record.run_dir)
            demo = demo_records(recordset, DEMO_SIZE)
            program, exec_result, first_attempt = generate_and_run(
                question,
                demo,
                recordset.schema,
                data_path,
                gateways["coder"],
                runner,
                wall_ms=cfg.wall_ms,
                memory_mb=cfg.memory_mb,
                repair_retries=cfg.repair_retries,
            )
        except DocAnalystError as exc:
            record.mark("analyze", f"failed: {exc}")
            raise PhaseError("analyze", str(exc)) from exc
        code = program.code
        record.path("analysis_code.py").write_text(program.code + "\n", encoding="utf-8")
        if first_attempt is not None:
            record.path("analysis_code_initial.py").write_text(
                first_attempt.code + "\n", encoding="utf-8"
            )
        _write_json(
            record.path("execution.json"),
            {
                "stdout": exec_result.stdout,
                "stderr": exec_result.stderr,
                "exit_code": exec_result.exit_code,
                "timed_out": exec_result.timed_out,
            },
        )
        _write_json(record.path("timings.json"), {"analysis_wall_ms": exec_result.wall_ms})
        record.mark("analyze", "done")

    # Phase 5: synthesis
    if resume and record.phase_done("synthesize"):
        payload = _read_json(record.path("final_answer.json"))
        return FinalAnswer(
            text=payload["text"], question=payload["question"],
            run_id=payload["run_id"], flags=payload.get("flags", []),
        )
    try:
        final = synthesize(
            question, exec_result, demo, gateways["synthesizer"], code=code, run_id=cfg.run_id
        )
    except DocAnalystError as exc:
        record.mark("synthesize", f"failed: {exc}")
        raise PhaseError("synthesize", str(exc)) from exc
    _write_json(
        record.path("final_answer.json"),
        {"run_id": final.run_id, "question": final.question, "text": final.text, "flags": final.flags},
    )
    record.mark("synthesize", "done")
    return final


def run_baseline(
    question: str,
    corpus: Corpus,
    cfg: RunConfig,
    gateways: dict[str, Gateway] | None = None,
) -> BaselineAnswer:
    """Flat-RAG baseline: one retrieval pool, one reader call, persisted chunks."""
    if not corpus.documents:
        raise PhaseError("baseline", "corpus is empty")
    if cfg.budget_multiplier <= 0:
        raise ConfigError("budget_multiplier must be positive")
    record = RunRecord(cfg.run_dir)
    if not record.path("config.json").exists():
        _write_json(record.path("config.json"), {"question": question, **cfg.snapshot()})
    gateways = gateways or build_gateways(cfg, corpus)
    budget = int(round(cfg.budget_multiplier * len(corpus.documents)))
    try:
        answer = flat_rag(
            question, corpus, budget, cfg.metadata_in_prompt, gateways["reader"], cfg.retrieval
        )
    except DocAnalystError as exc:
        record.mark("baseline", f"failed: {exc}")
        raise PhaseError("baseline", str(exc)) from exc
    _write_json(
        record.path("baseline.json"),
        {
            "run_id": cfg.run_id,
            "question": question,
            "answer": answer.answer,
            "metadata_in_prompt": answer.metadata_in_prompt,
            "budget": budget,
            "retrieved": [
                {"doc_id": c.doc_id, "index": c.index, "text": c.text} for c in answer.retrieved
            ],
        },
    )
    record.mark("baseline", "done")
    return answer


def run_benchmark_instance(
    instance: BenchmarkInstance,
    corpus: Corpus,
    cfg: RunConfig,
    resume: bool = False,
):
    """Run one benchmark instance against its own document collection."""
    sub = corpus.subset(instance.doc_ids)
    if cfg.noise_ratio > 0:
        instance, sub = benchgen.inject_noise(instance, sub, cfg.noise_ratio, cfg.noise_seed)
    gateways = build_gateways(cfg, sub)
    if cfg.mode == BASELINE_MODE:
        return run_baseline(instance.question, sub, cfg, gateways)
    return run_workflow(instance.question, sub, cfg, gateways, resume=resume)


# ---------------------------------------------------------------------------
# evaluation


def _transcripts_from_run(run_dir: Path) -> dict[str, str]:
    """Per-document dialog text rebuilt from the extraction transcript."""
    by_doc: dict[str, list[str]] = {}
    path = run_dir / "extraction.jsonl"
    if not path.exists():
        return {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("status") != "ok":
            continue
        by_doc.setdefault(row["doc_id"], []).append(
            f"Q: {row['query_text']}\nA: {row['answer']}"
        )
    return {doc_id: "\n\n".join(parts) for doc_id, parts in by_doc.items()}


def run_eval(
    instances: list[BenchmarkInstance],
    runs_dir: str | Path,
    judge_gateway: Gateway,
    mode: str = WORKFLOW_MODE,
    eval_dir: str | Path | None = None,
    cell_judge_gateway: Gateway | None = None,
) -> tuple[MetricReport, int]:
    """Judge every instance's run and aggregate; returns (report, missing_runs).

    Cell-wise judging may use a different judge model than the remaining
    judgments; it defaults to the same gateway.
    """
    if not instances:
        raise EvalError("no instances to evaluate")
    cell_judge_gateway = cell_judge_gateway or judge_gateway
    runs_dir = Path(runs_dir)
    eval_dir = Path(eval_dir) if eval_dir else runs_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)

    scored: list[tuple[ProcessScore, Judgment]] = []
    tiers: list[str] = []
    missing = 0
    for instance in instances:
        run_dir = runs_dir / instance.instance_id
        base_flags: tuple[str, ...] = ()
        if instance.non_atomic_risk:
            base_flags = (f"non-atomic risk: {len(instance.gold_facts)} facts over "
                          f"{len(instance.doc_ids)} documents",)

        if mode == WORKFLOW_MODE:
            answer_path = run_dir / "final_answer.json"
            if not answer_path.exists():
                missing += 1
                judgment = Judgment(False, "", "missing run", flags=["missing run"])
                score = ProcessScore.from_cells(0.0, base_flags + ("missing run",))
            else:
                predicted = _read_json(answer_path)["text"]
                transcripts = _transcripts_from_run(run_dir)
                cells = judge_cells(instance, transcripts, cell_judge_gateway)
                score = ProcessScore.from_cells(cells.cell_score, base_flags + tuple(cells.flags))
                judgment = judge_final(instance, predicted, judge_gateway)
        elif mode == BASELINE_MODE:
            baseline_path = run_dir / "baseline.json"
            if not baseline_path.exists():
                missing += 1
                judgment = Judgment(False, "", "missing run", flags=["missing run"])
                score = ProcessScore.from_rag(0.0, 1.0, base_flags + ("missing run",))
            else:
                payload = _read_json(baseline_path)
                chunks = [entry["text"] for entry in payload["retrieved"]]
                coverage = judge_rag_coverage(instance, chunks, judge_gateway)
                score = ProcessScore.from_rag(
                    coverage.coverage, coverage.error_ratio, base_flags + tuple(coverage.flags)
                )
                judgment = judge_final(instance, payload["answer"], judge_gateway)
        else:
            raise EvalError(f"unknown eval mode {mode!r}")

        scored.append((score, judgment))
        tiers.append(instance.tier)
        _write_json(
            eval_dir / f"{instance.instance_id}.judgment.json",
            {
                "instance_id": instance.instance_id,
                "tier": instance.tier,
                "mode": score.mode,
                "process": score.process,
                "coverage": score.coverage,
                "error_ratio": score.error_ratio,
                "conservative": score.conservative,
                "cell_score": score.cell_score,
                "fully_correct": score.fully_correct,
                "final_correct": judgment.is_correct,
                "explanation": judgment.explanation,
                "flags": list(score.flags) + list(judgment.flags),
            },
        )

    report = aggregate(scored, tiers)
    if missing:
        report.flags.append(f"{missing} instance(s) had no run; scored fully incorrect")
    _write_json(
        eval_dir / "report.json",
        {
            "overall": vars(report.overall),
            "tiers": {k: vars(v) for k, v in report.tiers.items()},
            "flags": report.flags,
            "mode": mode,
            "n": report.overall.n,
        },
    )
    (eval_dir / "report.txt").write_text(render_report(report) + "\n", encoding="utf-8")
    return report, missing
