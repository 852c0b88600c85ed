"""Evaluation protocol: final-answer judging, process scores, aggregation.

Two process-score modes cover the two system families: double-check fact
coverage for flat-RAG runs (conservative coverage = min of the correct-side
estimate and one minus the error-side estimate, from two independent judge
calls) and cell-wise judging on aligned gold rows for workflow runs. Judge
failures always degrade pessimistically.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import EvalError
from .gateway import ChatRequest, Gateway
from .prompts import (
    CHUNK_SEPARATOR,
    JUDGE_SYSTEM,
    judge_cells_prompt,
    judge_coverage_prompt,
    judge_error_prompt,
    judge_final_prompt,
)

logger = logging.getLogger(__name__)

TIERS = ("simple", "complex")
RAG_MODE = "rag_double_check"
CELL_MODE = "cell_wise"


@dataclass
class AlignedRow:
    """One gold table row aligned to one document: the metric cells to judge."""

    doc_id: str
    metric_columns: list[tuple[str, str]]  # (field_name, gold_value)


@dataclass
class BenchmarkInstance:
    instance_id: str
    question: str
    doc_ids: list[str]
    metadata: list[dict[str, str]]
    gold_facts: list[str]
    gold_answer: str
    tier: str
    aligned_rows: list[AlignedRow] | None = None
    oracle: str = ""
    params: dict = field(default_factory=dict)
    noise_doc_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.gold_facts:
            raise EvalError(f"instance {self.instance_id}: gold_facts must be non-empty")
        if self.tier not in TIERS:
            raise EvalError(f"instance {self.instance_id}: unknown tier {self.tier!r}")
        if self.aligned_rows:
            known = set(self.doc_ids)
            for row in self.aligned_rows:
                if row.doc_id not in known:
                    raise EvalError(
                        f"instance {self.instance_id}: aligned row doc {row.doc_id!r} not in doc_ids"
                    )

    @property
    def non_atomic_risk(self) -> bool:
        """Merged (non-atomic) facts: fewer gold facts than documents."""
        return len(self.gold_facts) < len(self.doc_ids)


@dataclass
class Judgment:
    is_correct: bool
    judge_reply: str
    explanation: str
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ProcessScore:
    """Per-question process score in one of the two modes.

    rag_double_check: process = conservative coverage = min(coverage, 1 - error_ratio).
    cell_wise: process = fraction of gold metric cells supported.
    """

    mode: str
    process: float
    fully_correct: bool
    coverage: float | None = None
    error_ratio: float | None = None
    conservative: float | None = None
    cell_score: float | None = None
    flags: tuple[str, ...] = ()

    @classmethod
    def from_rag(cls, coverage: float, error_ratio: float, flags: tuple[str, ...] = ()) -> "ProcessScore":
        conservative = min(coverage, 1.0 - error_ratio)
        return cls(
            mode=RAG_MODE,
            process=conservative,
            fully_correct=conservative == 1.0,
            coverage=coverage,
            error_ratio=error_ratio,
            conservative=conservative,
            flags=flags,
        )

    @classmethod
    def from_cells(cls, cell_score: float, flags: tuple[str, ...] = ()) -> "ProcessScore":
        return cls(
            mode=CELL_MODE,
            process=cell_score,
            fully_correct=cell_score == 1.0,
            cell_score=cell_score,
            flags=flags,
        )


@dataclass
class TierMetrics:
    process_accuracy: float
    final_accuracy: float
    full_accuracy: float
    n: int


@dataclass
class MetricReport:
    overall: TierMetrics
    tiers: dict[str, TierMetrics]
    flags: list[str] = field(default_factory=list)


def _first_json_object(raw: str) -> dict | None:
    text = re.sub(r"```[a-zA-Z]*", "", raw).replace("```", "")
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            value, _ = decoder.raw_decode(text[i:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    return None


def _ask_judge(gateway: Gateway, prompt: str, retries: int = 1) -> tuple[dict | None, str]:
    """One judge call with bounded re-asks; returns (parsed object, raw reply)."""
    raw = ""
    for _ in range(retries + 1):
        raw = gateway.complete(
            ChatRequest(role_tag="judge", system_prompt=JUDGE_SYSTEM, user_prompt=prompt)
        ).text
        parsed = _first_json_object(raw)
        if parsed is not None:
            return parsed, raw
        logger.warning("judge reply unparseable; re-asking")
    return None, raw


def judge_final(
    instance: BenchmarkInstance, predicted: str, gateway: Gateway, retries: int = 1
) -> Judgment:
    """Semantic-equivalence judgment of the final answer against gold.

    An empty prediction short-circuits to incorrect without a judge call;
    unparseable judge replies default to incorrect with a flag.
    """
    if not predicted.strip():
        return Judgment(
            is_correct=False, judge_reply="", explanation="empty prediction",
            flags=["empty prediction: judged incorrect without a call"],
        )
    prompt = judge_final_prompt(instance.question, instance.gold_answer, predicted)
    parsed, raw = _ask_judge(gateway, prompt, retries)
    if parsed is None or not isinstance(parsed.get("is_correct"), bool):
        return Judgment(
            is_correct=False, judge_reply=raw, explanation="unparseable judge reply",
            flags=["judge parse failure: defaulted to incorrect"],
        )
    return Judgment(
        is_correct=parsed["is_correct"],
        judge_reply=raw,
        explanation=str(parsed.get("explanation", "")),
    )


@dataclass
class CoverageResult:
    coverage: float
    error_ratio: float
    flags: list[str] = field(default_factory=list)
    raw_replies: list[str] = field(default_factory=list)


def judge_rag_coverage(
    instance: BenchmarkInstance,
    extracted_chunks: list[str],
    gateway: Gateway,
    retries: int = 1,
) -> CoverageResult:
    """Double-check coverage: independent correct-side and error-side calls.

    Counts are clamped into [0, |gold_facts|] before division. A parse
    failure on either side degrades to the conservative default (coverage 0,
    error ratio 1) with a flag.
    """
    total = len(instance.gold_facts)
    if total == 0:
        raise EvalError("gold_facts must be non-empty for coverage judging")
    info = f"\n{CHUNK_SEPARATOR}\n".join(extracted_chunks)
    flags: list[str] = []
    replies: list[str] = []

    correct_parsed, raw = _ask_judge(gateway, judge_coverage_prompt(instance.gold_facts, info), retries)
    replies.append(raw)
    error_parsed, raw = _ask_judge(gateway, judge_error_prompt(instance.gold_facts, info), retries)
    replies.append(raw)

    if correct_parsed is None or "correct_extractions" not in correct_parsed:
        flags.append("coverage judge parse failure: conservative default")
        return CoverageResult(coverage=0.0, error_ratio=1.0, flags=flags, raw_replies=replies)
    if error_parsed is None or "error_extractions" not in error_parsed:
        flags.append("error judge parse failure: conservative default")
        return CoverageResult(coverage=0.0, error_ratio=1.0, flags=flags, raw_replies=replies)

    correct = _clamp_count(correct_parsed["correct_extractions"], total)
    errors = _clamp_count(error_parsed["error_extractions"], total)
    return CoverageResult(
        coverage=correct / total, error_ratio=errors / total, flags=flags, raw_replies=replies
    )


def _clamp_count(value, total: int) -> int:
    try:
        count = int(value)
    except (TypeError, ValueError):
        return 0
    return max(0, min(count, total))


@dataclass
class CellsResult:
    cell_score: float
    correct_cells: int
    total_cells: int
    per_row: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def judge_cells(
    instance: BenchmarkInstance,
    transcripts: Mapping[str, str],
    gateway: Gateway,
    retries: int = 1,
) -> CellsResult:
    """Cell-wise judging over aligned rows: one call per row.

    Judge replies are restricted to the row's metric field names; anything
    else is dropped. A row with no transcript counts all its cells incorrect.
    """
    if not instance.aligned_rows:
        raise EvalError(f"instance {instance.instance_id} has no aligned rows")
    total = sum(len(row.metric_columns) for row in instance.aligned_rows)
    correct = 0
    per_row: list[dict] = []
    flags: list[str] = []
    for row_index, row in enumerate(instance.aligned_rows):
        transcript = transcripts.get(row.doc_id)
        if transcript is None:
            flags.append(f"missing transcript for doc {row.doc_id}: cells counted incorrect")
            per_row.append({"doc_id": row.doc_id, "correct_fields": []})
            continue
        doc_meta = next(
            (m for m, d in zip(instance.metadata, instance.doc_ids) if d == row.doc_id), {}
        )
        prompt = judge_cells_prompt(
            instance.question, row_index, doc_meta, row.metric_columns, transcript
        )
        parsed, _raw = _ask_judge(gateway, prompt, retries)
        if parsed is None or not isinstance(parsed.get("correct_metric_fields"), list):
            flags.append(f"cell judge parse failure on doc {row.doc_id}: row counted incorrect")
            per_row.append({"doc_id": row.doc_id, "correct_fields": []})
            continue
        allowed = {name for name, _ in row.metric_columns}
        fields = [f for f in parsed["correct_metric_fields"] if f in allowed]
        # each column at most once
        fields = sorted(set(fields))
        correct += len(fields)
        per_row.append({"doc_id": row.doc_id, "correct_fields": fields})
    score = correct / total if total else 0.0
    return CellsResult(
        cell_score=score, correct_cells=correct, total_cells=total, per_row=per_row, flags=flags
    )


def aggregate(
    scores: Sequence[tuple[ProcessScore, Judgment]], tiers: Sequence[str]
) -> MetricReport:
    """Arithmetic means of process, final, and full accuracy, plus per-tier cuts."""
    if not scores:
        raise EvalError("cannot aggregate an empty score list")
    if len(scores) != len(tiers):
        raise EvalError("scores and tiers must align")

    def _metrics(indices: list[int]) -> TierMetrics:
        n = len(indices)
        process = sum(scores[i][0].process for i in indices) / n
        final = sum(1.0 for i in indices if scores[i][1].is_correct) / n
        full = sum(
            1.0 for i in indices if scores[i][0].fully_correct and scores[i][1].is_correct
        ) / n
        return TierMetrics(process_accuracy=process, final_accuracy=final, full_accuracy=full, n=n)

    overall = _metrics(list(range(len(scores))))
    by_tier: dict[str, TierMetrics] = {}
    for tier in TIERS:
        indices = [i for i, t in enumerate(tiers) if t == tier]
        if indices:
            by_tier[tier] = _metrics(indices)

    # Sanity: full accuracy can never beat final accuracy or the share of
    # fully-correct processes.
    m_share = sum(1.0 for s, _ in scores if s.fully_correct) / len(scores)
    if overall.full_accuracy > overall.final_accuracy + 1e-12 or overall.full_accuracy > m_share + 1e-12:
        raise EvalError("aggregation invariant violated")

    flags = [f for s, j in scores for f in list(s.flags) + list(j.flags)]
    return MetricReport(overall=overall, tiers=by_tier, flags=flags)


def render_report(report: MetricReport) -> str:
    """Plain-text table: Acc_process / Acc_final / Acc_full by tier."""
    header = f"{'tier':<10} {'n':>4} {'Acc_process':>12} {'Acc_final':>10} {'Acc_full':>9}"
    lines = [header, "-" * len(header)]

    def _row(name: str, m: TierMetrics) -> str:
        return (
            f"{name:<10} {m.n:>4} {m.process_accuracy:>12.4f} "
            f"{m.final_accuracy:>10.4f} {m.full_accuracy:>9.4f}"
        )

    for tier in TIERS:
        if tier in report.tiers:
            lines.append(_row(tier, report.tiers[tier]))
    lines.append(_row("all", report.overall))
    if report.flags:
        lines.append("")
        lines.append(f"flags ({len(report.flags)}):")
        lines.extend(f"  - {f}" for f in report.flags)
    return "\n".join(lines)
