"""Prompt builders for every agent and judge role.

Payload sections are wrapped in simple XML-ish tags so that deterministic
offline providers can recover them exactly; real chat models read them as
ordinary structure. Builders return the user prompt; per-role system prompts
are module constants.
"""

from __future__ import annotations

import json


def tagged(tag: str, content: str) -> str:
    return f"<{tag}>\n{content}\n</{tag}>"


# ---------------------------------------------------------------------------
# planner

PLAN_SYSTEM = (
    "You decompose a question over a metadata-indexed document collection into "
    "per-document query templates. You never answer the question yourself."
)

PLAN_RULES = """\
Rules for the templates:
1. Single document oriented: each template must be answerable from one document alone.
2. Semantic mutual exclusivity: templates must not overlap in meaning or duplicate each other.
3. Metadata placement: write placeholders as {field_name}; every available metadata field \
should appear in at least one template, using exactly the field names listed below.
4. Optional metadata constraints: when a template should only be asked of some documents, add \
a "restriction" object mapping a metadata field name to the list of allowed values, for \
example: "restriction": {"fiscal_year": ["2021", "2022"]}. Leave the field out when the \
template applies to every document.

Output format (JSON only, no extra text):
[
  {"subtask": "template text for the sub-question", "restriction": {"fiscal_year": ["2021", "2022"]}},
  {"subtask": "template text for the sub-question"}
]"""


def plan_prompt(question: str, schema_desc: str) -> str:
    return "\n\n".join(
        [
            "Design per-document sub-query templates for the task below.",
            PLAN_RULES,
            "The task:\n" + tagged("question", question),
            "Available metadata fields:\n" + tagged("metadata_fields", schema_desc),
        ]
    )


# ---------------------------------------------------------------------------
# reader (single-document RAG)

READER_SYSTEM = (
    "You answer a question about a single document using only the excerpts provided. "
    "If the excerpts do not contain the answer, reply exactly NO_ANSWER_FOUND."
)


def reader_prompt(doc_id: str, query: str, chunk_texts: list[str]) -> str:
    excerpts = "\n".join(
        tagged(f"excerpt_{i}", text) for i, text in enumerate(chunk_texts)
    )
    return "\n\n".join(
        [
            "Document under consideration:\n" + tagged("doc_id", doc_id),
            "Question:\n" + tagged("query", query),
            "Excerpts:\n" + excerpts,
        ]
    )


# ---------------------------------------------------------------------------
# flat-RAG baseline

BASELINE_SYSTEM = "You answer the user's question from the retrieved document excerpts."

METADATA_LISTING_HEADER = "The list of document metadata you can query is as follows:"


def baseline_prompt(question: str, chunk_texts: list[str], metadata_listing: str | None) -> str:
    parts: list[str] = []
    if metadata_listing is not None:
        parts.append(f"{METADATA_LISTING_HEADER}\n{metadata_listing}")
    parts.append("You need to answer the question:\n" + tagged("question", question))
    excerpts = "\n".join(tagged(f"excerpt_{i}", text) for i, text in enumerate(chunk_texts))
    parts.append("Retrieved excerpts:\n" + excerpts)
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# normalizer (two stages)

NORM_SYSTEM = (
    "You are an expert in structured data extraction from sub-question answer transcripts."
)

NORM_SCHEMA_RULES = """\
Requirements:
- Extract every specific data value relevant to the task and standardize the units of measurement.
- Name each variable after its meaning and unit of measure.
- For information not provided, keep it as null.
- The JSON structure must have exactly one level: no nested objects or arrays, so the records \
can be analysed directly by Python code.

Output format: the records surrounded by <json>...</json> (must be a JSON list of flat \
objects), plus a brief schema description surrounded by <des>...</des>."""


def norm_schema_prompt(question: str, transcript_json: str) -> str:
    return "\n\n".join(
        [
            "Convert the sub-question answer transcript below into flat JSON records "
            "that support answering the overall task.",
            NORM_SCHEMA_RULES,
            "Overall task:\n" + tagged("question", question),
            "Transcript:\n" + tagged("transcript", transcript_json),
        ]
    )


NORM_CONTINUATION_RULES = """\
Requirements:
1. Convert the new transcript to JSON records with exactly the same structure as the \
existing records: same field names, same units of measure.
2. Keep every record flat (one level, no nested structure).
3. For information not provided, keep it as null.

Output format: only the new records, surrounded by <json>...</json> (a JSON list of flat \
objects that can be concatenated to the existing data)."""


def norm_continuation_prompt(exemplar_json: str, transcript_json: str) -> str:
    return "\n\n".join(
        [
            "You are a JSON continuation helper: convert the new transcript below into "
            "records consistent with the existing converted records.",
            NORM_CONTINUATION_RULES,
            "Existing records:\n" + tagged("exemplar", exemplar_json),
            "New transcript:\n" + tagged("transcript", transcript_json),
        ]
    )


# ---------------------------------------------------------------------------
# code agent

CODE_SYSTEM = (
    "You write a self-contained Python program that answers an analytical task "
    "from a JSON records file."
)

CODE_RULES = """\
Requirements:
1. Only a small sample of the records is shown; the full list of flat JSON records lives at \
the path below. Read it from that path (it is also exposed in the environment variable \
MUDA_DATA_PATH and as the program's first command-line argument).
2. The program must print a readable result that directly answers the task.
3. Use only the Python standard library.

Wrap the program in <execute>...</execute>; any explanation goes outside the tags."""


def code_prompt(question: str, demo_json: str, schema_desc: str, data_path: str) -> str:
    return "\n\n".join(
        [
            "Write a Python program for the task below.",
            CODE_RULES,
            "Task:\n" + tagged("question", question),
            "Sample records:\n" + tagged("records_sample", demo_json),
            "Records schema:\n" + tagged("records_schema", schema_desc),
            "Records file path:\n" + tagged("records_path", data_path),
        ]
    )


# ---------------------------------------------------------------------------
# final synthesis

FINAL_SYSTEM = "You produce the final concise answer to the task from the analysis run below."


def final_prompt(
    question: str, demo_json: str, code: str, stdout: str, stderr: str, exit_code: int
) -> str:
    return "\n\n".join(
        [
            "Produce the final concise answer to the task, in the user's language. "
            "If the analysis failed, state what can and cannot be concluded.",
            "Task:\n" + tagged("question", question),
            "Sample records:\n" + tagged("records_sample", demo_json),
            "Analysis code:\n" + tagged("code", code),
            f"Run results (exit code {exit_code}):\n"
            + tagged("stdout", stdout)
            + "\n"
            + tagged("stderr", stderr),
        ]
    )


# ---------------------------------------------------------------------------
# judges

JUDGE_SYSTEM = "You are a strict evaluation judge. Reply with JSON only."

NUMERIC_RULE = (
    "If the answer involves a numerical value, it is considered correct as long as the "
    "integer digits and the first decimal place are correct."
)

JUDGE_FINAL_CRITERIA = f"""\
Evaluation criteria:
1. The model's answer is correct if it contains the key information of the reference answer.
2. If key information is missing or conflicts with the reference answer, it is incorrect.
3. {NUMERIC_RULE}
4. Additional information beyond the reference answer, or answering in a different language, \
does not affect the judgment.

Return JSON only: {{"is_correct": true/false, "explanation": "..."}}"""


def judge_final_prompt(question: str, reference: str, model_answer: str) -> str:
    return "\n\n".join(
        [
            "Determine whether the model's final answer is correct with respect to the reference.",
            JUDGE_FINAL_CRITERIA,
            "Multi-document question:\n" + tagged("question", question),
            "Reference answer:\n" + tagged("reference", reference),
            "Model's answer:\n" + tagged("model_answer", model_answer),
        ]
    )


CHUNK_SEPARATOR = "<next chunk>"


def _coverage_common(gold_facts: list[str], info: str) -> list[str]:
    facts_json = json.dumps(gold_facts, ensure_ascii=False, indent=2)
    return [
        f"Information needed to answer the question (total_required = {len(gold_facts)}):\n"
        + tagged("facts", facts_json),
        f"Information extracted by the model (parts separated by {CHUNK_SEPARATOR} are "
        "independent of each other):\n" + tagged("info", info),
    ]


JUDGE_COVERAGE_CRITERIA = f"""\
Evaluation criteria:
1. A required entry counts as correctly extracted only if the extracted information contains \
its key information with the true entity.
2. {NUMERIC_RULE}
3. Extra information not in the reference list, or a different language, does not affect the \
judgment. Multiple correct extractions of the same entry are counted only once.

TASK: count how many of the required entries are correctly covered by the extracted information.
Return JSON only: {{"correct_extractions": <number of correct entries>, "total_required": <total>, "explanation": "..."}}"""


def judge_coverage_prompt(gold_facts: list[str], info: str) -> str:
    return "\n\n".join(
        ["Count correct extractions.", JUDGE_COVERAGE_CRITERIA] + _coverage_common(gold_facts, info)
    )


JUDGE_ERROR_CRITERIA = f"""\
Evaluation criteria:
1. Treat the reference list as the gold standard; check every required entry against all \
extracted parts.
2. An entry with no correct extraction (missing key information, wrong entity, or a \
conflicting value) counts as an error.
3. {NUMERIC_RULE}
4. Extra information not in the reference list does not affect the judgment.

TASK: count the required entries that are incorrect or missing.
Return JSON only: {{"error_extractions": <number of incorrect or missing entries>, "total_required": <total>, "explanation": "..."}}"""


def judge_error_prompt(gold_facts: list[str], info: str) -> str:
    return "\n\n".join(
        ["Count incorrect or missing entries.", JUDGE_ERROR_CRITERIA] + _coverage_common(gold_facts, info)
    )


JUDGE_CELLS_CRITERIA = f"""\
Evaluation criteria:
1. Judge only against this single gold row and this single document's dialog.
2. The row has already been aligned to the document by the dataset metadata; treat the \
document identity as given and do not judge metadata again.
3. Judge only the metric columns, one by one. A metric column counts as correct only if the \
dialog contains the same core fact under the correct symbol and year context.
4. {NUMERIC_RULE}
5. Extra information in the dialog does not hurt correctness. Count each column at most once.

TASK: return only the metric fields that are correctly supported by the dialog.
Constraints: "correct_metric_fields" must contain only field names from the provided metric \
columns; if none are correct, return an empty list.
Return JSON only: {{"correct_metric_fields": ["<metric field name>"]}}"""


def judge_cells_prompt(
    question: str,
    row_index: int,
    doc_metadata: dict[str, str],
    metric_columns: list[tuple[str, str]],
    transcript: str,
) -> str:
    columns_json = json.dumps(
        [{"field": name, "value": value} for name, value in metric_columns],
        ensure_ascii=False,
        indent=2,
    )
    return "\n\n".join(
        [
            f"Judge the extraction for gold row {row_index} (metric_total = {len(metric_columns)}).",
            JUDGE_CELLS_CRITERIA,
            "Multi-document question:\n" + tagged("question", question),
            "Aligned document metadata:\n"
            + tagged("doc_metadata", json.dumps(doc_metadata, ensure_ascii=False)),
            "Metric columns to judge:\n" + tagged("metric_columns", columns_json),
            "Document dialog:\n" + tagged("transcript", transcript),
        ]
    )


REPAIR_INSTRUCTION = (
    "\n\nYour previous reply could not be used ({reason}). "
    "Reply again following the output format exactly, with no surrounding prose."
)
