"""Sub-query planning: templates with metadata restrictions, instantiation.

The planner turns the global question plus the metadata schema into a list
of per-document query templates (optionally restricted to metadata value
lists), then instantiates them against each document's metadata.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .corpus import MetadataSchema, restriction_allows, schema_description
from .errors import PlanningError, PlanParseError
from .gateway import ChatRequest, Gateway
from .prompts import PLAN_SYSTEM, REPAIR_INSTRUCTION, plan_prompt

logger = logging.getLogger(__name__)

PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class SubQueryTemplate:
    """A per-document question pattern with optional metadata restrictions."""

    subtask: str
    restriction: dict[str, list[str]] | None = None


@dataclass
class Plan:
    question: str
    templates: list[SubQueryTemplate] = field(default_factory=list)


@dataclass(frozen=True)
class InstantiatedQuery:
    doc_id: str
    template_index: int
    query_text: str


def parse_plan(raw: str, schema: MetadataSchema, question: str = "") -> Plan:
    """Parse a plan reply into a validated Plan.

    Tolerates code fences and prose around the JSON list; validates
    placeholders and restriction keys against the schema; deduplicates
    templates with identical subtask strings (first wins, with a warning).
    """
    data = _first_json_list(raw)
    if data is None:
        raise PlanParseError("no JSON list of objects found in plan reply")

    known = set(schema.field_names)
    templates: list[SubQueryTemplate] = []
    seen: set[str] = set()
    for item in data:
        if not isinstance(item, dict) or "subtask" not in item:
            raise PlanParseError(f"plan item is not an object with a subtask: {item!r}")
        subtask = str(item["subtask"]).strip()
        if not subtask:
            raise PlanParseError("empty subtask in plan reply")
        for name in PLACEHOLDER_RE.findall(subtask):
            if name not in known:
                raise PlanParseError(f"unknown placeholder {name!r} in subtask {subtask!r}")
        restriction = None
        if item.get("restriction") is not None:
            if not isinstance(item["restriction"], dict):
                raise PlanParseError(f"restriction is not an object: {item['restriction']!r}")
            restriction = {}
            for fname, allowed in item["restriction"].items():
                if fname not in known:
                    raise PlanParseError(f"unknown restriction field {fname!r}")
                if not isinstance(allowed, list):
                    allowed = [allowed]
                restriction[str(fname)] = [str(v) for v in allowed]
        if subtask in seen:
            logger.warning("duplicate subtask dropped (keeping first): %r", subtask)
            continue
        seen.add(subtask)
        templates.append(SubQueryTemplate(subtask=subtask, restriction=restriction))

    if not templates:
        raise PlanParseError("plan reply contains no templates")

    placed = {name for t in templates for name in PLACEHOLDER_RE.findall(t.subtask)}
    missing = known - placed
    if missing:
        logger.warning("metadata fields appear in no template: %s", sorted(missing))
    return Plan(question=question, templates=templates)


def serialize_plan(plan: Plan) -> str:
    """Render templates in the same JSON list shape the plan prompt asks for."""
    items = []
    for t in plan.templates:
        item: dict = {"subtask": t.subtask}
        if t.restriction is not None:
            item["restriction"] = t.restriction
        items.append(item)
    return json.dumps(items, ensure_ascii=False, indent=2)


def plan(question: str, schema: MetadataSchema, gateway: Gateway, repair_retries: int = 2) -> Plan:
    """Ask the planner role for templates, retrying with a repair note on parse failure."""
    if not question.strip():
        raise PlanningError("question must be non-empty")
    prompt = plan_prompt(question, schema_description(schema))
    raw = ""
    for attempt in range(repair_retries + 1):
        response = gateway.complete(
            ChatRequest(role_tag="planner", system_prompt=PLAN_SYSTEM, user_prompt=prompt)
        )
        raw = response.text
        try:
            return parse_plan(raw, schema, question=question)
        except PlanParseError as exc:
            logger.warning("plan parse failure (attempt %d): %s", attempt + 1, exc)
            prompt = plan_prompt(question, schema_description(schema)) + REPAIR_INSTRUCTION.format(
                reason=str(exc)
            )
    raise PlanningError(f"unparseable plan after {repair_retries} repair retries", raw_reply=raw)


def satisfy_restriction(metadata: dict[str, str], template: SubQueryTemplate) -> bool:
    """True iff the document's metadata passes the template's restriction."""
    return restriction_allows(metadata, template.restriction)


def fill_template(
    template: SubQueryTemplate,
    metadata: dict[str, str],
    doc_id: str = "",
    template_index: int = 0,
) -> InstantiatedQuery:
    """Substitute every {field_name} placeholder with the document's value."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in metadata:
            raise PlanningError(f"placeholder {name!r} missing from metadata for doc {doc_id!r}")
        return metadata[name]

    query_text = PLACEHOLDER_RE.sub(_sub, template.subtask)
    if "{" in query_text:
        raise PlanningError(f"residual placeholder marker in query: {query_text!r}")
    return InstantiatedQuery(doc_id=doc_id, template_index=template_index, query_text=query_text)


def _first_json_list(raw: str) -> list | None:
    """First well-formed JSON list found in the text, or None."""
    text = _strip_code_fences(raw)
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text[i:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value
    return None


def _strip_code_fences(raw: str) -> str:
    return re.sub(r"```[a-zA-Z]*", "", raw).replace("```", "")
