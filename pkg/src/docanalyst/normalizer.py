"""Two-stage batch-iterative normalization of extraction transcripts.

Stage 1 defines a flat record schema from a small sample of pairs; stage 2
converts the remaining transcript batch by batch under that fixed schema.
Batches run strictly sequentially: the stage-1 sample is the exemplar shown
to every stage-2 call, and record order must be reproducible.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError, NormalizationError
from .extractor import ExtractionPair
from .gateway import ChatRequest, Gateway
from .prompts import (
    NORM_SYSTEM,
    REPAIR_INSTRUCTION,
    norm_continuation_prompt,
    norm_schema_prompt,
)

logger = logging.getLogger(__name__)

PairKey = tuple[str, int]  # (doc_id, template_index)


@dataclass(frozen=True)
class RecordSchema:
    description: str
    field_names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.field_names)) != len(self.field_names) or not self.field_names:
            raise NormalizationError(f"schema field names must be unique and non-empty: {self.field_names}")


@dataclass
class RecordSet:
    schema: RecordSchema
    records: list[dict]
    provenance: list[list[PairKey]]
    dropped: list[PairKey] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.provenance) != len(self.records):
            raise NormalizationError("provenance length must equal records length")


@dataclass(frozen=True)
class NormalizeConfig:
    batch_size: int = 8
    sample_size: int = 4
    repair_retries: int = 2

    def __post_init__(self):
        if self.batch_size < 1 or self.sample_size < 1:
            raise ConfigError("batch_size and sample_size must be positive")
        if self.sample_size > self.batch_size:
            raise ConfigError("sample_size must be <= batch_size")
        if self.repair_retries < 0:
            raise ConfigError("repair_retries must be non-negative")


def parse_tagged(raw: str, tag: str) -> str:
    """Content between the first `<tag>` and the last `</tag>` (greedy)."""
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    start = raw.find(open_tag)
    end = raw.rfind(close_tag)
    if start == -1 or end == -1 or end < start:
        raise NormalizationError(f"tag {tag!r} absent from reply")
    return raw[start + len(open_tag) : end].strip()


_NUMERIC_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)")


def canonical_value(value):
    """Scalar canonicalization: numeric strings become numbers, depth > 1 is rejected."""
    if isinstance(value, (dict, list, tuple)):
        raise NormalizationError("nested structure in record value")
    if isinstance(value, str):
        text = value.strip()
        if _NUMERIC_RE.fullmatch(text):
            if "." in text:
                return float(text)
            try:
                return int(text)
            except ValueError:  # pragma: no cover - fullmatch guards this
                return value
        return value
    return value


def _parse_records(raw: str) -> list[dict]:
    content = parse_tagged(raw, "json")
    try:
        data = json.loads(content)
    except json.JSONDecodeError as exc:
        raise NormalizationError(f"<json> content is not valid JSON: {exc}") from exc
    if not isinstance(data, list) or not all(isinstance(r, dict) for r in data):
        raise NormalizationError("<json> content must be a list of flat objects")
    return [{str(k): canonical_value(v) for k, v in record.items()} for record in data]


def transcript_json(pairs: list[ExtractionPair]) -> str:
    """Stable JSON rendering of pairs for norm prompts (and offline parsing)."""
    entries = [
        {
            "doc_id": p.query.doc_id,
            "metadata": p.metadata,
            "question": p.query.query_text,
            "answer": p.answer,
        }
        for p in pairs
    ]
    return json.dumps(entries, ensure_ascii=False, indent=2)


def define_schema(
    sample: list[ExtractionPair],
    question: str,
    gateway: Gateway,
    repair_retries: int = 2,
) -> tuple[RecordSchema, list[dict]]:
    """Stage 1: ask for `<des>` + `<json>` over the sample; derive the schema.

    Field names are the union of keys across the returned records, in
    first-seen order.
    """
    if not sample:
        raise NormalizationError("schema sample must be non-empty")
    base_prompt = norm_schema_prompt(question, transcript_json(sample))
    prompt = base_prompt
    last_error = "unknown"
    for _ in range(repair_retries + 1):
        reply = gateway.complete(
            ChatRequest(role_tag="normalizer", system_prompt=NORM_SYSTEM, user_prompt=prompt)
        ).text
        try:
            description = parse_tagged(reply, "des")
            records = _parse_records(reply)
            if not records:
                raise NormalizationError("stage-1 reply contains no records")
        except NormalizationError as exc:
            last_error = str(exc)
            logger.warning("schema definition reply unusable: %s", exc)
            prompt = base_prompt + REPAIR_INSTRUCTION.format(reason=last_error)
            continue
        names: list[str] = []
        for record in records:
            for key in record:
                if key not in names:
                    names.append(key)
        return RecordSchema(description=description, field_names=tuple(names)), records
    raise NormalizationError(f"schema definition failed after retries: {last_error}")


def normalize_batch(
    batch: list[ExtractionPair],
    schema: RecordSchema,
    exemplar: list[dict],
    gateway: Gateway,
    repair_retries: int = 2,
) -> list[dict]:
    """Stage 2: convert one batch under the fixed schema.

    Unknown keys are dropped with a warning; missing keys are filled with
    null. Values are canonicalized (numeric strings become numbers).
    """
    exemplar_json = json.dumps(exemplar, ensure_ascii=False, indent=2)
    base_prompt = norm_continuation_prompt(exemplar_json, transcript_json(batch))
    prompt = base_prompt
    last_error = "unknown"
    for _ in range(repair_retries + 1):
        reply = gateway.complete(
            ChatRequest(role_tag="normalizer", system_prompt=NORM_SYSTEM, user_prompt=prompt)
        ).text
        try:
            records = _parse_records(reply)
        except NormalizationError as exc:
            last_error = str(exc)
            logger.warning("batch reply unusable: %s", exc)
            prompt = base_prompt + REPAIR_INSTRUCTION.format(reason=last_error)
            continue
        return [_conform(record, schema) for record in records]
    raise NormalizationError(f"batch normalization failed after retries: {last_error}")


def _conform(record: dict, schema: RecordSchema) -> dict:
    unknown = [k for k in record if k not in schema.field_names]
    if unknown:
        logger.warning("dropping unknown record keys %s", unknown)
    return {name: record.get(name) for name in schema.field_names}


def normalize_all(
    pairs: list[ExtractionPair],
    question: str,
    cfg: NormalizeConfig,
    gateway: Gateway,
) -> RecordSet:
    """Run the full batch-iterative protocol over all pairs.

    The first ``sample_size`` pairs seed schema definition; every pair is
    then normalized in ceil(n / batch_size) sequential batches. Failed
    batches drop their pairs (recorded, never fatal); schema definition
    failure is fatal.
    """
    if not pairs:
        raise NormalizationError("no pairs to normalize")
    sample = pairs[: cfg.sample_size]
    schema, exemplar = define_schema(sample, question, gateway, cfg.repair_retries)

    batch_count = math.ceil(len(pairs) / cfg.batch_size)
    records: list[dict] = []
    provenance: list[list[PairKey]] = []
    dropped: list[PairKey] = []
    warnings: list[str] = []
    for k in range(batch_count):
        batch = pairs[k * cfg.batch_size : (k + 1) * cfg.batch_size]
        keys: list[PairKey] = [(p.query.doc_id, p.query.template_index) for p in batch]
        try:
            batch_records = normalize_batch(batch, schema, exemplar, gateway, cfg.repair_retries)
        except NormalizationError as exc:
            dropped.extend(keys)
            warnings.append(f"batch {k} failed ({len(keys)} pairs dropped): {exc}")
            logger.warning("batch %d failed: %s", k, exc)
            continue
        if len(batch_records) == len(batch):
            provenance.extend([[key] for key in keys])
        else:
            # Merge or split happened; attribute every record to the whole batch.
            warnings.append(
                f"batch {k} returned {len(batch_records)} records for {len(batch)} pairs; "
                "coarse provenance recorded"
            )
            provenance.extend([list(keys) for _ in batch_records])
        records.extend(batch_records)
    return RecordSet(
        schema=schema, records=records, provenance=provenance, dropped=dropped, warnings=warnings
    )
