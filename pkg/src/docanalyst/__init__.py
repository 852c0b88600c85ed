"""Analytical question answering over metadata-indexed document collections.

The package wires a five-phase agent workflow (plan, per-document
extraction, batch normalization, programmatic analysis, synthesis), a
flat-RAG baseline, a three-metric evaluation protocol, and a
distant-supervision benchmark generator with deterministic offline
providers.
"""

from .corpus import (
    Chunk,
    Corpus,
    DocumentRecord,
    MetadataField,
    MetadataSchema,
    SidecarFact,
    chunk_document,
    filter_by_restriction,
    load_manifest,
    save_manifest,
    schema_description,
)
from .errors import DocAnalystError
from .evaluator import AlignedRow, BenchmarkInstance, MetricReport, ProcessScore
from .extractor import ExtractionPair, RetrievalConfig, extract_all, flat_rag
from .gateway import ChatRequest, ChatResponse, Gateway, ProviderConfig, scripted_provider
from .normalizer import NormalizeConfig, RecordSchema, RecordSet, normalize_all
from .orchestrator import RunConfig, run_baseline, run_eval, run_workflow
from .planner import InstantiatedQuery, Plan, SubQueryTemplate, fill_template, parse_plan
from .sandbox import LocalSandboxRunner, SandboxReply, SandboxRequest, WorkerSandboxRunner

__version__ = "0.1.0"

__all__ = [
    "AlignedRow",
    "BenchmarkInstance",
    "ChatRequest",
    "ChatResponse",
    "Chunk",
    "Corpus",
    "DocAnalystError",
    "DocumentRecord",
    "ExtractionPair",
    "Gateway",
    "InstantiatedQuery",
    "LocalSandboxRunner",
    "MetadataField",
    "MetadataSchema",
    "MetricReport",
    "NormalizeConfig",
    "Plan",
    "ProcessScore",
    "ProviderConfig",
    "RecordSchema",
    "RecordSet",
    "RetrievalConfig",
    "RunConfig",
    "SandboxReply",
    "SandboxRequest",
    "SidecarFact",
    "SubQueryTemplate",
    "WorkerSandboxRunner",
    "chunk_document",
    "extract_all",
    "fill_template",
    "filter_by_restriction",
    "flat_rag",
    "load_manifest",
    "normalize_all",
    "parse_plan",
    "run_baseline",
    "run_eval",
    "run_workflow",
    "save_manifest",
    "schema_description",
    "scripted_provider",
]
