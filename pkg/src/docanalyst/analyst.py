"""Programmatic analysis: code generation, sandboxed execution, synthesis.

The code agent never sees the full record file, only a constant-size demo
sample, the schema, and the file path. Execution happens through a sandbox
runner (the built-in stub or an external worker); one automatic repair round
re-prompts with stderr when the program exits nonzero.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AnalysisError
from .gateway import ChatRequest, Gateway
from .normalizer import RecordSchema, RecordSet
from .prompts import CODE_SYSTEM, FINAL_SYSTEM, REPAIR_INSTRUCTION, code_prompt, final_prompt
from .sandbox import SandboxReply, SandboxRequest

logger = logging.getLogger(__name__)

DEMO_SIZE = 3
OUTPUT_TRUNCATION = 64 * 1024  # chars of stdout/stderr shown to the synthesizer

_EXECUTE_RE = re.compile(r"<execute>(.*?)</execute>", re.DOTALL)


@dataclass
class AnalysisProgram:
    code: str
    source_reply: str
    data_path: str


@dataclass(frozen=True)
class ExecutionResult:
    stdout: str
    stderr: str
    exit_code: int
    wall_ms: int
    timed_out: bool

    @classmethod
    def from_reply(cls, reply: SandboxReply) -> "ExecutionResult":
        return cls(
            stdout=reply.stdout,
            stderr=reply.stderr,
            exit_code=reply.exit_code,
            wall_ms=reply.wall_ms,
            timed_out=reply.timed_out,
        )


@dataclass
class FinalAnswer:
    text: str
    question: str
    run_id: str
    flags: list[str] = field(default_factory=list)


def write_records_file(recordset: RecordSet, run_dir: str | Path) -> Path:
    """Persist the flat records as the file handed to the analysis program."""
    if not recordset.records:
        raise AnalysisError("record set is empty; nothing to analyze")
    path = Path(run_dir) / "records.json"
    path.write_text(
        json.dumps(recordset.records, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return path


def load_records_file(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def demo_records(recordset: RecordSet, size: int = DEMO_SIZE) -> list[dict]:
    """Deterministic demo sample: the first records, never the whole set."""
    return recordset.records[:size]


def generate_program(
    question: str,
    demo: list[dict],
    schema: RecordSchema,
    data_path: str | Path,
    gateway: Gateway,
    repair_retries: int = 2,
    error_context: str = "",
) -> AnalysisProgram:
    """Ask the coder role for a program; the last <execute> block wins."""
    demo_json = json.dumps(demo, ensure_ascii=False, indent=2)
    schema_text = f"{schema.description}\nFields: {', '.join(schema.field_names)}"
    base_prompt = code_prompt(question, demo_json, schema_text, str(data_path))
    if error_context:
        base_prompt += (
            "\n\nA previous attempt failed with this error output; fix the problem:\n"
            + error_context
        )
    prompt = base_prompt
    reply = ""
    for _ in range(repair_retries + 1):
        reply = gateway.complete(
            ChatRequest(role_tag="coder", system_prompt=CODE_SYSTEM, user_prompt=prompt)
        ).text
        blocks = _EXECUTE_RE.findall(reply)
        if blocks:
            code = blocks[-1].strip()
            if code:
                return AnalysisProgram(code=code, source_reply=reply, data_path=str(data_path))
        logger.warning("coder reply missing <execute> block; retrying")
        prompt = base_prompt + REPAIR_INSTRUCTION.format(reason="no <execute> block found")
    raise AnalysisError("coder reply contained no <execute> block after retries")


def run_program(
    program: AnalysisProgram, runner, wall_ms: int = 30_000, memory_mb: int = 512
) -> ExecutionResult:
    """Execute the program against its data file under the given limits."""
    reply = runner.execute(
        SandboxRequest(
            code=program.code,
            data_path=program.data_path,
            wall_ms=wall_ms,
            memory_mb=memory_mb,
        )
    )
    return ExecutionResult.from_reply(reply)


def generate_and_run(
    question: str,
    demo: list[dict],
    schema: RecordSchema,
    data_path: str | Path,
    gateway: Gateway,
    runner,
    wall_ms: int = 30_000,
    memory_mb: int = 512,
    repair_retries: int = 2,
) -> tuple[AnalysisProgram, ExecutionResult, AnalysisProgram | None]:
    """Generate, execute, and apply at most one repair round on nonzero exit.

    Returns (final program, final result, first program when a repair round
    replaced it).
    """
    program = generate_program(question, demo, schema, data_path, gateway, repair_retries)
    result = run_program(program, runner, wall_ms, memory_mb)
    if result.exit_code == 0:
        return program, result, None
    logger.warning("analysis program failed (exit %d); one repair round", result.exit_code)
    first = program
    program = generate_program(
        question, demo, schema, data_path, gateway, repair_retries,
        error_context=result.stderr[-4000:],
    )
    result = run_program(program, runner, wall_ms, memory_mb)
    return program, result, first


def synthesize(
    question: str,
    exec_result: ExecutionResult,
    demo: list[dict],
    gateway: Gateway,
    code: str = "",
    run_id: str = "",
) -> FinalAnswer:
    """Produce the final answer from the execution outputs."""
    flags: list[str] = []
    if exec_result.exit_code != 0:
        flags.append("degraded: analysis execution failed")
    elif not exec_result.stdout.strip():
        flags.append("empty analysis output")
    demo_json = json.dumps(demo, ensure_ascii=False, indent=2)
    prompt = final_prompt(
        question,
        demo_json,
        code,
        exec_result.stdout[:OUTPUT_TRUNCATION],
        exec_result.stderr[:OUTPUT_TRUNCATION],
        exec_result.exit_code,
    )
    reply = gateway.complete(
        ChatRequest(role_tag="synthesizer", system_prompt=FINAL_SYSTEM, user_prompt=prompt)
    ).text
    if not reply.strip():
        raise AnalysisError("synthesizer returned an empty answer")
    return FinalAnswer(text=reply.strip(), question=question, run_id=run_id, flags=flags)
