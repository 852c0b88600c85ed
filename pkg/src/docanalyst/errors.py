"""Exception types shared across the pipeline.

Every error raised by docanalyst derives from DocAnalystError so callers can
catch pipeline failures without swallowing programming errors.
"""


class DocAnalystError(Exception):
    """Base class for all docanalyst errors."""


class CorpusError(DocAnalystError):
    """Manifest, schema, or document invariant violation."""


class ConfigError(DocAnalystError):
    """Invalid run configuration or CLI arguments."""


class TransportError(DocAnalystError):
    """Retryable provider failure (timeouts, resets, 429, 5xx)."""

    def __init__(self, message: str, role_tag: str = ""):
        super().__init__(message)
        self.role_tag = role_tag


class ProtocolError(DocAnalystError):
    """Non-retryable provider failure (bad status, malformed payload)."""

    def __init__(self, message: str, role_tag: str = ""):
        super().__init__(message)
        self.role_tag = role_tag


class PlanningError(DocAnalystError):
    """Planner reply could not be parsed after repair retries."""

    def __init__(self, message: str, raw_reply: str = ""):
        super().__init__(message)
        self.raw_reply = raw_reply


class PlanParseError(DocAnalystError):
    """A single plan reply failed validation (retried before PlanningError)."""


class ExtractionError(DocAnalystError):
    """Per-pair extraction failure, tagged with its source."""

    def __init__(self, message: str, doc_id: str = "", template_index: int = -1):
        super().__init__(message)
        self.doc_id = doc_id
        self.template_index = template_index


class NormalizationError(DocAnalystError):
    """Norm agent reply unusable after repair retries."""


class AnalysisError(DocAnalystError):
    """Code generation or execution plumbing failure."""


class OracleError(DocAnalystError):
    """The deterministic oracle cannot answer unambiguously."""


class SandboxError(DocAnalystError):
    """Sandbox runner unavailable or protocol violation."""


class GenerationError(DocAnalystError):
    """Benchmark generation cannot satisfy its constraints."""


class PhaseError(DocAnalystError):
    """A workflow phase failed fatally; the run aborts here."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"phase {phase}: {message}")
        self.phase = phase


class EvalError(DocAnalystError):
    """Evaluation could not be completed."""
