"""Execution substrate for generated analysis programs.

Two interchangeable runners satisfy the same request/reply contract:

* LocalSandboxRunner is the built-in stub: it spawns a fresh interpreter with a
  wall-clock timeout, an address-space limit, socket creation blocked, and a
  fresh temp working directory. The data file is read-only for the duration.
* WorkerSandboxRunner delegates to an external worker process over the
  line-based JSON protocol (one request on stdin, one reply on stdout).

Reply exit-code sentinels: 124 = wall timeout, 125 = protocol error.
"""

from __future__ import annotations

import json
import logging
import os
import stat
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import SandboxError

logger = logging.getLogger(__name__)

TIMEOUT_EXIT = 124
PROTOCOL_ERROR_EXIT = 125
DATA_PATH_ENV = "MUDA_DATA_PATH"

# Runs inside the fresh interpreter before the analysis program: resource
# limits, network denial, and a file-access guard (only the data file and
# the fresh working directory are reachable through open()) are applied
# in-process, then the program runs as __main__ with the data path as its
# only argument.
_BOOTSTRAP = """\
import builtins, os, resource, runpy, socket, sys

def _deny(*args, **kwargs):
    raise OSError("network access is disabled in the analysis sandbox")

program, data_path, memory_mb = sys.argv[1], sys.argv[2], int(sys.argv[3])
limit = memory_mb * 1024 * 1024
resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
socket.socket = _deny
socket.create_connection = _deny
socket.socketpair = _deny

_data_real = os.path.realpath(data_path)
_cwd_real = os.path.realpath(os.getcwd())
_real_open = builtins.open

def _guarded_open(file, mode="r", *args, **kwargs):
    if isinstance(file, int):
        return _real_open(file, mode, *args, **kwargs)
    if isinstance(file, bytes):
        file = file.decode()
    path = os.path.realpath(os.fspath(file))
    in_cwd = path == _cwd_real or path.startswith(_cwd_real + os.sep)
    if path == _data_real:
        if any(flag in mode for flag in "wax+"):
            raise PermissionError("the data file is read-only in the analysis sandbox")
    elif not in_cwd:
        raise PermissionError(
            "file access is restricted to the data file and the working directory: %r" % file
        )
    return _real_open(file, mode, *args, **kwargs)

builtins.open = _guarded_open
sys.argv = [program, data_path]
runpy.run_path(program, run_name="__main__")
"""


@dataclass(frozen=True)
class SandboxRequest:
    code: str
    data_path: str
    wall_ms: int = 30_000
    memory_mb: int = 512


@dataclass(frozen=True)
class SandboxReply:
    stdout: str
    stderr: str
    exit_code: int
    wall_ms: int
    timed_out: bool


def _protocol_error(reason: str) -> SandboxReply:
    return SandboxReply(stdout="", stderr=reason, exit_code=PROTOCOL_ERROR_EXIT, wall_ms=0, timed_out=False)


def validate_request(request: SandboxRequest, allowed_root: Path) -> str | None:
    """Reason the request violates the protocol, or None when well-formed."""
    if not isinstance(request.code, str) or not request.code.strip():
        return "empty code"
    if not isinstance(request.wall_ms, int) or request.wall_ms <= 0:
        return "wall_ms must be a positive integer"
    if not isinstance(request.memory_mb, int) or request.memory_mb <= 0:
        return "memory_mb must be a positive integer"
    try:
        data = Path(request.data_path).resolve()
        root = allowed_root.resolve()
    except OSError as exc:  # pragma: no cover - pathological paths
        return f"unresolvable data_path: {exc}"
    if root not in data.parents and data != root:
        return f"data_path {data} is outside the run directory {root}"
    return None


class LocalSandboxRunner:
    """Built-in isolated execution of one program against one data file."""

    def __init__(self, allowed_root: str | Path):
        self.allowed_root = Path(allowed_root)

    def execute(self, request: SandboxRequest) -> SandboxReply:
        reason = validate_request(request, self.allowed_root)
        if reason is not None:
            return _protocol_error(reason)

        data_path = Path(request.data_path).resolve()
        with tempfile.TemporaryDirectory(prefix="analysis-") as workdir:
            program = Path(workdir) / "program.py"
            program.write_text(request.code, encoding="utf-8")
            bootstrap = Path(workdir) / "_bootstrap.py"
            bootstrap.write_text(_BOOTSTRAP, encoding="utf-8")

            env = {
                "PATH": os.environ.get("PATH", ""),
                DATA_PATH_ENV: str(data_path),
                "PYTHONDONTWRITEBYTECODE": "1",
                "PYTHONIOENCODING": "utf-8",
            }
            original_mode = data_path.stat().st_mode
            os.chmod(data_path, stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)
            start = time.monotonic()
            timed_out = False
            try:
                proc = subprocess.Popen(
                    [sys.executable, str(bootstrap), str(program), str(data_path), str(request.memory_mb)],
                    cwd=workdir,
                    env=env,
                    stdin=subprocess.DEVNULL,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                )
                try:
                    out, err = proc.communicate(timeout=request.wall_ms / 1000.0)
                    exit_code = proc.returncode
                except subprocess.TimeoutExpired:
                    proc.kill()
                    out, err = proc.communicate()
                    timed_out = True
                    exit_code = TIMEOUT_EXIT
            finally:
                os.chmod(data_path, original_mode)
            wall_ms = int((time.monotonic() - start) * 1000)
            return SandboxReply(
                stdout=out.decode("utf-8", errors="replace"),
                stderr=err.decode("utf-8", errors="replace"),
                exit_code=exit_code,
                wall_ms=wall_ms,
                timed_out=timed_out,
            )


class WorkerSandboxRunner:
    """Client for an external sandbox worker speaking the stdio protocol.

    The worker command is invoked once per request with ``--run-dir`` set to
    the allowed root; the request JSON goes to its stdin and exactly one
    reply line is expected on its stdout. Worker death is reported as a
    failed execution, not an exception.
    """

    def __init__(self, command: list[str], allowed_root: str | Path):
        if not command:
            raise SandboxError("worker command must be non-empty")
        self.command = list(command)
        self.allowed_root = Path(allowed_root)

    def execute(self, request: SandboxRequest) -> SandboxReply:
        argv = self.command + ["--run-dir", str(self.allowed_root)]
        payload = json.dumps(asdict(request), ensure_ascii=False) + "\n"
        # Generous outer guard: the worker enforces wall_ms itself.
        outer_timeout = request.wall_ms / 1000.0 + 30.0
        try:
            proc = subprocess.run(
                argv,
                input=payload.encode("utf-8"),
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                timeout=outer_timeout,
            )
        except FileNotFoundError as exc:
            raise SandboxError(f"sandbox worker unavailable: {exc}") from exc
        except subprocess.TimeoutExpired:
            return SandboxReply(
                stdout="", stderr="sandbox worker hung past its wall budget",
                exit_code=1, wall_ms=int(outer_timeout * 1000), timed_out=True,
            )
        reply_line = proc.stdout.decode("utf-8", errors="replace").strip().splitlines()
        if not reply_line:
            return SandboxReply(
                stdout="",
                stderr="sandbox worker died without a reply: " + proc.stderr.decode("utf-8", errors="replace")[:2000],
                exit_code=proc.returncode or 1,
                wall_ms=0,
                timed_out=False,
            )
        try:
            data = json.loads(reply_line[-1])
            return SandboxReply(
                stdout=str(data["stdout"]),
                stderr=str(data["stderr"]),
                exit_code=int(data["exit_code"]),
                wall_ms=int(data["wall_ms"]),
                timed_out=bool(data["timed_out"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return SandboxReply(
                stdout="", stderr=f"malformed worker reply: {exc}",
                exit_code=1, wall_ms=0, timed_out=False,
            )
