"""Sandbox worker: one request per invocation, one reply, then exit.

Wire protocol (UTF-8, newline-terminated JSON objects):

    request:  {"code", "data_path", "wall_ms", "memory_mb"}
    reply:    {"stdout", "stderr", "exit_code", "wall_ms", "timed_out"}

Exit-code sentinels inside the reply: 124 = wall-clock timeout,
125 = protocol error (malformed request, or data_path escaping the run
directory designated at spawn time). The worker process itself exits 0
whenever it managed to write a reply.

The analysis program runs in a fresh interpreter process with a fresh
temporary working directory, an address-space limit, socket creation
blocked, and read-only access to the data file, which is exposed both as
the MUDA_DATA_PATH environment variable and as the first program argument.
"""

from __future__ import annotations

import json
import os
import stat
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

TIMEOUT_EXIT = 124
PROTOCOL_ERROR_EXIT = 125
DATA_PATH_ENV = "MUDA_DATA_PATH"

# Applied inside the fresh interpreter before the program runs: resource
# limits, network denial, and an open() guard confining file access to the
# data file (read-only) and the fresh working directory.
BOOTSTRAP = """\
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
class Reply:
    stdout: str
    stderr: str
    exit_code: int
    wall_ms: int
    timed_out: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "stdout": self.stdout,
                "stderr": self.stderr,
                "exit_code": self.exit_code,
                "wall_ms": self.wall_ms,
                "timed_out": self.timed_out,
            },
            ensure_ascii=False,
        )


def protocol_error(reason: str) -> Reply:
    return Reply(stdout="", stderr=reason, exit_code=PROTOCOL_ERROR_EXIT, wall_ms=0, timed_out=False)


def parse_request(line: str, run_dir: Path) -> tuple[dict | None, Reply | None]:
    """Validate one request line; returns (request, None) or (None, error reply)."""
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        return None, protocol_error(f"request is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        return None, protocol_error("request must be a JSON object")

    code = payload.get("code")
    data_path = payload.get("data_path")
    wall_ms = payload.get("wall_ms", 30_000)
    memory_mb = payload.get("memory_mb", 512)
    if not isinstance(code, str) or not code.strip():
        return None, protocol_error("request field 'code' must be a non-empty string")
    if not isinstance(data_path, str) or not data_path:
        return None, protocol_error("request field 'data_path' must be a path string")
    if not isinstance(wall_ms, int) or isinstance(wall_ms, bool) or wall_ms <= 0:
        return None, protocol_error("request field 'wall_ms' must be a positive integer")
    if not isinstance(memory_mb, int) or isinstance(memory_mb, bool) or memory_mb <= 0:
        return None, protocol_error("request field 'memory_mb' must be a positive integer")

    resolved = Path(data_path).resolve()
    root = run_dir.resolve()
    if root not in resolved.parents and resolved != root:
        return None, protocol_error(
            f"data_path {resolved} is outside the designated run directory {root}"
        )
    return (
        {"code": code, "data_path": str(resolved), "wall_ms": wall_ms, "memory_mb": memory_mb},
        None,
    )


def execute(request: dict) -> Reply:
    """Run the program in a fresh confined interpreter and collect outputs."""
    data_path = Path(request["data_path"])
    with tempfile.TemporaryDirectory(prefix="sandbox-run-") as workdir:
        program = Path(workdir) / "program.py"
        program.write_text(request["code"], encoding="utf-8")
        bootstrap = Path(workdir) / "_bootstrap.py"
        bootstrap.write_text(BOOTSTRAP, encoding="utf-8")

        env = {
            "PATH": os.environ.get("PATH", ""),
            DATA_PATH_ENV: str(data_path),
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
        }
        original_mode = None
        if data_path.exists():
            original_mode = data_path.stat().st_mode
            os.chmod(data_path, stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)
        start = time.monotonic()
        timed_out = False
        try:
            proc = subprocess.Popen(
                [
                    sys.executable,
                    str(bootstrap),
                    str(program),
                    str(data_path),
                    str(request["memory_mb"]),
                ],
                cwd=workdir,
                env=env,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
            try:
                out, err = proc.communicate(timeout=request["wall_ms"] / 1000.0)
                exit_code = proc.returncode
            except subprocess.TimeoutExpired:
                proc.kill()
                out, err = proc.communicate()
                timed_out = True
                exit_code = TIMEOUT_EXIT
        finally:
            if original_mode is not None:
                os.chmod(data_path, original_mode)
        return Reply(
            stdout=out.decode("utf-8", errors="replace"),
            stderr=err.decode("utf-8", errors="replace"),
            exit_code=exit_code,
            wall_ms=int((time.monotonic() - start) * 1000),
            timed_out=timed_out,
        )


def serve_once(stdin, stdout, run_dir: Path) -> int:
    """Read one request line, write one reply line, return the process exit code."""
    line = stdin.readline()
    if not line.strip():
        reply = protocol_error("no request received on standard input")
    else:
        request, error = parse_request(line, run_dir)
        reply = error if error is not None else execute(request)
    stdout.write(reply.to_json() + "\n")
    stdout.flush()
    return 0
