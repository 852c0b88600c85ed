"""Entry point: `python -m sandbox_runner --run-dir DIR` (or `sandbox-runner`)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .worker import serve_once


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sandbox-runner",
        description="Execute one analysis program per invocation over stdin/stdout JSON",
    )
    parser.add_argument(
        "--run-dir",
        required=True,
        help="directory the request's data_path must resolve inside",
    )
    args = parser.parse_args(argv)
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        parser.error(f"--run-dir {run_dir} is not a directory")
    return serve_once(sys.stdin, sys.stdout, run_dir)


if __name__ == "__main__":
    sys.exit(main())
