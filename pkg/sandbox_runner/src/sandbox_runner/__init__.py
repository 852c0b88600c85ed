"""Isolated execution worker for generated analysis programs."""

from .worker import (
    DATA_PATH_ENV,
    PROTOCOL_ERROR_EXIT,
    TIMEOUT_EXIT,
    Reply,
    execute,
    parse_request,
    serve_once,
)

__version__ = "0.1.0"

__all__ = [
    "DATA_PATH_ENV",
    "PROTOCOL_ERROR_EXIT",
    "TIMEOUT_EXIT",
    "Reply",
    "execute",
    "parse_request",
    "serve_once",
]
