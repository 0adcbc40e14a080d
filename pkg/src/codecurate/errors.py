"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and maps onto one of the
CLI exit statuses: configuration problems exit 1, bad data exits 2 and failing
external tools exit 3.
"""

from __future__ import annotations


class CurateError(Exception):
    code = "error"
    exit_status = 2

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ConfigError(CurateError):
    code = "config_error"
    exit_status = 1


class DataError(CurateError):
    code = "data_error"
    exit_status = 2


class RecordError(DataError):
    """A malformed or invalid line in a record file."""

    code = "record_malformed"

    def __init__(self, message: str, line: int | None = None, offset: int | None = None, code: str | None = None):
        where = ""
        if line is not None:
            where = f"line {line}"
            if offset is not None:
                where += f" (byte offset {offset})"
            where += ": "
        super().__init__(where + message, code)
        self.line = line
        self.offset = offset


class IssueFormatError(DataError):
    code = "issue_format"


class SpanConflictError(DataError):
    code = "span_conflict"


class FimError(DataError):
    code = "fim_malformed"


class ExternalToolError(CurateError):
    code = "external_tool_error"
    exit_status = 3


class ScannerUnavailable(ExternalToolError):
    code = "scanner_unavailable"


class TokenizerUnavailable(ExternalToolError):
    code = "tokenizer_unavailable"
