"""Error types shared across the toolkit.

Every error raised on bad input derives from ContractError so callers
(including the command-line layer) can distinguish contract violations
from genuine bugs and emit a machine-readable record.
"""

from __future__ import annotations


class ContractError(ValueError):
    """An input violates a documented precondition."""

    def to_record(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ParseError(ContractError):
    """A file could not be parsed; carries a path and line locator."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["path"] = self.path
        rec["line"] = self.line
        return rec


class ValidationError(ContractError):
    """A parsed bundle violates the data model; reports every violation."""

    def __init__(self, violations: list):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} validation error(s): {lines}")

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["violations"] = [v.to_record() for v in self.violations]
        return rec


class BuildError(ContractError):
    """A construction step could not satisfy its output contract."""
