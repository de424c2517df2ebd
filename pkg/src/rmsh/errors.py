"""Exception hierarchy. Each class carries a stable machine-readable ``code``."""

from __future__ import annotations


class RMSHError(Exception):
    code = "rmsh_error"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


class ValidationError(RMSHError, ValueError):
    code = "invalid_argument"


class ShapeMismatchError(ValidationError):
    code = "shape_mismatch"


class EmptyLabelRowError(ValidationError):
    code = "empty_label_row"

    def __init__(self, row: int, source: str | None = None):
        where = f" in {source}" if source else ""
        super().__init__(f"label row {row} has no tags{where}")
        self.row = row


class FileFormatError(RMSHError):
    code = "bad_file"


class BadMagicError(FileFormatError):
    code = "bad_magic"


class TruncatedFileError(FileFormatError):
    code = "truncated_file"


class DimensionMismatchError(FileFormatError):
    code = "dimension_mismatch"


class NonFiniteError(FileFormatError, ValidationError):
    code = "non_finite"


class InvalidLabelValueError(FileFormatError, ValidationError):
    code = "invalid_label_value"


class EmptyIntervalError(RMSHError):
    code = "empty_delta_interval"


class ContractError(RMSHError, RuntimeError):
    code = "contract_violation"
