from __future__ import annotations


class FunnelError(Exception):
    """Base class; ``code`` is a stable machine-readable error name."""

    code = "FUNNEL_ERROR"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.context = context


class DimensionError(FunnelError):
    code = "DIMENSION_ERROR"


class InsufficientText(FunnelError):
    code = "INSUFFICIENT_TEXT"


class InputError(FunnelError):
    code = "INPUT_ERROR"


class DuplicateEntry(FunnelError):
    code = "DUPLICATE_ENTRY"


class EmptyGazetteer(FunnelError):
    code = "EMPTY_GAZETTEER"


class ClassMissing(FunnelError):
    code = "CLASS_MISSING"


class BadRatio(FunnelError):
    code = "BAD_RATIO"


class SchemaError(FunnelError):
    code = "SCHEMA_ERROR"


class DigestMalformed(SchemaError):
    code = "DIGEST_MALFORMED"


class VersionOrder(FunnelError):
    code = "VERSION_ORDER"


class VersionMismatch(FunnelError):
    code = "VERSION_MISMATCH"


class SerializationNoncanonical(FunnelError):
    code = "SERIALIZATION_NONCANONICAL"


class ChainInvalid(FunnelError):
    code = "CHAIN_INVALID"


class ReplayMismatch(FunnelError):
    code = "MISMATCH"

    def __init__(self, seq: int, message: str = ""):
        super().__init__(message or f"ledger diverges at seq {seq}", seq=seq)
        self.seq = seq
