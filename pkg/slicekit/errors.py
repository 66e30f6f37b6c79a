"""Error types raised by slicekit operations.

Every domain error derives from SliceKitError so the CLI can map it to
exit code 1 and print the class name verbatim.
"""
from typing import Any


class SliceKitError(Exception):
    """Base class for domain errors."""

    def __init__(self, message: str = "", **fields: Any):
        super().__init__(message)
        self.message = message
        self.fields = fields
        for key, value in fields.items():
            setattr(self, key, value)

    @property
    def name(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        return self.message or self.name


# descriptor
class ParseError(SliceKitError):
    """Raised for malformed documents (kind="syntax") or violated invariants (kind="invariant")."""

    def __init__(self, kind: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{kind}: {message}{where}", kind=kind, detail=message, line=line)


class BudgetError(SliceKitError):
    pass


# nfvi
class DuplicateVim(SliceKitError):
    pass


class UnknownVim(SliceKitError):
    pass


class InvalidCapacity(SliceKitError, ValueError):
    pass


class QuotaExceeded(SliceKitError):
    def __init__(self, resource: str, requested: int, available: int, vim: str = ""):
        super().__init__(
            f"{resource}: requested {requested}, available {available}" + (f" on {vim}" if vim else ""),
            resource=resource,
            requested=requested,
            available=available,
            vim=vim,
        )


class UnknownVm(SliceKitError):
    pass


class AlreadyReleased(SliceKitError):
    pass


# orchestrator
class ValidationFailed(SliceKitError):
    def __init__(self, report: Any):
        super().__init__(f"{len(report.findings)} finding(s)", report=report)


class NoFeasiblePlacement(SliceKitError):
    def __init__(self, segment: str, reason: str = ""):
        super().__init__(f"{segment}" + (f": {reason}" if reason else ""), segment=segment)


class UnknownPackage(SliceKitError):
    pass


class UnknownNsd(SliceKitError):
    pass


class UnknownVnfd(SliceKitError):
    pass


class UnknownNsid(SliceKitError):
    pass


class UnknownSlice(SliceKitError):
    pass


class ChainError(SliceKitError):
    pass


class InvalidState(SliceKitError):
    pass


class TenantAttached(SliceKitError):
    pass


# tenancy
class Duplicate(SliceKitError):
    pass


class UnknownParent(SliceKitError):
    pass


class ShareExhausted(SliceKitError):
    def __init__(self, available: Any):
        super().__init__(f"available share {float(available)}", available=available)


class UnknownPath(SliceKitError):
    pass


class SliceNotServing(SliceKitError):
    pass


class AlreadyAttached(SliceKitError):
    pass


class UnknownUe(SliceKitError):
    pass


# fabric
class AlreadyRegistered(SliceKitError):
    pass


class DisconnectedGraph(SliceKitError):
    pass


# telemetry
class OutOfRange(SliceKitError):
    pass


class NonMonotonicTimestamp(SliceKitError):
    pass


class BadRange(SliceKitError):
    pass


class EmptySeries(SliceKitError):
    pass


class ScenarioError(SliceKitError):
    pass


# registry
class UnsupportedVersion(SliceKitError):
    pass


class CorruptSnapshot(SliceKitError):
    pass
