"""Exception hierarchy shared by every ckn module.

All library errors derive from :class:`CKNError`; the CLI maps them to exit
status 1 and anything else to exit status 2.
"""

from __future__ import annotations


class CKNError(Exception):
    """Base class for user/input errors raised by ckn."""


# graph store
class DuplicateId(CKNError):
    pass


class InvalidNode(CKNError):
    pass


class NotFound(CKNError):
    pass


class MissingEndpoint(CKNError):
    pass


class KindViolation(CKNError):
    pass


class CycleViolation(CKNError):
    pass


class CorruptSnapshot(CKNError):
    pass


class IoError(CKNError):
    pass


# provenance / queries
class WrongKind(CKNError):
    pass


class InvalidRecord(CKNError):
    pass


class InvalidQuery(CKNError):
    pass


# ingest
class InvalidSpec(CKNError):
    pass


class DuplicateCampaign(CKNError):
    pass


class EmptyParameterList(InvalidSpec):
    pass


class UnknownSweep(CKNError):
    pass


class MalformedLog(CKNError):
    pass


class ParamMismatch(CKNError):
    pass


# signatures
class UnknownSchema(CKNError):
    pass


class MissingFeature(CKNError):
    def __init__(self, name: str, instance: str | None = None):
        self.name = name
        self.instance = instance
        where = f" on {instance}" if instance else ""
        super().__init__(f"missing feature {name!r}{where}")


class NonNumericFeature(CKNError):
    def __init__(self, name: str, instance: str | None = None):
        self.name = name
        self.instance = instance
        where = f" on {instance}" if instance else ""
        super().__init__(f"feature {name!r} is not numeric{where}")


class SchemaMismatch(CKNError):
    pass


class NormMismatch(CKNError):
    pass


class ZeroVector(CKNError):
    pass


class EmptyInput(CKNError):
    pass


class NoSignatures(CKNError):
    pass


# gray-scott harness
class UnstableParameters(CKNError):
    """dt exceeds the explicit-Euler diffusion stability bound."""


class InstabilityDetected(CKNError):
    """The simulated state became non-finite."""
