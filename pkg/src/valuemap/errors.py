"""Exception hierarchy shared across pipeline stages.

CLI exit codes hang off the three base classes: ``DataError`` -> 1,
``IOFailure`` -> 2, ``BackendError`` -> 3.
"""

from __future__ import annotations


class ValuemapError(Exception):
    exit_code = 1


class DataError(ValuemapError):
    """Input data violates a documented contract."""

    exit_code = 1


class IOFailure(ValuemapError):
    exit_code = 2


class BackendError(ValuemapError):
    exit_code = 3


# catalog


class MissingFile(IOFailure):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")
        self.path = path


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class ValidationError(DataError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class UnknownEntity(DataError, KeyError):
    def __init__(self, name: str):
        DataError.__init__(self, f"unknown entity: {name!r}")
        self.name = name

    __str__ = DataError.__str__


# gateway


class TransportError(BackendError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(TransportError):
    """Raised by backends on HTTP 429; the gateway retries it with backoff."""


class FixtureMiss(BackendError):
    def __init__(self, job_id: str):
        super().__init__(f"job {job_id} not present in replay fixture")
        self.job_id = job_id


class BatchAborted(BackendError):
    def __init__(self, completed: int, cause: Exception):
        super().__init__(f"batch aborted after {completed} completed jobs: {cause}")
        self.completed = completed
        self.cause = cause


# index engine


class DegenerateScale(DataError):
    pass


class OutOfBounds(DataError):
    pass


class MissingLoading(DataError):
    pass


class IncompleteResponses(DataError):
    def __init__(self, entity: str, missing: list[str]):
        super().__init__(f"{entity}: missing responses for {', '.join(missing)}")
        self.entity = entity
        self.missing = list(missing)


# compare engine


class EmptyDataset(DataError):
    pass


class NoOverlap(DataError):
    pass


class InsufficientRegions(DataError):
    pass


# viz


class GeometryLoadError(IOFailure):
    pass


# runner


class UpstreamMissing(IOFailure):
    pass


class SchemaMismatch(DataError):
    pass
