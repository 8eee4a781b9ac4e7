"""
Exception hierarchy shared by every service.

Each error carries the process exit code the CLI returns for it.
"""
from pathlib import Path
from typing import List, Optional, Sequence


class KgProbeError(Exception):
    exit_code = 2


class UsageError(KgProbeError):
    exit_code = 1


class DataError(KgProbeError):
    exit_code = 2


class InvalidIriError(DataError, ValueError):
    pass


class SnapshotFormatError(DataError):
    def __init__(self, path: Path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class OntologyError(DataError):
    pass


class UndeclaredClassError(OntologyError):
    pass


class HallucinationError(DataError):
    pass


class PromptRenderError(DataError):
    pass


class LabelFormatError(DataError):
    pass


class TaskValidationError(DataError):
    """Raised when a task file holds records that fail validation."""

    def __init__(self, rejections: Sequence["object"]):
        self.rejections = list(rejections)
        lines = [str(rejection) for rejection in self.rejections]
        super().__init__(f"{len(lines)} task record(s) rejected:\n" + "\n".join(lines))


class EndpointError(KgProbeError):
    exit_code = 3

    def __init__(self, message: str, status_code: Optional[int] = None):
        self.status_code = status_code
        super().__init__(message)


class ReplayMissError(EndpointError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"Replay-only mode: no cached response for key {key}")


class BatchError(KgProbeError):
    exit_code = 3

    def __init__(self, failed_indices: List[int], messages: List[str]):
        self.failed_indices = failed_indices
        detail = "; ".join(f"#{index}: {message}" for index, message in zip(failed_indices, messages))
        super().__init__(f"{len(failed_indices)} request(s) failed: {detail}")
