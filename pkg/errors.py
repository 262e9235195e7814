"""Exception hierarchy shared by the library modules.

Library code raises these; only ``vsum.py`` turns them into log lines and an
exit status.
"""
from __future__ import annotations

from typing import Optional


class VsumError(Exception):
    pass


class DatasetError(VsumError):
    """A dataset bundle failed validation.

    ``video_id`` and ``field`` say where; either may be None for
    manifest-level problems.
    """

    def __init__(self, message: str, video_id: Optional[str] = None, field: Optional[str] = None):
        self.video_id = video_id
        self.field = field
        where = []
        if video_id is not None:
            where.append(f"video={video_id}")
        if field is not None:
            where.append(f"field={field}")
        prefix = f"[{' '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class MissingFileError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class ScoreDomainError(DatasetError):
    pass


class DuplicateVideoError(DatasetError):
    pass


class ManifestError(DatasetError):
    pass


class ConfigError(VsumError):
    pass


class TrainingError(VsumError):
    pass


class CheckpointError(VsumError):
    pass


class EvaluationError(VsumError):
    pass
