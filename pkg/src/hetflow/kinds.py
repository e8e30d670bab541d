"""Enumerations shared by every layer."""
from __future__ import annotations

from enum import Enum

from .errors import ConfigurationError


class TaskKind(str, Enum):
    """T1 tiles an image on a CPU core; T2 counts objects in the tiles on a GPU."""

    TILING = "t1"
    COUNTING = "t2"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown task kind {value!r} (expected t1 or t2)") from None


class Design(str, Enum):
    D1 = "d1"
    D2 = "d2"
    D2A = "d2a"

    @classmethod
    def parse(cls, value) -> "Design":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace(".", ""))
        except ValueError:
            raise ConfigurationError(f"unknown design {value!r} (expected d1, d2 or d2a)") from None


T1 = TaskKind.TILING
T2 = TaskKind.COUNTING
