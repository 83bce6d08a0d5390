#!/usr/bin/env python3
"""
Exception hierarchy for the FANet post-processing tools
Each error class carries the CLI exit code it maps to
"""

from typing import Optional


class FanetError(Exception):
    """Base class for every error raised by this project"""

    exit_code = 1


class InvalidGeometryError(FanetError, ValueError):
    """Box with negative extent or negative width/height"""


class PreconditionError(FanetError, ValueError):
    """Operation called with inputs that break its contract"""


class ResourceError(FanetError, LookupError):
    """A required feature map (frame, pyramid level) is missing"""


class ConfigError(FanetError):
    """Bad configuration file, environment value or flag"""

    exit_code = 2


class IngestionError(FanetError):
    """Malformed JSON-Lines record; names the file and line"""

    exit_code = 3

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ''
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class InvariantViolation(FanetError):
    """Internal invariant broken (should never happen)"""

    exit_code = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code"""
    if isinstance(exc, FanetError):
        return exc.exit_code
    return 1
