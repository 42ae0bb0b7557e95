"""Exception hierarchy.

Every error carries a short ``category`` string. The CLI prints it as the
first token of its one-line error message so scripts can dispatch on it.
"""

from __future__ import annotations


class TrackingError(Exception):
    category = "TrackingError"


class OutOfBounds(TrackingError):
    category = "OutOfBounds"


class RoleMismatch(TrackingError):
    category = "RoleMismatch"


class ExtentMismatch(TrackingError):
    category = "ExtentMismatch"


class MissingPair(TrackingError):
    category = "MissingPair"


class UnknownBackend(TrackingError):
    category = "UnknownBackend"


class InvalidFrame(TrackingError):
    category = "InvalidFrame"


class InvalidFrames(InvalidFrame):
    category = "InvalidFrames"


class MissingState(TrackingError):
    category = "MissingState"


class ShapeMismatch(TrackingError):
    category = "ShapeMismatch"


class MissingGT(TrackingError):
    category = "MissingGT"


class EmptyEvalSet(TrackingError):
    category = "EmptyEvalSet"


class ConfigError(TrackingError):
    category = "ConfigError"


class FormatError(TrackingError):
    category = "FormatError"


class BadMagic(FormatError):
    category = "BadMagic"


class TruncatedFile(FormatError):
    category = "TruncatedFile"


class MaskMismatch(FormatError):
    category = "MaskMismatch"


class ExtentOverflow(FormatError):
    category = "ExtentOverflow"
