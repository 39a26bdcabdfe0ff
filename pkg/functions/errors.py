#!/usr/bin/env python3
"""
Exception types shared by the library modules and the stage processors.

Everything derives from G4DError so the CLI can catch one base class and
tag it with the stage that raised it.
"""


class G4DError(Exception):
    """Base class for all pipeline errors."""


class MalformedFile(G4DError, ValueError):
    """Bad magic, version or length in a binary file."""


class InvariantViolation(G4DError, ValueError):
    """A value breaks a domain type invariant (q, s, sigma, camera...)."""


class FrameOutOfRange(G4DError, ValueError):
    pass


class SizeMismatch(G4DError, ValueError):
    pass


class DivisionDegenerate(G4DError, ValueError):
    pass


class DimensionMismatch(G4DError, ValueError):
    pass


class EmptyInput(G4DError, ValueError):
    pass


class NoAnchorsProduced(G4DError, ValueError):
    """No neighborhood fit inside any sampled cylinder; raise n_rays."""


class EmptyAnchorSet(G4DError, ValueError):
    pass


class OracleSizeExceeded(G4DError, ValueError):
    pass


class ConfigError(G4DError, ValueError):
    pass


class NonFiniteLoss(G4DError, ArithmeticError):
    """Refinement produced NaN/Inf; `diagnostics` holds the state at failure."""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StageError(G4DError):
    """Wraps any failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
