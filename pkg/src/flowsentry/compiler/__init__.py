from .artifact import (
    ArtifactError,
    BadMagicError,
    ChecksumMismatchError,
    CompiledArtifact,
    InvalidProgramError,
    MalformedArtifactError,
    TruncatedArtifactError,
    UnsupportedVersionError,
    compile_ir,
    decompile,
    load_artifact,
)
from .dsl import ValidationIssue, ValidationReport, parse_dsl, validate_program
from .grammar import GrammarError, parse_condition, parse_match

__all__ = [
    "ArtifactError",
    "BadMagicError",
    "ChecksumMismatchError",
    "CompiledArtifact",
    "InvalidProgramError",
    "MalformedArtifactError",
    "TruncatedArtifactError",
    "UnsupportedVersionError",
    "compile_ir",
    "decompile",
    "load_artifact",
    "ValidationIssue",
    "ValidationReport",
    "parse_dsl",
    "validate_program",
    "GrammarError",
    "parse_condition",
    "parse_match",
]
