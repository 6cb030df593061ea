"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class CcaError(Exception):
    """Base class for every error raised by this package."""


class UsageError(CcaError):
    """Bad command-line arguments or an unknown task name."""


class ConfigError(CcaError):
    """Invalid rules file, task-knowledge file, or run configuration."""


class LexError(CcaError):
    """Source text that matches no lexer rule."""

    def __init__(self, message: str, path: str = "", line: int = 0) -> None:
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}" if path else message)


class UnsupportedSyntaxError(LexError):
    """Valid PHP that is outside the supported subset (OO code, etc.)."""


class TranslationError(CcaError):
    """Token stream that cannot be mapped to the intermediate language."""


class StructureError(CcaError):
    """Unbalanced branches or blocks discovered during flow annotation."""


class FormatError(CcaError):
    """Corrupt or truncated on-disk container (index, keys, query, report)."""


class IntegrityError(CcaError):
    """Authenticated decryption failed: wrong key or tampered ciphertext."""


class AuthorizationError(CcaError):
    """The policy denies the requested analysis task."""


class KeyMismatchError(CcaError):
    """Report or index material does not match the supplied key set."""
