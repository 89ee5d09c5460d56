from __future__ import annotations

from typing import Any, Mapping, Optional


class FlowPolicyError(Exception):
    """Raised for every recoverable failure in the library.

    ``code`` is a stable machine-readable tag (``DEGENERATE_WEIGHTS``,
    ``DIVERGED``, ``MISSING_STREAM``, ...); ``details`` carries context such as
    the offending epoch, stream name or list of valid choices.
    """

    def __init__(self, code: str, message: str, details: Optional[Mapping[str, Any]] = None) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.details = dict(details or {})

    def __str__(self) -> str:
        if not self.details:
            return f"{self.code}: {self.message}"
        extra = ", ".join(f"{k}={v}" for k, v in sorted(self.details.items()))
        return f"{self.code}: {self.message} ({extra})"
