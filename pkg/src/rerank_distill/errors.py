"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI: ConfigError and ParseError (and plain
ValueError from type validation) are user/input problems (exit 1);
BackendError subclasses are runtime failures (exit 2).
"""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


class ParseError(Exception):
    """Malformed input file; message carries the offending line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class BackendError(Exception):
    """Generation backend failure."""


class TransportError(BackendError):
    """Transient transport failure that survived all retries."""


class MalformedResponseError(BackendError):
    """Endpoint replied, but the body does not follow the chat schema."""


class BackendUnreachableError(BackendError):
    """Every sample for a query failed at the transport level."""
