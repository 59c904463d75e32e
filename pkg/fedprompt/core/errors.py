"""Exception hierarchy shared by every module.

Each error carries the process exit code the CLI reports for it, so
experiment scripts can branch on failures without parsing messages.
"""
from typing import Optional

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_PROTOCOL = 5
EXIT_DATA = 6
EXIT_NUMERICAL = 7
EXIT_TRANSPORT = 8


class FedPromptError(Exception):
    """Base class for all expected failures."""
    exit_code = EXIT_UNEXPECTED


class InvalidInput(FedPromptError):
    exit_code = EXIT_DATA


class NumericalError(FedPromptError):
    """Non-finite activation, gradient or parameter (divergence)."""
    exit_code = EXIT_NUMERICAL


class EmptyShard(FedPromptError):
    exit_code = EXIT_DATA


class ParseError(FedPromptError):
    """Malformed dataset line, manifest or checkpoint."""
    exit_code = EXIT_DATA

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidLabel(FedPromptError):
    exit_code = EXIT_DATA


class TooManyClients(FedPromptError):
    exit_code = EXIT_DATA


class PartitionError(FedPromptError):
    exit_code = EXIT_DATA


class PoisonError(FedPromptError):
    exit_code = EXIT_DATA


class ProtocolError(FedPromptError):
    """Shape, round or client-id mismatch between protocol participants."""
    exit_code = EXIT_PROTOCOL


class MalformedFrame(FedPromptError):
    exit_code = EXIT_PROTOCOL

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class UnsupportedVersion(FedPromptError):
    exit_code = EXIT_PROTOCOL


class TransportError(FedPromptError):
    exit_code = EXIT_TRANSPORT


class TransportTimeout(TransportError):
    pass


class ConfigError(FedPromptError):
    exit_code = EXIT_CONFIG

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingFile(FedPromptError):
    exit_code = EXIT_MISSING_FILE


class ClientFailure(FedPromptError):
    """A client round failed; identifies where and keeps the cause's exit code."""

    def __init__(self, round_num: int, client_id: int, cause: Exception):
        self.round = round_num
        self.client_id = client_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_UNEXPECTED)
        super().__init__(f"round {round_num}, client {client_id}: {cause}")
