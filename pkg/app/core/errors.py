from __future__ import annotations

from dataclasses import dataclass
from typing import Any

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass(slots=True)
class AppError(Exception):
    exit_code: int
    code: str
    message: str
    details: list[Any] | None = None

    def __str__(self) -> str:
        return self.message


class ConfigError(AppError):
    def __init__(
        self, message: str = "Invalid configuration", *, details: list[Any] | None = None
    ):
        super().__init__(
            exit_code=EXIT_CONFIG, code="config_error", message=message, details=details
        )


class UsageError(AppError):
    def __init__(self, message: str = "Invalid usage", *, details: list[Any] | None = None):
        super().__init__(
            exit_code=EXIT_CONFIG, code="usage_error", message=message, details=details
        )


class InvalidArgumentError(AppError):
    def __init__(
        self, message: str = "Invalid argument", *, details: list[Any] | None = None
    ):
        super().__init__(
            exit_code=EXIT_RUNTIME,
            code="invalid_argument",
            message=message,
            details=details,
        )


class DegenerateDataError(AppError):
    def __init__(
        self, message: str = "Degenerate data", *, details: list[Any] | None = None
    ):
        super().__init__(
            exit_code=EXIT_RUNTIME,
            code="degenerate_data",
            message=message,
            details=details,
        )


class IngestionError(AppError):
    def __init__(
        self, message: str = "Dataset ingestion failed", *, details: list[Any] | None = None
    ):
        super().__init__(
            exit_code=EXIT_RUNTIME,
            code="ingestion_error",
            message=message,
            details=details,
        )


class OutputError(AppError):
    def __init__(
        self, message: str = "Cannot write output", *, details: list[Any] | None = None
    ):
        super().__init__(
            exit_code=EXIT_RUNTIME, code="output_error", message=message, details=details
        )
