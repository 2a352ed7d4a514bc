from __future__ import annotations

import json
import sys
import traceback
from typing import Any, Callable
from uuid import uuid4

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, AppError
from app.core.logging import get_logger
from app.schemas.error_schema import ErrorEnvelope, ErrorResponse, ValidationErrorItem

logger = get_logger(__name__)


def _error_response(
    *,
    run_id: str,
    command: str | None,
    code: str,
    message: str,
    exit_code: int,
    details: list[Any] | None = None,
) -> ErrorResponse:
    payload = ErrorResponse(
        run_id=run_id,
        command=command,
        error=ErrorEnvelope(code=code, message=message, exit_code=exit_code, details=details),
    )
    print(
        json.dumps(payload.model_dump(mode="json", exclude_none=True), sort_keys=True),
        file=sys.stderr,
    )
    return payload


def validation_details(exc: ValidationError) -> list[dict[str, Any]]:
    return [
        ValidationErrorItem(
            type=e.get("type"),
            loc=list(e.get("loc") or []),
            msg=str(e.get("msg") or "Invalid value"),
            input=e.get("input"),
        ).model_dump(mode="json", exclude_none=True)
        for e in exc.errors()
    ]


def run_with_error_boundary(
    fn: Callable[[], int | None],
    *,
    run_id: str | None = None,
    command: str | None = None,
) -> int:
    """Run a command and translate any failure into an exit code.

    0 on success, 2 for configuration or usage errors, 3 for runtime errors.
    """
    run_id = run_id or uuid4().hex
    try:
        result = fn()
        return EXIT_OK if result is None else int(result)
    except AppError as exc:
        logger.error("command_failed", code=exc.code, message=exc.message, exit_code=exc.exit_code)
        _error_response(
            run_id=run_id,
            command=command,
            code=exc.code,
            message=exc.message,
            exit_code=exc.exit_code,
            details=exc.details,
        )
        return exc.exit_code
    except ValidationError as exc:
        details = validation_details(exc)
        logger.error("config_validation_failed", errors=len(details))
        _error_response(
            run_id=run_id,
            command=command,
            code="validation_error",
            message="Configuration validation failed",
            exit_code=EXIT_CONFIG,
            details=details,
        )
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logger.error(
            "unhandled_exception",
            traceback="".join(
                traceback.format_exception(type(exc), exc, exc.__traceback__)
            ),
        )
        message = str(exc) if settings.DEBUG else "Internal error"
        details = [{"type": type(exc).__name__}] if settings.DEBUG else None
        _error_response(
            run_id=run_id,
            command=command,
            code="internal_error",
            message=message,
            exit_code=EXIT_RUNTIME,
            details=details,
        )
        return EXIT_RUNTIME
