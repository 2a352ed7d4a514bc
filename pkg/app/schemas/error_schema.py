from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class ValidationErrorItem(BaseModel):
    type: Optional[str] = None
    # config path of the offending field, e.g. ["scenario", "task", "n_trials"]
    loc: list[str | int] = Field(default_factory=list)
    msg: str
    input: Any = None


class ErrorEnvelope(BaseModel):
    code: str
    message: str
    exit_code: int
    details: Optional[list[Any]] = None


class ErrorResponse(BaseModel):
    """Printed as one JSON line on stderr when a command fails."""

    error: ErrorEnvelope
    run_id: str
    command: Optional[str] = None
    success: Literal[False] = False
