"""Comparison table across experiment records (one row per record plus a
summary row)."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.errors import IngestionError, OutputError, UsageError
from app.core.logging import get_logger
from app.schemas.record_schema import ExperimentRecord
from app.services.evaluation_service import paired_right_tail_t_test

logger = get_logger(__name__)

METHODS = ("gapp", "dsmcpp")


def load_record(path: str | Path) -> ExperimentRecord:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"record not found: {path}", details=[{"path": str(path)}])
    try:
        return ExperimentRecord.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"cannot parse {path.name}: {exc}") from exc
    except ValidationError as exc:
        raise IngestionError(
            f"invalid experiment record: {path.name}",
            details=[{"loc": list(e["loc"]), "msg": e["msg"]} for e in exc.errors()],
        ) from exc


def _row(record: ExperimentRecord) -> dict:
    row: dict = {"run_id": record.run_id, "seed": record.resolved_config.get("seed")}
    metrics = record.metrics
    for method in METHODS:
        method_metrics = metrics.methods.get(method) if metrics else None
        row[f"{method}_nmse"] = method_metrics.nmse if method_metrics else None
        row[f"{method}_convergence_bins"] = (
            method_metrics.convergence_bins if method_metrics else None
        )
    return row


def _convergence_or_length(record: ExperimentRecord, method: str) -> float:
    """Never-converged runs count as the full post-switch length."""
    metrics = record.metrics
    value = metrics.methods[method].convergence_bins
    return float(metrics.post_switch_bins if value is None else value)


def build_report(records: Sequence[ExperimentRecord]) -> pd.DataFrame:
    if not records:
        raise UsageError("report needs at least one experiment record")
    scenarios = {json.dumps(r.resolved_config.get("scenario"), sort_keys=True) for r in records}
    if len(scenarios) > 1:
        logger.warning("report_mixed_scenarios", n_scenarios=len(scenarios))

    frame = pd.DataFrame([_row(r) for r in records])
    summary: dict = {"run_id": "summary", "seed": None}
    for method in METHODS:
        nmse = pd.to_numeric(frame[f"{method}_nmse"], errors="coerce")
        summary[f"{method}_nmse"] = nmse.mean()
        summary[f"{method}_nmse_var"] = nmse.var(ddof=1) if nmse.count() > 1 else np.nan
        convergence = pd.to_numeric(frame[f"{method}_convergence_bins"], errors="coerce")
        summary[f"{method}_convergence_bins"] = convergence.mean()

    paired = [
        r
        for r in records
        if r.metrics is not None
        and all(m in r.metrics.methods and r.metrics.methods[m].nmse is not None for m in METHODS)
    ]
    if len(paired) >= 3:
        summary["p_nmse"] = paired_right_tail_t_test(
            [r.metrics.methods["dsmcpp"].nmse for r in paired],
            [r.metrics.methods["gapp"].nmse for r in paired],
        )
        summary["p_convergence"] = paired_right_tail_t_test(
            [_convergence_or_length(r, "dsmcpp") for r in paired],
            [_convergence_or_length(r, "gapp") for r in paired],
        )
    else:
        logger.info("report_t_test_skipped", paired_records=len(paired))
    return pd.concat([frame, pd.DataFrame([summary])], ignore_index=True)


def cmd_report(paths: Sequence[str | Path], out_path: str | Path | None = None) -> pd.DataFrame:
    if not paths:
        raise UsageError("report needs at least one experiment record")
    table = build_report([load_record(p) for p in paths])
    if out_path is not None:
        try:
            table.to_csv(out_path, index=False, lineterminator="\n")
        except OSError as exc:
            raise OutputError(f"cannot write {out_path}: {exc}") from exc
    print(table.to_string(index=False))
    return table
