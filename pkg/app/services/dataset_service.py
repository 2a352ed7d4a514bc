"""Dataset and result files on disk.

Series are CSV (pandas, round-trip float precision on read), manifests and
metrics are sorted-key JSON, so identical inputs produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from app.core.errors import IngestionError, OutputError
from app.core.logging import get_logger
from app.schemas.record_schema import DatasetFiles, DatasetManifest
from app.services.encoding_service import KinematicsSeries, SpikeTrain, TuningModel
from app.services.evaluation_service import KsResult
from app.services.simulation_service import SyntheticDataset, TaskEvent, TuningSchedule

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
KIN_COLUMNS = ["px", "py", "vx", "vy"]


def spikes_file_name(neuron_id: int) -> str:
    return f"spikes_n{neuron_id}.csv"


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create directory {path}: {exc}") from exc
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(payload: Any, path: Path) -> Path:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    if not path.is_file():
        raise IngestionError(f"missing dataset file: {path.name}", details=[{"path": str(path)}])
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"cannot parse {path.name}: {exc}") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise IngestionError(f"{path.name} lacks columns {missing}")
    return frame


def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise IngestionError(f"missing dataset file: {path.name}", details=[{"path": str(path)}])
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot parse {path.name}: {exc}") from exc


def _check_bin_index(frame: pd.DataFrame, n_bins: int, name: str) -> None:
    if len(frame) != n_bins or not np.array_equal(frame["bin_index"].to_numpy(), np.arange(n_bins)):
        raise IngestionError(f"{name} must list bins 0..{n_bins - 1} in order")


def _truth_payload(dataset: SyntheticDataset) -> dict[str, Any]:
    neurons = []
    for i, schedule in enumerate(dataset.schedules):
        neurons.append(
            {
                "neuron_id": i,
                "switching": dataset.switching[i] if dataset.switching else False,
                "segments": [
                    {"start_bin": start, "k": model.k.tolist(), "a": model.a, "b": model.b}
                    for start, model in schedule.segments
                ],
                "z": dataset.truth_z[i].tolist(),
            }
        )
    return {
        "bin_width_s": dataset.kinematics.bin_width_s,
        "switch_bin": dataset.switch_bin,
        "neurons": neurons,
    }


def write_dataset(
    dataset: SyntheticDataset, out_dir: str | Path, *, scenario: dict[str, Any] | None = None
) -> DatasetManifest:
    out = _ensure_dir(Path(out_dir))
    kin = dataset.kinematics
    n_bins = len(kin)
    bins = np.arange(n_bins)

    kin_frame = pd.DataFrame(kin.components, columns=KIN_COLUMNS)
    kin_frame.insert(0, "bin_index", bins)
    _write_csv(kin_frame, out / "kinematics.csv")

    spike_files = []
    for i, train in enumerate(dataset.spikes):
        name = spikes_file_name(i)
        _write_csv(pd.DataFrame({"bin_index": bins, "count": train.counts}), out / name)
        spike_files.append(name)

    events = pd.DataFrame(
        [(e.bin_index, e.kind, e.lever) for e in dataset.events],
        columns=["bin_index", "event", "lever"],
    )
    _write_csv(events, out / "events.csv")
    write_json(_truth_payload(dataset), out / "truth.json")

    manifest = DatasetManifest(
        bin_width_s=kin.bin_width_s,
        n_neurons=dataset.n_neurons,
        n_bins=n_bins,
        switch_bin=dataset.switch_bin,
        seed=dataset.seed,
        scenario=scenario,
        files=DatasetFiles(spikes=spike_files),
    )
    write_json(manifest, out / MANIFEST_NAME)
    logger.info("dataset_written", path=str(out), n_neurons=dataset.n_neurons, n_bins=n_bins)
    return manifest


def read_manifest(dataset_dir: str | Path) -> DatasetManifest:
    path = Path(dataset_dir) / MANIFEST_NAME
    try:
        return DatasetManifest.model_validate(_read_json(path))
    except ValidationError as exc:
        raise IngestionError(
            f"invalid dataset manifest: {path.name}",
            details=[{"loc": list(e["loc"]), "msg": e["msg"]} for e in exc.errors()],
        ) from exc


def load_dataset(dataset_dir: str | Path) -> tuple[DatasetManifest, SyntheticDataset]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    manifest = read_manifest(root)
    dt = manifest.bin_width_s
    n_bins = manifest.n_bins

    kin_frame = _read_csv(root / manifest.files.kinematics, ["bin_index", *KIN_COLUMNS])
    _check_bin_index(kin_frame, n_bins, manifest.files.kinematics)
    kin = KinematicsSeries.from_components(kin_frame[KIN_COLUMNS].to_numpy(dtype=float), dt)

    if len(manifest.files.spikes) != manifest.n_neurons:
        raise IngestionError("manifest lists the wrong number of spike files")
    spikes = []
    for name in manifest.files.spikes:
        frame = _read_csv(root / name, ["bin_index", "count"])
        _check_bin_index(frame, n_bins, name)
        spikes.append(SpikeTrain(counts=frame["count"].to_numpy(dtype=np.int64), bin_width_s=dt))

    events_frame = _read_csv(root / manifest.files.events, ["bin_index", "event", "lever"])
    events = [
        TaskEvent(bin_index=int(row.bin_index), kind=str(row.event), lever=str(row.lever))
        for row in events_frame.itertuples(index=False)
    ]

    truth = _read_json(root / manifest.files.truth)
    neurons = truth.get("neurons", [])
    if len(neurons) != manifest.n_neurons:
        raise IngestionError("truth.json does not cover every neuron")
    if truth.get("bin_width_s") != dt:
        raise IngestionError("truth.json bin width disagrees with the manifest")
    schedules = [
        TuningSchedule(
            segments=[
                (int(seg["start_bin"]), TuningModel(k=np.asarray(seg["k"]), a=seg["a"], b=seg["b"]))
                for seg in entry["segments"]
            ]
        )
        for entry in neurons
    ]
    truth_z = np.asarray([entry["z"] for entry in neurons], dtype=float).reshape(len(neurons), n_bins)
    dataset = SyntheticDataset(
        kinematics=kin,
        spikes=spikes,
        schedules=schedules,
        truth_z=truth_z,
        events=events,
        switch_bin=manifest.switch_bin,
        switching=[bool(entry.get("switching", False)) for entry in neurons],
        seed=manifest.seed,
    )
    logger.info("dataset_loaded", path=str(root), n_neurons=len(spikes), n_bins=n_bins)
    return manifest, dataset


def write_zhat(path: Path, zhat: np.ndarray, ess: np.ndarray, range_violation: np.ndarray) -> Path:
    frame = pd.DataFrame(
        {
            "bin_index": np.arange(zhat.size),
            "zhat": zhat,
            "ess": ess,
            "range_violation_flag": np.asarray(range_violation, dtype=np.int64),
        }
    )
    return _write_csv(frame, path)


def write_khat(
    path: Path,
    bins: np.ndarray,
    k: np.ndarray,
    final_cost: np.ndarray | None = None,
    iters: np.ndarray | None = None,
) -> Path:
    frame = pd.DataFrame(k, columns=[f"k{i}" for i in range(1, 6)])
    frame.insert(0, "bin_index", np.asarray(bins, dtype=np.int64))
    frame["final_cost"] = np.nan if final_cost is None else final_cost
    frame["iters"] = pd.array(
        [pd.NA] * len(frame) if iters is None else np.asarray(iters), dtype="Int64"
    )
    return _write_csv(frame, path)


def write_xhat(path: Path, xhat: np.ndarray) -> Path:
    frame = pd.DataFrame(xhat, columns=KIN_COLUMNS)
    frame.insert(0, "bin_index", np.arange(xhat.shape[0]))
    return _write_csv(frame, path)


def write_ksplot(path: Path, result: KsResult) -> Path:
    frame = pd.DataFrame(
        {"u_sorted": result.rescaled_points, "uniform_quantile": result.uniform_quantiles}
    )
    return _write_csv(frame, path)


def ensure_output_dir(path: str | Path) -> Path:
    return _ensure_dir(Path(path))
