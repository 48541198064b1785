"""Append-only results store: a versioned CSV plus JSONL run manifests.

The CSV header's first cell is the schema tag ("sscsv1"); that column holds
the run id. Error rates are stored as exact (mispredictions, n) integer
pairs so downstream metric arithmetic stays rational. Reports and metric
computations only ever read this store, never mutate it.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass

from ..errors import StoreError

__all__ = ["RunRecord", "ResultsStore", "SCHEMA_TAG"]

SCHEMA_TAG = "sscsv1"

_COLUMNS = (
    SCHEMA_TAG,  # run_id column, titled with the schema tag
    "trial_id",
    "role",
    "set",
    "seed",
    "task",
    "skew_kind",
    "skew_strength",
    "skew_frequency",
    "net",
    "optimizer",
    "mode",
    "family",
    "steps",
    "batch_size",
    "train_n",
    "test_n",
    "master_seed",
    "err_clean_num",
    "err_clean_den",
    "err_skewfull_num",
    "err_skewfull_den",
    "diverged",
    "status",
    "interv_kind",
    "interv_factor",
    "interv_targets",
    "extent",
    "wall_time",
)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    trial_id: str
    role: str  # clean_anchor | skewed_anchor | intervened_c | intervened_s | mitigation
    set: str
    seed: int
    task: str
    skew_kind: str
    skew_strength: float
    skew_frequency: str
    net: str
    optimizer: str
    mode: str
    family: str
    steps: int
    batch_size: int
    train_n: int
    test_n: int
    master_seed: int
    err_clean_num: int
    err_clean_den: int
    err_skewfull_num: int
    err_skewfull_den: int
    diverged: bool = False
    status: str = "ok"
    interv_kind: str = ""
    interv_factor: str = ""
    interv_targets: str = ""
    extent: str = ""
    wall_time: float = 0.0

    def row(self):
        d = asdict(self)
        d[SCHEMA_TAG] = d.pop("run_id")
        d["diverged"] = int(self.diverged)
        return [d[c] for c in _COLUMNS]

    @classmethod
    def from_row(cls, row: dict) -> "RunRecord":
        return cls(
            run_id=row[SCHEMA_TAG],
            trial_id=row["trial_id"],
            role=row["role"],
            set=row["set"],
            seed=int(row["seed"]),
            task=row["task"],
            skew_kind=row["skew_kind"],
            skew_strength=float(row["skew_strength"]),
            skew_frequency=row["skew_frequency"],
            net=row["net"],
            optimizer=row["optimizer"],
            mode=row["mode"],
            family=row["family"],
            steps=int(row["steps"]),
            batch_size=int(row["batch_size"]),
            train_n=int(row["train_n"]),
            test_n=int(row["test_n"]),
            master_seed=int(row["master_seed"]),
            err_clean_num=int(row["err_clean_num"]),
            err_clean_den=int(row["err_clean_den"]),
            err_skewfull_num=int(row["err_skewfull_num"]),
            err_skewfull_den=int(row["err_skewfull_den"]),
            diverged=bool(int(row["diverged"])),
            status=row["status"],
            interv_kind=row["interv_kind"],
            interv_factor=row["interv_factor"],
            interv_targets=row["interv_targets"],
            extent=row["extent"],
            wall_time=float(row["wall_time"]),
        )


class ResultsStore:
    """Directory layout: results.csv, manifests/<run_id>.json, checkpoints/."""

    def __init__(self, out_dir):
        self.out_dir = str(out_dir)
        self.csv_path = os.path.join(self.out_dir, "results.csv")
        self.manifest_dir = os.path.join(self.out_dir, "manifests")
        self.checkpoint_dir = os.path.join(self.out_dir, "checkpoints")

    def _ensure_dirs(self):
        os.makedirs(self.manifest_dir, exist_ok=True)
        os.makedirs(self.checkpoint_dir, exist_ok=True)

    def append(self, record: RunRecord, manifest: dict | None = None):
        self._ensure_dirs()
        new_file = not os.path.exists(self.csv_path)
        with open(self.csv_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(_COLUMNS)
            writer.writerow(record.row())
        if manifest is not None:
            payload = dict(manifest)
            payload.setdefault("run_id", record.run_id)
            payload.setdefault("written_at", time.strftime("%Y-%m-%dT%H:%M:%S"))
            path = os.path.join(self.manifest_dir, f"{record.run_id}.json")
            with open(path, "w") as fh:
                json.dump(payload, fh, sort_keys=True, indent=None)
                fh.write("\n")

    def load(self) -> list:
        if not os.path.exists(self.csv_path):
            return []
        with open(self.csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return []
            if tuple(header) != _COLUMNS:
                raise StoreError(
                    f"{self.csv_path}: schema mismatch "
                    f"(expected header tag {SCHEMA_TAG!r}, got {header[:1]})"
                )
            rows = [dict(zip(_COLUMNS, row)) for row in reader]
        return [RunRecord.from_row(r) for r in rows]

    def existing_run_ids(self) -> set:
        return {r.run_id for r in self.load()}

    def checkpoint_path(self, run_id: str) -> str:
        self._ensure_dirs()
        return os.path.join(self.checkpoint_dir, f"{run_id}.ssc1")
