"""
GeoFlow: Run Artifacts
======================
Byte-stable persistence for experiment outputs:
1. CSV tables (fixed column order, 17 significant digits, '\\n' line endings)
2. JSON configs and metadata (sorted keys)
3. Run directories runs/<id>/ with config.json and meta.json
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import joblib
import numpy as np
import pandas as pd
from pydantic import BaseModel

from model import __version__
from utils.config import runs_root
from utils.errors import ArtifactIOError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _to_jsonable(value.model_dump())
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dumps_json(value: Any) -> str:
    """Canonical JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(_to_jsonable(value), sort_keys=True, indent=2, allow_nan=True) + "\n"


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(parent, exc.strerror or str(exc)) from None


def write_json(value: Any, path: str) -> None:
    """Write a JSON document."""
    _ensure_parent(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_json(value))
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None


def write_csv(rows: Iterable[Sequence[Any]], schema: Sequence[str], path: str) -> None:
    """
    Write rows as CSV with a fixed column order.

    Args:
        rows: Iterable of row sequences (or mappings keyed by column)
        schema: Column names, in output order
        path: Destination file

    Floats are written with 17 significant digits so a read back is exact.
    """
    columns = list(schema)
    if len(set(columns)) != len(columns):
        raise UsageError(f"duplicate CSV columns in {columns}")
    records = []
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        row = list(row)
        if len(row) != len(columns):
            raise UsageError(f"row of length {len(row)} does not match {len(columns)} columns")
        records.append(row)
    frame = pd.DataFrame(records, columns=columns)
    _ensure_parent(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None


def read_csv(path: str) -> pd.DataFrame:
    """Read a CSV written by write_csv."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None


def fingerprint(config: Any) -> str:
    """sha256 of the canonical JSON form of a config."""
    return hashlib.sha256(dumps_json(config).encode("utf-8")).hexdigest()


@dataclass
class RunArtifact:
    """One experiment invocation and the files it produced."""
    run_id: str
    path: str
    command: str
    config: Dict[str, Any]
    seed: int
    fingerprint: str
    tables: List[str] = field(default_factory=list)

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def write_table(self, name: str, rows, schema: Sequence[str]) -> str:
        target = self.file(name)
        write_csv(rows, schema, target)
        if name not in self.tables:
            self.tables.append(name)
            self.write_meta()
        logger.info(f"[OK] wrote {target}")
        return target

    def write_document(self, name: str, value: Any) -> str:
        target = self.file(name)
        write_json(value, target)
        if name not in self.tables:
            self.tables.append(name)
            self.write_meta()
        logger.info(f"[OK] wrote {target}")
        return target

    def save_state(self, state: Any, name: str = "final_state.joblib") -> str:
        target = self.file(name)
        try:
            joblib.dump(state, target)
        except OSError as exc:
            raise ArtifactIOError(target, exc.strerror or str(exc)) from None
        logger.info(f"[OK] saved state to {target} ({os.path.getsize(target) / 1024:.2f} KB)")
        return target

    def meta(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "seed": self.seed,
            "version": __version__,
            "fingerprint": self.fingerprint,
            "tables": sorted(self.tables),
        }

    def write_meta(self) -> None:
        write_json(self.meta(), self.file("meta.json"))


def create_run(command: str, config: Any, root: Optional[str] = None) -> RunArtifact:
    """
    Create runs/<id>/ for a command and write config.json and meta.json.

    The id is the command name plus a prefix of the config fingerprint, so
    identical invocations map to the same directory.
    """
    values = _to_jsonable(config)
    digest = fingerprint(values)
    run_id = f"{command}-{digest[:12]}"
    path = os.path.join(runs_root(root), run_id)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None
    seed = int(values.get("seed", 0)) if isinstance(values, dict) else 0
    run = RunArtifact(run_id, path, command, values, seed, digest)
    write_json(values, run.file("config.json"))
    run.write_meta()
    logger.debug(f"run directory {path}")
    return run


def load_state(path: str) -> Any:
    try:
        return joblib.load(path)
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None
