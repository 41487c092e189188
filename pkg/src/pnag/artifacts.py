"""Seed sub-streams, versioned CSV schemas and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import sys
import time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

__version__ = "0.1.0"

SEED_STREAMS = ("dataset", "evaluator", "generator", "baselines", "inference")


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for a named component, stable across platforms."""
    if stream not in SEED_STREAMS and not stream.startswith(SEED_STREAMS):
        raise ValidationError(f"unknown seed stream {stream!r}")
    h = hashlib.blake2b(f"{int(seed)}/{stream}".encode(), digest_size=4)
    return int.from_bytes(h.digest(), "little")


# ------------------------------------------------------------------ CSV schemas

# name -> (version, header)
CSV_SCHEMAS: dict[str, tuple[int, tuple[str, ...]]] = {
    "frontier": (1, ("latency_ms", "accuracy", "arch_json")),
    "histogram": (1, ("budget_ms", "sample", "latency_ms", "accuracy", "feasible")),
    "evaluator_log": (1, ("epoch", "loss", "holdout_agreement")),
    "generator_log": (1, ("iter", "anchor_ms", "mean_reward", "violation_rate")),
    "generate": (1, ("budget_ms", "latency_ms", "accuracy", "feasible", "arch_json")),
    "compare": (1, ("method", "seed", "budget_ms", "latency_ms", "accuracy", "feasible", "violation_rate",
                    "accuracy_evaluations")),
    "compare_summary": (1, ("method", "hypervolume", "mean_accuracy_under_budget", "accuracy_evaluations")),
    "ksweep": (1, ("k", "seed", "hypervolume")),
    "ablation": (1, ("rule", "budget_ms", "mean_latency_ms", "mean_accuracy", "violation_rate")),
    "budget_report": (1, ("budget_ms", "violation_rate", "mean_latency_ms", "mean_accuracy")),
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_text(schema: str, rows: Iterable[Sequence]) -> str:
    _, header = CSV_SCHEMAS[schema]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValidationError(f"{schema} row has {len(row)} fields, expected {len(header)}")
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, schema: str, rows: Iterable[Sequence]) -> None:
    Path(path).write_text(csv_text(schema, rows), encoding="utf-8")


def read_csv(path, schema: str) -> list[dict[str, str]]:
    """Rows as dicts after checking the header against ``schema``."""
    _, header = CSV_SCHEMAS[schema]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = tuple(next(reader, ()))
        if got != header:
            raise ValidationError(f"{path}: header {got} does not match {schema} schema {header}")
        out = []
        for n, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{n}: expected {len(header)} fields, got {len(row)}")
            out.append(dict(zip(header, row)))
    return out


# -------------------------------------------------------------------- manifests

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out) -> Path:
    return Path(str(out) + ".manifest.json")


def write_manifest(out, command: str, argv: Sequence[str], config: Mapping, seeds: Mapping[str, int],
                   inputs: Sequence = (), outputs: Mapping[str, str] | None = None) -> Path:
    """Record how ``out`` was produced next to it as ``<out>.manifest.json``.

    ``outputs`` maps each produced file to its CSV schema name (or a model kind).
    """
    outputs = dict(outputs or {str(out): "file"})
    doc = {
        "manifest_version": 1,
        "command": command,
        "argv": list(argv),
        "cwd": str(Path.cwd()),
        "config": dict(config),
        "seeds": {k: int(v) for k, v in seeds.items()},
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {
            str(p): {
                "kind": kind,
                "schema_version": CSV_SCHEMAS[kind][0] if kind in CSV_SCHEMAS else 1,
                "sha256": file_digest(p),
            }
            for p, kind in outputs.items()
        },
        "versions": {"pnag": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "created_unix": time.time(),
    }
    path = manifest_path(out)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("manifest_version") != 1 or "argv" not in doc:
        raise ValidationError(f"{path}: not a run manifest")
    return doc


def command_line() -> list[str]:
    return list(sys.argv)
