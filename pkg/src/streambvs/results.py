"""Result file formats: metrics CSV, run manifest, atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .simulation import MetricsRecord

METRICS_HEADER = ("replicate", "batch", "method", "prior", "rmse_beta", "rmse_gamma", "nonconverged")


def fmt(x: float, digits: int = 10) -> str:
    return format(x, f".{digits}g")


def atomic_write_text(path, text: str) -> None:
    """Write UTF-8 text with LF endings via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv_text(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in records:
        writer.writerow([r.replicate, r.batch, r.method, r.prior, fmt(r.rmse_beta), fmt(r.rmse_gamma), int(r.any_nonconverged)])
    return buf.getvalue()


def write_metrics_csv(path, records) -> None:
    atomic_write_text(path, metrics_csv_text(records))


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            MetricsRecord(
                int(row["replicate"]), int(row["batch"]), row["method"], row["prior"],
                float(row["rmse_beta"]), float(row["rmse_gamma"]), bool(int(row["nonconverged"])),
            )
            for row in reader
        ]


def write_manifest(path, manifest: dict) -> None:
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
