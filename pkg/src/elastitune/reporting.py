"""JSON/CSV writers; every file carries a replay manifest."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def manifest(command: str, config: dict, **extra) -> dict:
    return {"artifact": "elastitune", "version": __version__, "command": command,
            "config": config, **extra}


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(payload: dict) -> str:
    return json.dumps(_clean(json.loads(json.dumps(payload, default=_default))), indent=2,
                      sort_keys=False)


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload) + "\n")
    return path


def csv_text(rows: list[dict], meta: dict | None = None) -> str:
    """CSV with '.' decimals and LF endings; ``meta`` goes in a leading '#' comment line."""
    buf = io.StringIO(newline="")
    if meta is not None:
        buf.write("# " + json.dumps(_clean(json.loads(json.dumps(meta, default=_default))),
                                    separators=(",", ":")) + "\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: str | Path, rows: list[dict], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(rows, meta))
    return path


def read_csv(path: str | Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
