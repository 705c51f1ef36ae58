"""Readers and writers for the on-disk artifacts (JSON, JSON-lines, CSV)."""
from __future__ import annotations

import csv
import json
import platform
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import ALL_LABELS, Absence, ActLabel, ActMixture, FrameObservation, is_time, parse_time_value
from .errors import ValidationError


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def write_model(path, mixture: ActMixture, round_no: Optional[int] = None) -> None:
    d = mixture.to_dict()
    if round_no is not None:
        d["round"] = round_no
    write_json(path, d)


def read_model(path) -> ActMixture:
    return ActMixture.from_dict(read_json(path))


def write_frames(path, frames: Iterable[FrameObservation]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_dict(), separators=(",", ":")) + "\n")


def read_frames(path) -> list[FrameObservation]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(FrameObservation.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{n}: bad frame record ({exc})") from exc
    return out


def read_samples(path) -> tuple[list[float], list[Optional[str]]]:
    """Relative-hours column plus the optional label column (ignored by fitting)."""
    values, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                v = float(row[0])
            except ValueError:
                if not values:
                    continue  # header
                raise ValidationError(f"{path}: non-numeric sample {row[0]!r}")
            values.append(v)
            labels.append(row[1].strip() if len(row) > 1 and row[1].strip() else None)
    if not values:
        raise ValidationError(f"{path}: no samples")
    return values, labels


def write_samples(path, samples: Sequence[tuple[ActLabel, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hours", "label"])
        for label, v in samples:
            w.writerow([repr(float(v)), label.value])


def write_timeline_csv(path, times, errors=None) -> None:
    """``label,hours,flag`` rows; with ``errors`` an ``error_pct`` column is added."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["label", "hours", "flag"] + (["error_pct"] if errors is not None else [])
        w.writerow(header)
        for label in ALL_LABELS:
            v = times.get(label, Absence.NA)
            row = [label.value, format(v, ".10g") if is_time(v) else str(v), "" if is_time(v) else str(v)]
            if errors is not None:
                e = errors.get(label, "n/a")
                row.append(f"{e:.2f}" if isinstance(e, float) else str(e))
            w.writerow(row)


def read_timeline_csv(path) -> dict[ActLabel, object]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = ActLabel.parse(row["label"])
            flag = (row.get("flag") or "").strip()
            out[label] = parse_time_value(flag if flag else row["hours"])
    return out


def read_error_column(path) -> dict[ActLabel, Optional[float]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out[ActLabel.parse(row["label"])] = float(row.get("error_pct") or "")
            except ValueError:
                out[ActLabel.parse(row["label"])] = None
    return out


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "cleavekit": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(path, command: str, config: dict, seed=None) -> None:
    write_json(path, {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": versions(),
    })
