from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def resolve_dir(d: Path | str) -> Path:
    """Resolves '~' to HOME directory and turns ``d`` into an absolute path."""
    if d is None:
        return None
    d = str(d)
    if os.path.isfile(d):
        raise ValueError(f"Expected a directory, got a file: {d!r}")
    if "~" in d:
        return Path(os.path.expanduser(d))
    return Path(os.path.abspath(d))


def to_jsonable(obj: Any) -> Any:
    """``default`` hook for :func:`json.dump` that converts NumPy scalars and arrays and paths."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"Object of type {obj.__class__.__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    """Compact JSON with sorted keys; equal data always give equal strings."""
    return json.dumps(
        data, sort_keys=True, separators=(",", ":"), default=to_jsonable, ensure_ascii=False
    )


def sha256_of(data: Any) -> str:
    """SHA-256 hex digest of the canonical JSON representation of ``data``."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def store_json(
    data: dict | list,
    filepath: Path | str,
    indent: int = 2,
    make_dirs: bool = True,
    **kwargs,
):
    """Serialize object to file.

    Keys are sorted and NumPy values converted so that identical data always produce byte-identical files.

    Args:
        data: Nested structure of dicts and lists.
        filepath: Path to the text file to (over)write.
        indent: Prettify the JSON layout. Default indentation: 2 spaces
        make_dirs: If True (default), create the directory if it does not exist.
        **kwargs: Keyword arguments passed to :meth:`json.dumps`.
    """
    filepath = str(filepath)
    kwargs = dict(indent=indent, sort_keys=True, default=to_jsonable, ensure_ascii=False, **kwargs)
    if make_dirs:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
    with open(filepath, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, **kwargs)
        f.write("\n")


def format_cell(value: Any) -> str:
    """Formats a CSV cell; floats use the shortest representation that round-trips."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def store_csv(
    rows: Iterable[Sequence[Any]],
    header: Sequence[str],
    filepath: Path | str,
    make_dirs: bool = True,
) -> int:
    """Writes an RFC-4180 CSV file with a header row and returns the number of data rows written."""
    filepath = str(filepath)
    if make_dirs:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
    n_rows = 0
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
            n_rows += 1
    return n_rows


def load_json(filepath: Path | str) -> Any:
    with open(filepath, "r", encoding="utf-8") as f:
        return json.load(f)
