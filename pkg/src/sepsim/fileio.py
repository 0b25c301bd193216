"""Versioned structured-text files: a header line followed by a YAML body."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml


class FormatError(ValueError):
    pass


def read_versioned(path, header: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    text = path.read_text()
    first, _, body = text.partition("\n")
    if first.strip() != header:
        raise FormatError(f"{path}: expected header {header!r}, found {first.strip()!r}")
    data = yaml.safe_load(body) or {}
    if not isinstance(data, dict):
        raise FormatError(f"{path}: body must be a mapping")
    return data


def plain(obj):
    """numpy scalars/arrays and tuples to plain YAML-safe Python."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_versioned(path, header: str, data: dict):
    data = plain(data)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header + "\n" + yaml.safe_dump(data, sort_keys=False, width=120))
