"""Deterministic on-disk container shared by model files, graph caches and summaries.

A container is a zip archive holding one ``meta.json`` member followed by
``<name>.npy`` members in insertion order.  Every member carries the fixed
timestamp 1980-01-01 00:00:00, so writing the same content twice yields
byte-identical files.  Arrays are stored in the standard ``.npy`` format and
round-trip bit-exactly; ``numpy.load`` can read the arrays as an ``.npz``.

``meta.json`` always contains ``format`` (a string naming the payload kind)
and ``version`` (an integer).
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DataError

_EPOCH = (1980, 1, 1, 0, 0, 0)
META_NAME = "meta.json"


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def dumps_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_container(path, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    if "format" not in meta or "version" not in meta:
        raise ValueError("container meta needs 'format' and 'version'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member(META_NAME), dumps_json(meta))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(_member(f"{name}.npy"), buf.getvalue())


def read_container(path, expected_format: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"container file not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            meta = json.loads(zf.read(META_NAME).decode("utf-8"))
            arrays = {}
            for info in zf.infolist():
                if info.filename == META_NAME:
                    continue
                name = info.filename[: -len(".npy")]
                with zf.open(info) as fh:
                    arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"{path}: not a valid container ({exc})") from exc
    if expected_format is not None and meta.get("format") != expected_format:
        raise DataError(
            f"{path}: expected a '{expected_format}' container, found '{meta.get('format')}'"
        )
    return meta, arrays
