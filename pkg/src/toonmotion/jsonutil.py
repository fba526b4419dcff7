"""Canonical JSON output and atomic file writes.

Every JSON artifact this package emits (datasets, reports, face tracks,
manifests) goes through :func:`canonical_json` so repeated runs produce
byte-identical files: keys sorted, reals fixed at 6 decimals, UTF-8, no
platform-dependent float repr.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any


def _encode(obj: Any, out: list[str]) -> None:
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, bool):  # pragma: no cover - caught above
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float in JSON output: {obj!r}")
        out.append(f"{obj:.6f}")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        # numpy scalars and similar duck-typed numbers
        if hasattr(obj, "item"):
            _encode(obj.item(), out)
        else:
            raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Serialize *obj* deterministically: sorted keys, 6-decimal reals."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write *data* to *path* via a temp file and rename, so readers never
    observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
