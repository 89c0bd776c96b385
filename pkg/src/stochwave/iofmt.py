"""Small file helpers: atomic writes and the columnar text format."""
from __future__ import annotations

import io
import json
import os
import tempfile

import numpy as np


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_safe(obj):
    """Recursively replace nan by None and +-inf by the strings "inf"/"-inf"."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj, indent=None) -> str:
    return json.dumps(json_safe(obj), indent=indent, sort_keys=True, allow_nan=False)


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj, indent=2) + "\n")


def format_columns(header: dict, names, columns: np.ndarray) -> str:
    """Columnar text: ``# key = value`` header lines, a ``# columns:`` line, data."""
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k} = {json.dumps(v)}\n")
    buf.write("# columns: " + " ".join(names) + "\n")
    np.savetxt(buf, np.atleast_2d(columns), fmt="%.17g")
    return buf.getvalue()


def parse_columns(path):
    """Inverse of :func:`format_columns`; returns (header, names, data)."""
    header, names = {}, None
    with open(path) as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("# columns:"):
            names = line[len("# columns:"):].split()
        elif line.startswith("#"):
            k, _, v = line[1:].partition("=")
            header[k.strip()] = json.loads(v.strip())
        elif line.strip():
            body.append(line)
    if names is None:
        raise ValueError(f"{path}: missing '# columns:' line")
    data = np.loadtxt(io.StringIO("".join(body)), ndmin=2)
    return header, names, data
