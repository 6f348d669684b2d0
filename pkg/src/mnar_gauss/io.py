"""Text formats: exact-decimal JSON, observation files, trace CSV."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def format_float(x):
    """17 significant digits; enough to round-trip any IEEE double."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("NaN cannot be serialized")
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def dumps_exact(obj, indent=None, _level=0):
    """JSON encoder that writes floats with 17 significant digits.

    Infinities become the string sentinels ``"inf"`` / ``"-inf"``.
    """
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        items = [dumps_exact(v, indent, _level + 1) for v in obj]
        if indent is None or all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ",".join(items) + "]"
        pad = " " * (indent * (_level + 1))
        return "[\n" + ",\n".join(pad + s for s in items) + "\n" + " " * (indent * _level) + "]"
    if isinstance(obj, dict):
        items = [
            json.dumps(str(k)) + ":" + (" " if indent is not None else "") + dumps_exact(v, indent, _level + 1)
            for k, v in obj.items()
        ]
        if indent is None:
            return "{" + ",".join(items) + "}"
        pad = " " * (indent * (_level + 1))
        return "{\n" + ",\n".join(pad + s for s in items) + "\n" + " " * (indent * _level) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def parse_float(value):
    if isinstance(value, str):
        if value == "inf":
            return math.inf
        if value == "-inf":
            return -math.inf
        raise ValueError(f"unexpected string {value!r} where a number was expected")
    return float(value)


def write_observations(path, observations):
    """Newline-delimited JSON, one ``{"seen": [...], "values": [...]}`` per row."""
    with open(path, "w") as fh:
        for obs in observations:
            fh.write(dumps_exact({"seen": [int(i) for i in obs.seen], "values": list(obs.values)}))
            fh.write("\n")


def read_observations(path):
    from .missingness import Observation

    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(Observation(rec["seen"], [parse_float(v) for v in rec["values"]]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad observation record ({exc})") from None
    return out


def write_rows(path, rows):
    """Complete (uncensored) rows, one JSON array per line."""
    with open(path, "w") as fh:
        for row in np.asarray(rows, dtype=float):
            fh.write(dumps_exact(list(row)))
            fh.write("\n")


def read_rows(path):
    with open(path) as fh:
        return np.array([[parse_float(v) for v in json.loads(line)] for line in fh if line.strip()], dtype=float)


def write_json(path, obj):
    Path(path).write_text(dumps_exact(obj, indent=2) + "\n")


def write_table(path, table):
    """Same format as :func:`write_observations`, straight from the columnar table."""
    mask, vals = table.mask, table.values
    with open(path, "w") as fh:
        for r in range(mask.shape[0]):
            seen = np.flatnonzero(mask[r])
            fh.write('{"seen":[' + ",".join(str(int(i)) for i in seen) + '],"values":[')
            fh.write(",".join(format_float(v) for v in vals[r, seen]) + "]}\n")


def read_table(path, d):
    """Read an observation file into an :class:`ObservationTable` of dimension ``d``."""
    from .missingness import ObservationTable

    masks, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seen = [int(i) for i in rec["seen"]]
                values = [parse_float(v) for v in rec["values"]]
                if len(seen) != len(values) or any(b <= a for a, b in zip(seen, seen[1:])):
                    raise ValueError("seen must be strictly increasing and match values")
                if seen and not 0 <= seen[0] <= seen[-1] < d:
                    raise ValueError(f"coordinate out of range for d = {d}")
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad observation record ({exc})") from None
            m = np.zeros(d, dtype=bool)
            m[seen] = True
            row = np.full(d, np.nan)
            row[seen] = values
            masks.append(m)
            rows.append(row)
    return ObservationTable(np.array(masks, dtype=bool).reshape(-1, d), np.array(rows, dtype=float).reshape(-1, d))
