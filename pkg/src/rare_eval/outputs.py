"""File emitters: JSON Lines and CSV, written atomically and reproducibly.

Floats are printed with 17 significant digits so that parsing the files back
recovers the exact binary values; byte-identical reruns are part of the
output contract.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile


def format_float(v: float) -> str:
    return f"{float(v):.17g}"


def _json_scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"unsupported scalar type {type(v)!r} in output record")


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, records) -> None:
    """One JSON object per line; flat records of scalars only."""
    lines = []
    for rec in records:
        body = ", ".join(f"{json.dumps(k)}: {_json_scalar(v)}" for k, v in rec.items())
        lines.append("{" + body + "}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def write_csv(path, header, rows) -> None:
    """Header plus rows of scalars; floats at full precision."""
    out = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, bool):
                cells.append("true" if v else "false")
            elif isinstance(v, float):
                cells.append(format_float(v))
            else:
                cells.append(str(v))
        out.append(",".join(cells))
    atomic_write_text(path, "\n".join(out) + "\n")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(config: dict) -> str:
    return sha256_hex(json.dumps(config, sort_keys=True).encode("utf-8"))
