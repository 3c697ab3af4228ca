"""Atomic file writes and small CSV helpers shared by the file formats."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt_float(x: float) -> str:
    """Shortest round-trip repr, used for deterministic CSV output."""
    return repr(float(x))


CSV_VERSION = 1
CSV_PREAMBLE = f"# format_version={CSV_VERSION}\n"


def read_csv(path) -> tuple[list, list]:
    """Read a CSV written by this package: returns (header, rows of dicts).

    Leading ``#`` lines are metadata; a ``format_version`` newer than
    :data:`CSV_VERSION` is rejected.
    """
    import csv

    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key == "format_version" and int(val) > CSV_VERSION:
                raise ValueError(f"{path}: unsupported CSV format_version {val}")
            continue
        body.append(line)
    reader = csv.DictReader(body)
    rows = list(reader)
    return list(reader.fieldnames or []), rows
