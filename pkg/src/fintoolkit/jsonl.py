"""Line-oriented JSON file helpers with atomic writes.

Every pipeline artifact is either a JSON document or a JSONL stream. Writers
go through a temp-file-plus-rename so a crashed run never leaves a truncated
artifact behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator


def read_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield one parsed object per non-empty line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def load_jsonl(path: str | Path) -> list[dict]:
    return list(read_jsonl(path))


def dumps_line(obj: Any) -> str:
    # ensure_ascii=False keeps artifacts byte-stable and human-readable for
    # non-ASCII tool descriptions.
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text to `path` via a temp file and atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> None:
    atomic_write_text(path, "".join(dumps_line(r) + "\n" for r in rows))


def write_json(path: str | Path, obj: Any, indent: int = 2) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, indent=indent) + "\n")
