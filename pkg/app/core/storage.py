"""
File persistence helpers: atomic writes and JSON Lines.
"""
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator

from app.core.errors import DataError


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to path via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_jsonl(rows: Iterable[Dict[str, Any]]) -> str:
    return "".join(canonical_json(row) + "\n" for row in rows)


def write_jsonl(path: Path, rows: Iterable[Dict[str, Any]]) -> None:
    atomic_write_text(path, dump_jsonl(rows))


def iter_jsonl(path: Path) -> Iterator[tuple]:
    """Yield (line_number, payload) for every non-blank line."""
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_number}: invalid JSON: {exc}") from exc
            yield line_number, payload
