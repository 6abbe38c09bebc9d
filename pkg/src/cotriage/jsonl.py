"""Schema-tagged JSON-lines files.

Each file starts with a header record {"schema": "<name>/<version>"} followed
by one JSON object per line. Writers emit keys in sorted order so identical
payloads produce identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import ParseError


def dumps_record(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | Path, schema: str, records: Iterable[dict[str, Any]]) -> None:
    """Write atomically: build the temp file, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps_record({"schema": schema}) + "\n")
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
    os.replace(tmp, path)


def read_jsonl(path: str | Path, schema: str) -> Iterator[dict[str, Any]]:
    """Yield records after checking the header. Line numbers are 1-based."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record is not a JSON object", line=lineno)
            if lineno == 1:
                got = rec.get("schema")
                if got != schema:
                    raise ParseError(f"expected schema {schema!r}, got {got!r}", line=lineno)
                continue
            yield rec
