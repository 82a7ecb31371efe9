"""
ArtifactStore — JSON, JSON-lines and CSV run artifacts under one output directory.

Writes go through a temporary file and an atomic replace, serialized by one lock so
concurrent sweep cells never interleave.
"""

from __future__ import annotations

import asyncio
import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

logger = logging.getLogger('batchbound.store')


class ArtifactStore:
    """Atomic, lock-guarded writer for run artifacts."""

    def __init__(self, root: Path | str):
        self._root = Path(root)
        self._lock = asyncio.Lock()

    @property
    def root(self) -> Path:
        return self._root

    def path(self, name: str) -> Path:
        return self._root / name

    async def _write_text(self, name: str, text: str) -> Path:
        async with self._lock:
            path = self.path(name)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp_path = path.with_suffix(path.suffix + ".tmp")
            tmp_path.write_text(text, encoding="utf-8")
            tmp_path.replace(path)
        logger.debug(f"Wrote {path}")
        return path

    async def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        return await self._write_text(name, json.dumps(data, ensure_ascii=False, indent=2))

    async def write_jsonl(self, name: str, text_or_records: str | Iterable[Dict[str, Any]]) -> Path:
        if isinstance(text_or_records, str):
            text = text_or_records
        else:
            text = "".join(json.dumps(record) + "\n" for record in text_or_records)
        return await self._write_text(name, text)

    async def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return await self._write_text(name, buffer.getvalue())


def load_json(path: Path | str) -> Dict[str, Any]:
    """Read a JSON artifact; raises ValueError on an empty or malformed file."""
    raw = Path(path).read_text(encoding="utf-8")
    if not raw.strip():
        raise ValueError(f"{path} is empty")
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path} is not valid JSON: {e}") from e

