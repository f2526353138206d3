from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import MalformedDocument


def atomic_write_text(path, text: str) -> Path:
    """Write via a sibling temp file and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
