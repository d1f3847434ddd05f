"""Small file helpers shared by the serialization paths."""
from __future__ import annotations

import hashlib
import os
from pathlib import Path


def f17(x: float) -> str:
    """Format a float with 17 significant digits (round-trips float64 exactly)."""
    return format(float(x), ".17g")


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text to a temporary file in the same directory, then rename over path."""
    path = Path(path)
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def digest_lines(lines: list[str]) -> str:
    """Stable 16-hex-char digest of canonicalized key=value lines."""
    blob = "\n".join(sorted(lines)).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
