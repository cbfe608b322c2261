from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, TypeVar

HashableT = TypeVar("HashableT", bound=Hashable)

__all__ = (
    "hash_deterministic",
    "canonical_json",
    "output_root",
)

OUTPUT_ROOT_ENV = "DWMELT_OUTPUT_ROOT"


# Order-preserving de-duplication (set() doesn't preserve order).
def unique(x: Iterable[HashableT]) -> list[HashableT]:
    return list(dict.fromkeys(x))


def canonical_json(obj: Any) -> str:
    """
    JSON text with sorted keys and no insignificant whitespace.

    Two equal configurations always produce the same text, which is what the config
    hash is computed over.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def hash_deterministic(s: str) -> str:
    """
    Returns a deterministic hash of the given string.
    """
    return hashlib.sha1(s.encode("utf-8")).hexdigest()


def output_root() -> Path:
    """
    Root directory for run outputs: ``$DWMELT_OUTPUT_ROOT`` or ``./runs``.
    """
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")).expanduser()


def atomic_write(path: str | os.PathLike[str], writer: Callable[[Path], None]) -> Path:
    """
    Write a file by letting ``writer`` fill a temporary sibling, then renaming it.

    Readers never observe a half-written file; on failure the target is untouched.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent)
    )
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        writer(tmp)
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            tmp.unlink()
    return target
