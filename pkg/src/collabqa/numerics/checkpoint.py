"""Checkpoint files: a text manifest plus a flat little-endian float64 blob.

The manifest lists optional ``#key<TAB>value`` header lines followed by one
``name<TAB>f64<TAB>dim,dim,...`` line per tensor, sorted by name.  The blob
(written next to the manifest with a ``.blob`` suffix) is the concatenation
of the tensors' little-endian float64 bytes in manifest order.  Round trips
are bit-exact.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["CheckpointError", "blob_path", "load_tensors", "save_tensors"]


class CheckpointError(ValueError):
    """A malformed manifest or blob."""


def blob_path(manifest_path) -> Path:
    return Path(str(manifest_path) + ".blob")


def _check_token(token: str, what: str) -> str:
    if not token or "\t" in token or "\n" in token:
        raise CheckpointError(f"{what} {token!r} is empty or contains tab/newline")
    return token


def save_tensors(path, tensors: Mapping[str, np.ndarray],
                 header: Mapping[str, str] | None = None) -> None:
    path = Path(path)
    lines: list[str] = []
    for key in sorted(header or {}):
        value = (header or {})[key]
        lines.append(f"#{_check_token(key, 'header key')}\t{_check_token(value, 'header value')}")
    blobs: list[bytes] = []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim == 0:
            raise CheckpointError(f"tensor {name!r} must have at least one axis")
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"{_check_token(name, 'tensor name')}\tf64\t{dims}")
        blobs.append(np.ascontiguousarray(arr).astype("<f8", copy=False).tobytes())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    blob_path(path).write_bytes(b"".join(blobs))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: manifest not found")
    blob_file = blob_path(path)
    if not blob_file.exists():
        raise CheckpointError(f"{blob_file}: blob not found")

    header: dict[str, str] = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split("\t")
            if len(parts) != 2:
                raise CheckpointError(f"{path}:{lineno}: malformed header line {line!r}")
            header[parts[0]] = parts[1]
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] != "f64":
            raise CheckpointError(f"{path}:{lineno}: malformed tensor line {line!r}")
        name, _, dims = parts
        try:
            shape = tuple(int(d) for d in dims.split(","))
        except ValueError:
            raise CheckpointError(f"{path}:{lineno}: bad shape {dims!r}") from None
        if any(d <= 0 for d in shape):
            raise CheckpointError(f"{path}:{lineno}: non-positive extent in {dims!r}")
        specs.append((name, shape))

    raw = blob_file.read_bytes()
    total = sum(int(np.prod(shape)) for _, shape in specs)
    if len(raw) != total * 8:
        raise CheckpointError(
            f"{blob_file}: expected {total * 8} bytes for {total} values, got {len(raw)}")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape))
        chunk = np.frombuffer(raw, dtype="<f8", count=count, offset=offset * 8)
        tensors[name] = chunk.astype(np.float64).reshape(shape)
        offset += count
    return tensors, header
