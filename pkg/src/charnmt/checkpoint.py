"""Checkpoint container: one directory holding a structured-text manifest,
a raw tensor blob, and copies of the vocabulary/merge files.

Layout:
    manifest.txt   header line, then [config] / [files] / [state] / [tensors]
    params.bin     concatenated little-endian IEEE-754 tensor values
    <role>.txt     one copy per referenced auxiliary file (vocabularies, merges)

The manifest records a sha256 for the blob and every auxiliary file; loading
verifies them. Writes go to a sibling temporary directory first and are
renamed into place, so a crash never leaves a half-written checkpoint under
the final name.
"""

from __future__ import annotations

import hashlib
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, IntegrityError

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "params.bin"
HEADER = "charnmt-checkpoint 1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    config: dict[str, str]
    state: dict[str, int | float]
    tensors: dict[str, np.ndarray]
    files: dict[str, Path]  # role -> path of the copy inside the directory


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(directory, config: dict, state: dict, tensors: dict, files: dict) -> Path:
    """Write a checkpoint. `files` maps role -> source path to copy in."""
    directory = Path(directory)
    for key, value in config.items():
        if "\n" in str(value) or "\t" in str(value):
            raise ContractError(f"config value for {key!r} contains control characters")
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    blob_parts, entries, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype_name = {4: "float32", 8: "float64"}.get(arr.dtype.itemsize)
        if arr.dtype.kind != "f" or dtype_name is None:
            raise ContractError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        shape = ",".join(str(s) for s in arr.shape)
        entries.append(f"{name}\t{dtype_name}\t{shape}\t{offset}\t{len(raw)}")
        blob_parts.append(raw)
        offset += len(raw)
    (tmp / BLOB_NAME).write_bytes(b"".join(blob_parts))

    file_lines = [f"params\t{BLOB_NAME}\t{_sha256(tmp / BLOB_NAME)}"]
    for role, src in files.items():
        src = Path(src)
        rel = f"{role}{src.suffix or '.txt'}"
        shutil.copyfile(src, tmp / rel)
        file_lines.append(f"{role}\t{rel}\t{_sha256(tmp / rel)}")

    lines = [HEADER, "[config]"]
    lines += [f"{k} = {v}" for k, v in config.items()]
    lines.append("[files]")
    lines += file_lines
    lines.append("[state]")
    lines += [f"{k} = {v}" for k, v in state.items()]
    lines.append("[tensors]")
    lines += entries
    (tmp / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return directory


def _parse_manifest(text: str, where: str):
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise IntegrityError(f"{where}: not a checkpoint manifest")
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif line:
            if current is None:
                raise IntegrityError(f"{where}: content before first section")
            sections[current].append(line)
    for required in ("config", "files", "state", "tensors"):
        if required not in sections:
            raise IntegrityError(f"{where}: missing [{required}] section")
    return sections


def _parse_kv(lines, where):
    out = {}
    for line in lines:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise IntegrityError(f"{where}: malformed line {line!r}")
        out[key] = value
    return out


def load_checkpoint(directory) -> Checkpoint:
    """Read and verify a checkpoint directory."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise IntegrityError(f"{directory} is not a checkpoint (no {MANIFEST_NAME})")
    sections = _parse_manifest(manifest.read_text(encoding="utf-8"), str(manifest))

    config = _parse_kv(sections["config"], "config")
    state = {}
    for k, v in _parse_kv(sections["state"], "state").items():
        try:
            state[k] = int(v)
        except ValueError:
            try:
                state[k] = float(v)
            except ValueError:
                raise IntegrityError(f"non-numeric state entry {k} = {v!r}") from None

    files: dict[str, Path] = {}
    blob_path = None
    for line in sections["files"]:
        parts = line.split("\t")
        if len(parts) != 3:
            raise IntegrityError(f"malformed file entry {line!r}")
        role, rel, digest = parts
        path = directory / rel
        if not path.is_file():
            raise IntegrityError(f"checkpoint file missing: {path}")
        if _sha256(path) != digest:
            raise IntegrityError(f"checksum mismatch for {path}")
        if role == "params":
            blob_path = path
        else:
            files[role] = path
    if blob_path is None:
        raise IntegrityError("manifest lists no params blob")

    blob = blob_path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for line in sections["tensors"]:
        parts = line.split("\t")
        if len(parts) != 5:
            raise IntegrityError(f"malformed tensor entry {line!r}")
        name, dtype_name, shape_s, offset_s, size_s = parts
        if dtype_name not in _DTYPES:
            raise IntegrityError(f"tensor {name!r}: unknown dtype {dtype_name!r}")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        offset, size = int(offset_s), int(size_s)
        itemsize = 4 if dtype_name == "float32" else 8
        if int(np.prod(shape, dtype=np.int64)) * itemsize != size:
            raise IntegrityError(f"tensor {name!r}: shape {shape} inconsistent with size {size}")
        if offset < 0 or offset + size > len(blob):
            raise IntegrityError(f"tensor {name!r}: range outside blob")
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype_name], count=size // itemsize,
                            offset=offset).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return Checkpoint(config=config, state=state, tensors=tensors, files=files)
