"""Single-file checkpoints: a text manifest followed by float32 payload.

Layout::

    <8-byte little-endian manifest length N>
    <N bytes of UTF-8 "key=value" lines>
    <little-endian float32 tensors, concatenated in manifest order>

Manifest keys are ``format_version``, ``kind``, ``config`` (compact JSON)
and one ``tensor.<name>=<shape>;<offset>;<dtype>`` line per tensor, with
shape written as ``AxBxC`` and offset counted in elements.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1
DTYPE = "float32le"


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        lines = [f"format_version={FORMAT_VERSION}", f"kind={self.kind}",
                 "config=" + json.dumps(self.config, sort_keys=True, separators=(",", ":"))]
        chunks = []
        offset = 0
        for name, arr in self.tensors.items():
            if any(c in name for c in "=\n;"):
                raise ValueError(f"tensor name {name!r} contains a reserved character")
            arr = np.asarray(arr)
            shape = "x".join(str(n) for n in arr.shape) or "scalar"
            lines.append(f"tensor.{name}={shape};{offset};{DTYPE}")
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            offset += arr.size
        manifest = ("\n".join(lines) + "\n").encode("utf-8")
        return struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if len(blob) < 8:
            raise ValueError("truncated checkpoint")
        (n,) = struct.unpack("<Q", blob[:8])
        manifest = blob[8:8 + n].decode("utf-8")
        payload = blob[8 + n:]
        meta: dict[str, str] = {}
        specs: list[tuple[str, tuple[int, ...], int]] = []
        for line in manifest.splitlines():
            key, _, value = line.partition("=")
            if key.startswith("tensor."):
                shape_s, offset_s, dtype = value.split(";")
                if dtype != DTYPE:
                    raise ValueError(f"unsupported tensor dtype {dtype!r}")
                shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split("x"))
                specs.append((key[len("tensor."):], shape, int(offset_s)))
            else:
                meta[key] = value
        version = int(meta.get("format_version", "-1"))
        if version != FORMAT_VERSION:
            raise ValueError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        flat = np.frombuffer(payload, dtype="<f4")
        expected = sum(int(np.prod(s)) for _, s, _ in specs)
        if flat.size * 4 != len(payload) or flat.size != expected:
            raise ValueError(f"checkpoint payload holds {len(payload)} bytes, manifest needs {expected * 4}")
        tensors = {}
        for name, shape, offset in specs:
            size = int(np.prod(shape))
            tensors[name] = flat[offset:offset + size].astype(np.float64).reshape(shape)
        return cls(meta["kind"], json.loads(meta["config"]), tensors)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def save_params(path: str | Path, kind: str, config: dict, params: Mapping[str, object]) -> None:
    arrays = {name: getattr(p, "data", p) for name, p in params.items()}
    Checkpoint(kind, config, arrays).save(path)


def load_into(path: str | Path, params: Mapping[str, object], kind: str | None = None) -> Checkpoint:
    """Copy checkpoint tensors into the ``.data`` of matching parameters."""
    ckpt = Checkpoint.load(path)
    if kind is not None and ckpt.kind != kind:
        raise ValueError(f"{path}: checkpoint kind {ckpt.kind!r}, expected {kind!r}")
    missing = set(params) - set(ckpt.tensors)
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    for name, p in params.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr
    return ckpt
