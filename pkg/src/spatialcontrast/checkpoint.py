"""Binary checkpoint container.

Layout (all integers u32 little-endian)::

    "SCCK" | version | meta_len | meta (UTF-8 JSON)
    n_params | record * n_params
    n_state  | record * n_state

    record = name_len | name | rank | extent * rank | float32 LE payload

``meta`` carries the model name, the model fingerprint and scalar trainer
state. The state section holds BN running moments and optimizer velocities
in the same record format as the parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .models import ModelSpec

MAGIC = b"SCCK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    meta: dict = field(default_factory=dict)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict[str, np.ndarray] = field(default_factory=dict)


def _pack_records(buf: bytearray, records: dict[str, np.ndarray]) -> None:
    buf += _U32.pack(len(records))
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf += _U32.pack(len(raw)) + raw
        buf += _U32.pack(arr.ndim) + b"".join(_U32.pack(d) for d in arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode(ckpt: Checkpoint) -> bytes:
    buf = bytearray(MAGIC)
    buf += _U32.pack(VERSION)
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    buf += _U32.pack(len(meta)) + meta
    _pack_records(buf, ckpt.params)
    _pack_records(buf, ckpt.state)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.source}: truncated at byte offset {self.pos} reading {what} "
                f"(need {n} bytes, {len(self.data) - self.pos} left)"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def records(self, section: str) -> dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u32(f"{section} count")):
            at = self.pos
            name = self.take(self.u32("name length"), "name").decode("utf-8", errors="replace")
            rank = self.u32(f"rank of {name!r}")
            if rank > 8:
                raise FormatError(f"{self.source}: implausible rank {rank} for {name!r} at byte offset {at}")
            shape = tuple(self.u32(f"extent of {name!r}") for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64))
            payload = self.take(4 * count, f"payload of {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        return out


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at byte offset 4")
    meta_at = r.pos
    try:
        meta = json.loads(r.take(r.u32("meta length"), "meta").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable metadata at byte offset {meta_at}: {exc}") from None
    params = r.records("parameter")
    state = r.records("state")
    if r.pos != len(data):
        raise FormatError(f"{source}: {len(data) - r.pos} trailing bytes at byte offset {r.pos}")
    return Checkpoint(meta, params, state)


def save(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)
    return path


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    return decode(path.read_bytes(), str(path))


# -- model <-> checkpoint --------------------------------------------------


def from_model(model: ModelSpec, velocity: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> Checkpoint:
    state: dict[str, np.ndarray] = {}
    for key, bn in model.bn_states.items():
        if bn.mean is not None:
            state[f"bn/{key}/mean"] = bn.mean
            state[f"bn/{key}/var"] = bn.var
            state[f"bn/{key}/steps"] = np.array([bn.steps], dtype=np.float32)
    for name, v in (velocity or {}).items():
        state[f"velocity/{name}"] = v
    info = {"model": model.name, "fingerprint": model.fingerprint()}
    info.update(meta or {})
    return Checkpoint(info, {k: p.data.copy() for k, p in model.params.items()}, state)


def velocity_of(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    prefix = "velocity/"
    return {k[len(prefix):]: v for k, v in ckpt.state.items() if k.startswith(prefix)}


def check_fingerprint(model: ModelSpec, ckpt: Checkpoint) -> None:
    if ckpt.meta.get("fingerprint") != model.fingerprint():
        raise FormatError(
            f"checkpoint fingerprint {str(ckpt.meta.get('fingerprint'))[:12]} (model {ckpt.meta.get('model')!r}) "
            f"does not match model {model.name!r} ({model.fingerprint()[:12]})"
        )


def restore(model: ModelSpec, ckpt: Checkpoint, part: str = "all") -> list[str]:
    """Copy parameters and BN moments of ``part`` into ``model``.

    The stored fingerprint must match the model; a checkpoint for another
    architecture is rejected rather than partially applied.
    """
    check_fingerprint(model, ckpt)
    wanted = model.parameters(part)
    missing = sorted(set(wanted) - set(ckpt.params))
    if missing:
        raise FormatError(f"checkpoint lacks parameters {missing[:3]}{'...' if len(missing) > 3 else ''}")
    for name, t in wanted.items():
        arr = ckpt.params[name]
        if arr.shape != t.shape:
            raise FormatError(f"checkpoint parameter {name!r} has shape {arr.shape}, model expects {t.shape}")
        t.data = arr.astype(np.float32, copy=True)
        t.grad = None
    for key, bn in model.bn_states.items():
        if part != "all" and (model.layer_of(key) < model.tap) != (part == "trunk"):
            continue
        if f"bn/{key}/mean" in ckpt.state:
            bn.mean = ckpt.state[f"bn/{key}/mean"].copy()
            bn.var = ckpt.state[f"bn/{key}/var"].copy()
            bn.steps = int(ckpt.state[f"bn/{key}/steps"][0])
        else:
            bn.reset()
    return sorted(wanted)
