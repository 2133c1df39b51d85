"""Run manifests: what a command read, what it wrote, and with which settings.

A manifest's ``input_key`` is a content hash over the command name, the
config snapshot and the bytes of every input file. Re-running a command
whose manifest carries the same key, with every recorded output still
present and unchanged, is a no-op.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

_CHUNK = 1 << 20


def file_hash(path: str | Path, algo: str = "sha256") -> str:
    h = hashlib.new(algo)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(_CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def input_key(command: str, config: dict, inputs: dict[str, str]) -> str:
    """Hash of the command, its config snapshot and its input digests."""
    blob = json.dumps({"command": command, "config": config, "inputs": inputs}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict[str, str]  # path -> sha256
    input_key: str = ""
    outputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    started: str = field(default_factory=_now)
    finished: str = ""

    def __post_init__(self):
        if not self.input_key:
            self.input_key = input_key(self.command, self.config, self.inputs)

    def record_output(self, path: str | Path) -> None:
        self.outputs[str(path)] = file_hash(path)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        self.finished = _now()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def hash_inputs(paths) -> dict[str, str]:
    return {str(p): file_hash(p) for p in sorted(Path(p) for p in paths)}


def is_complete(manifest_path: str | Path, key: str) -> bool:
    """True when a finished manifest with ``key`` exists and its outputs are intact."""
    path = Path(manifest_path)
    if not path.exists():
        return False
    try:
        m = RunManifest.load(path)
    except (ValueError, TypeError):
        return False
    if m.input_key != key or not m.finished or not m.outputs:
        return False
    return all(Path(p).exists() and file_hash(p) == digest for p, digest in m.outputs.items())
