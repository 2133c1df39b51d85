"""Download, verify and unpack the dataset distributions.

Each archive is streamed to ``<name>.part``, checked against a pinned
digest and only then renamed into place. An interrupted transfer resumes
with an HTTP range request when the server honours it and restarts from
byte 0 otherwise. Unpacked files are recorded in ``.verified.json`` so a
second fetch of a complete directory touches no network.
"""

from __future__ import annotations

import gzip
import json
import shutil
import tarfile
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Callable

from .data import CIFAR_FILES, MNIST_FILES, STL_FILES
from .errors import ConfigError, DigestError
from .manifest import file_hash

MARKER = ".verified.json"


@dataclass(frozen=True)
class Source:
    url: str
    digest: str  # "<algo>:<hex>"
    members: tuple[str, ...]  # files this archive unpacks to

    @property
    def filename(self) -> str:
        return PurePosixPath(self.url).name


def _mnist(stem: str, digest: str) -> Source:
    return Source(f"https://ossci-datasets.s3.amazonaws.com/mnist/{stem}.gz", f"md5:{digest}", (stem,))


SOURCES: dict[str, list[Source]] = {
    "mnist": [
        _mnist(MNIST_FILES["train"][0], "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
        _mnist(MNIST_FILES["train"][1], "d53e105ee54ea40749a09fcbcd1e9432"),
        _mnist(MNIST_FILES["test"][0], "9fb629c4189551a2d022fa330f9573f3"),
        _mnist(MNIST_FILES["test"][1], "ec29112dd5afa0611ce80d1b7f02629c"),
    ],
    "cifar10": [
        Source(
            "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
            "md5:c32a1d4ab5d03f1284b67883e8d87530",
            tuple(CIFAR_FILES["train"] + CIFAR_FILES["test"]),
        )
    ],
    "stl10": [
        Source(
            "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
            "md5:91f7769df0f17e558f3565bffb0c7dfb",
            tuple(n for pair in STL_FILES.values() for n in pair if n),
        )
    ],
}


def verify(path: Path, digest: str) -> bool:
    algo, _, expected = digest.partition(":")
    return file_hash(path, algo) == expected.lower()


def _open(url: str, offset: int, opener: Callable):
    req = urllib.request.Request(url)
    if offset:
        req.add_header("Range", f"bytes={offset}-")
    resp = opener(req)
    # only a 206 (or an explicit Content-Range) means the server skipped ahead
    resumed = offset and (getattr(resp, "status", None) == 206 or resp.headers.get("Content-Range"))
    return resp, bool(resumed)


def download(url: str, dest: Path, digest: str, opener: Callable = urllib.request.urlopen, retries: int = 3, log=print) -> Path:
    """Fetch ``url`` into ``dest`` and verify it; raises DigestError on mismatch."""
    part = dest.with_name(dest.name + ".part")
    for attempt in range(retries + 1):
        offset = part.stat().st_size if part.exists() else 0
        try:
            resp, resumed = _open(url, offset, opener)
            with resp, part.open("ab" if resumed else "wb") as out:
                if offset and not resumed:
                    log(f"  server ignored range request; restarting {dest.name} from byte 0")
                shutil.copyfileobj(resp, out, 1 << 20)
            break
        except (urllib.error.URLError, OSError) as exc:
            if attempt == retries:
                raise
            log(f"  transfer of {dest.name} interrupted ({exc}); retry {attempt + 1}/{retries}")
            time.sleep(min(2**attempt, 8) * 0.1)
    if not verify(part, digest):
        part.unlink()
        raise DigestError(f"{url}: digest mismatch (expected {digest}); partial file removed")
    part.replace(dest)
    return dest


def _unpack(archive: Path, members: tuple[str, ...], directory: Path) -> list[Path]:
    out = []
    if archive.name.endswith(".tar.gz"):
        wanted = set(members)
        with tarfile.open(archive, "r:gz") as tar:
            for info in tar:
                name = PurePosixPath(info.name).name
                if info.isfile() and name in wanted:
                    # copy by basename only; archive paths are never trusted
                    with tar.extractfile(info) as src, (directory / name).open("wb") as dst:
                        shutil.copyfileobj(src, dst, 1 << 20)
                    out.append(directory / name)
        missing = wanted - {p.name for p in out}
        if missing:
            raise DigestError(f"{archive}: archive lacks {sorted(missing)}")
    else:
        target = directory / members[0]
        with gzip.open(archive) as src, target.open("wb") as dst:
            shutil.copyfileobj(src, dst, 1 << 20)
        out.append(target)
    return out


def _read_marker(directory: Path) -> dict:
    try:
        return json.loads((directory / MARKER).read_text())
    except (FileNotFoundError, json.JSONDecodeError):
        return {}


def fetch(
    dataset: str,
    directory: str | Path,
    sources: list[Source] | None = None,
    opener: Callable = urllib.request.urlopen,
    keep_archives: bool = False,
    log=print,
) -> list[Path]:
    """Make ``directory`` hold the verified, unpacked files of ``dataset``."""
    if sources is None:
        if dataset not in SOURCES:
            raise ConfigError(f"unknown dataset {dataset!r}; expected one of {', '.join(SOURCES)}")
        sources = SOURCES[dataset]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    marker = _read_marker(directory)
    produced = []
    for src in sources:
        done = marker.get(src.filename)
        files = [directory / m for m in src.members]
        if done and done["digest"] == src.digest and all(
            f.exists() and file_hash(f) == done["files"].get(f.name) for f in files
        ):
            log(f"{src.filename}: already verified, skipping")
            produced += files
            continue
        archive = directory / src.filename
        if archive.exists() and verify(archive, src.digest):
            log(f"{src.filename}: archive present and verified")
        else:
            log(f"{src.filename}: downloading {src.url}")
            download(src.url, archive, src.digest, opener, log=log)
        files = _unpack(archive, src.members, directory)
        marker[src.filename] = {"digest": src.digest, "files": {f.name: file_hash(f) for f in files}}
        (directory / MARKER).write_text(json.dumps(marker, indent=2, sort_keys=True) + "\n")
        if not keep_archives:
            archive.unlink()
        produced += files
    return produced
