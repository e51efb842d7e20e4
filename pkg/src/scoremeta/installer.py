"""Download, verify, unpack and post-process datasets into ``install_dir``.

Each dataset is staged in a hidden temporary directory next to its final
location and renamed into place only once every step succeeded, so a failed
install never leaves ``install_dir/<name>`` behind. Datasets whose directory
already exists are skipped.
"""
from __future__ import annotations

import glob
import hashlib
import logging
import os
import shutil
import subprocess
import tarfile
import tempfile
import time
import urllib.error
import urllib.request
import warnings
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Sequence

from .definitions import DatasetDefinition, FrameworkConfig, detect_installed

log = logging.getLogger(__name__)

MAX_PARALLEL_DOWNLOADS = 2
DOWNLOAD_RETRIES = 3
BACKOFF_SECONDS = 0.5
CHUNK = 1 << 16


class InstallError(RuntimeError):
    pass


class ChecksumError(InstallError):
    pass


@dataclass
class DatasetResult:
    name: str
    status: str  # installed | skipped | failed
    message: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "message": self.message}


@dataclass
class InstallReport:
    results: list[DatasetResult] = field(default_factory=list)

    def status(self, name: str) -> str:
        for r in self.results:
            if r.name == name:
                return r.status
        raise KeyError(name)

    @property
    def ok(self) -> bool:
        return all(r.status != "failed" for r in self.results)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "datasets": [r.to_dict() for r in self.results]}


def download(url: str, dest: Path, retries: int = DOWNLOAD_RETRIES,
             backoff: float = BACKOFF_SECONDS, timeout: float = 60.0) -> Path:
    """HTTP(S) GET into ``dest``, resuming a partial file when the server
    honours range requests."""
    if not url.lower().startswith(("http://", "https://")):
        raise InstallError(f"refusing non-HTTP(S) URL {url!r}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    last: Exception | None = None
    for attempt in range(retries):
        have = dest.stat().st_size if dest.exists() else 0
        req = urllib.request.Request(url, headers={"User-Agent": "scoremeta-installer"})
        if have:
            req.add_header("Range", f"bytes={have}-")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                mode = "ab" if have and resp.status == 206 else "wb"
                with open(dest, mode) as f:
                    shutil.copyfileobj(resp, f, CHUNK)
            return dest
        except urllib.error.HTTPError as exc:
            last = exc
            if exc.code == 416:  # range beyond end: restart from scratch
                dest.unlink(missing_ok=True)
            elif 400 <= exc.code < 500:
                break
        except (urllib.error.URLError, OSError) as exc:
            last = exc
        if attempt + 1 < retries:
            time.sleep(backoff * 2 ** attempt)
    raise InstallError(f"download failed for {url}: {last}")


def file_digest(path: Path, algorithm: str) -> str:
    h = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def verify_checksum(path: Path, checksum: tuple[str, str]) -> None:
    algorithm, expected = checksum
    actual = file_digest(path, algorithm)
    if actual.lower() != expected.lower():
        raise ChecksumError(f"{algorithm} mismatch for {path.name}: "
                            f"expected {expected}, got {actual}")


def _inside(root: Path, target: Path) -> bool:
    root = root.resolve()
    target = target.resolve()
    return target == root or root in target.parents


def unpack(archive: Path, kind: str, dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    try:
        if kind == "zip":
            with zipfile.ZipFile(archive) as zf:
                for member in zf.namelist():
                    if not _inside(dest, dest / member):
                        raise InstallError(f"archive member escapes target: {member}")
                zf.extractall(dest)
        elif kind == "tar-gzip":
            with tarfile.open(archive, "r:gz") as tf:
                if hasattr(tarfile, "data_filter"):
                    tf.extractall(dest, filter="data")
                else:  # pragma: no cover - old interpreters
                    for m in tf.getmembers():
                        if not _inside(dest, dest / m.name) or m.issym() or m.islnk():
                            raise InstallError(f"unsafe archive member: {m.name}")
                    tf.extractall(dest)
        elif kind == "none":
            shutil.copy2(archive, dest / archive.name)
        else:
            raise InstallError(f"unknown archive kind {kind!r}")
    except (zipfile.BadZipFile, tarfile.TarError, EOFError) as exc:
        raise InstallError(f"cannot unpack {archive.name}: {exc}") from exc


def _local(root: Path, rel: str) -> Path:
    p = root.joinpath(*PurePosixPath(rel).parts)
    if not _inside(root, p):
        raise InstallError(f"post-process path escapes dataset directory: {rel}")
    return p


def run_post_process(root: Path, steps: Sequence[dict]) -> None:
    """Declarative steps relative to the dataset directory.

    ``move``/``rename`` accept a glob in ``src``; when ``dst`` is an existing
    directory the matches are moved inside it. ``unpack`` extracts a nested
    archive (into ``dst`` or its own directory) and removes it unless
    ``remove`` is false.
    """
    for step in steps:
        op = step["op"]
        if op in ("move", "rename"):
            matches = sorted(glob.glob(str(_local(root, step["src"]))))
            if not matches:
                raise InstallError(f"post-process {op}: nothing matches {step['src']!r}")
            dst = _local(root, step["dst"])
            for m in matches:
                target = dst / Path(m).name if dst.is_dir() else dst
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.move(m, target)
        elif op == "delete":
            p = _local(root, step["path"])
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
        elif op == "unpack":
            p = _local(root, step["path"])
            dst = _local(root, step["dst"]) if "dst" in step else p.parent
            unpack(p, step["kind"], dst)
            if step.get("remove", True):
                p.unlink()
        else:
            raise InstallError(f"unknown post-process op {op!r}")


def run_shell_steps(root: Path, commands: Sequence[str]) -> None:
    for cmd in commands:
        log.info("shell step in %s: %s", root, cmd)
        proc = subprocess.run(cmd, shell=True, cwd=root, capture_output=True, text=True)
        if proc.returncode != 0:
            raise InstallError(f"shell step failed ({proc.returncode}): {cmd}\n{proc.stderr}")


def install_one(defn: DatasetDefinition, config: FrameworkConfig,
                allow_shell: bool = False) -> DatasetResult:
    recipe = defn.install
    final = config.install_dir / defn.name
    if final.is_dir():
        return DatasetResult(defn.name, "skipped", "already installed")
    if recipe.shell_steps and not allow_shell:
        return DatasetResult(defn.name, "failed",
                             "recipe contains shell steps; rerun with shell steps allowed")
    config.install_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{defn.name}-", dir=config.install_dir))
    download_dir = config.decompress_dir or staging
    archive = Path(download_dir) / (PurePosixPath(recipe.url.split("?")[0]).name
                                    or f"{defn.name}.download")
    try:
        download(recipe.url, archive)
        if recipe.checksum is not None:
            verify_checksum(archive, recipe.checksum)
        else:
            warnings.warn(f"{defn.name}: no checksum in install recipe; download not verified",
                          stacklevel=2)
        work = staging / defn.name
        unpack(archive, recipe.unpack, work)
        run_post_process(work, recipe.post_process)
        if recipe.shell_steps:
            run_shell_steps(work, recipe.shell_steps)
        os.replace(work, final)
    except Exception as exc:
        log.error("installing %s failed: %s", defn.name, exc)
        return DatasetResult(defn.name, "failed", f"{type(exc).__name__}: {exc}")
    finally:
        shutil.rmtree(staging, ignore_errors=True)
        if config.decompress_dir is not None:
            archive.unlink(missing_ok=True)
    return DatasetResult(defn.name, "installed")


def install(datasets: Sequence[str], config: FrameworkConfig,
            definitions: Sequence[DatasetDefinition], allow_shell: bool = False,
            max_workers: int = MAX_PARALLEL_DOWNLOADS) -> InstallReport:
    """Install the named datasets; already-present ones are reported as skipped."""
    by_name = {d.name: d for d in definitions}
    unknown = [n for n in datasets if n not in by_name]
    if unknown:
        raise InstallError(f"unknown dataset(s): {', '.join(unknown)}")
    wanted = [by_name[n] for n in dict.fromkeys(datasets)]
    present = detect_installed(config, wanted)
    results: dict[str, DatasetResult] = {
        d.name: DatasetResult(d.name, "skipped", "already installed")
        for d in wanted if present[d.name]}
    todo = [d for d in wanted if not present[d.name]]
    if todo:
        with ThreadPoolExecutor(max(1, min(max_workers, len(todo)))) as pool:
            for res in pool.map(lambda d: install_one(d, config, allow_shell), todo):
                results[res.name] = res
    return InstallReport([results[d.name] for d in wanted])


@dataclass
class VerificationReport:
    dataset: str
    missing: list[str] = field(default_factory=list)
    n_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.missing

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "checked": self.n_checked, "missing": self.missing}


def verify(dataset: DatasetDefinition, config: FrameworkConfig) -> VerificationReport:
    """List every song path of an installed dataset that does not exist."""
    if not detect_installed(config, [dataset])[dataset.name]:
        raise InstallError(f"{dataset.name} is not installed under {config.install_dir}")
    if not dataset.songs:
        warnings.warn(f"{dataset.name}: definition lists no songs; nothing to verify",
                      stacklevel=2)
    report = VerificationReport(dataset.name)
    seen = set()
    for song in dataset.songs:
        for rel in song.all_paths():
            if rel in seen:
                continue
            seen.add(rel)
            report.n_checked += 1
            if not config.resolve(rel).exists():
                report.missing.append(rel)
    return report
