"""Framework configuration (``datasets.json``) and dataset definitions.

A definition is one JSON document per dataset, named ``<name>.json`` and
validated against ``schema/definition.schema.json``. Every path inside a
definition is relative to the user's install directory, so the same
definition works for any layout the user picks.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Any, Iterable, Mapping, Sequence

import jsonschema

from .annotations import ANNOTATION_KINDS

log = logging.getLogger(__name__)

UNKNOWN = "unknown"
CONFIG_FILENAME = "datasets.json"


class ConfigError(ValueError):
    pass


class DefinitionError(ValueError):
    """Schema or semantic violation in a dataset definition."""

    def __init__(self, dataset: str, field_path: str, message: str, file=None):
        self.dataset = dataset
        self.field_path = field_path
        self.file = file
        where = f"{dataset}:{field_path}" if field_path else dataset
        super().__init__(f"{where}: {message}")


def official_definitions_dir() -> Path:
    """Directory holding the bundled official definitions."""
    return Path(str(resources.files("scoremeta") / "official"))


@lru_cache(maxsize=1)
def definition_schema() -> dict:
    text = (resources.files("scoremeta") / "schema" / "definition.schema.json").read_text("utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class FrameworkConfig:
    install_dir: Path
    decompress_dir: Path | None = None
    definition_dirs: tuple[Path, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "install_dir", Path(self.install_dir))
        if self.decompress_dir is not None:
            object.__setattr__(self, "decompress_dir", Path(self.decompress_dir))
        dirs = tuple(Path(d) for d in self.definition_dirs) or (official_definitions_dir(),)
        object.__setattr__(self, "definition_dirs", dirs)

    def resolve(self, relpath: str) -> Path:
        """Absolute path of a definition-relative path."""
        return self.install_dir.joinpath(*PurePosixPath(relpath).parts)


def load_config(path, definition_dirs: Sequence = ()) -> FrameworkConfig:
    """Read ``datasets.json``. Relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if "install_dir" not in doc:
        raise ConfigError(f"{path}: missing required field 'install_dir'")
    base = path.resolve().parent

    def _dir(key):
        value = doc[key]
        if not isinstance(value, str) or not value:
            raise ConfigError(f"{path}: {key} must be a non-empty string")
        p = Path(os.path.expanduser(value))
        return Path(os.path.normpath(p if p.is_absolute() else base / p))

    install_dir = _dir("install_dir")
    decompress_dir = _dir("decompress_dir") if doc.get("decompress_dir") is not None else None
    return FrameworkConfig(install_dir, decompress_dir, tuple(definition_dirs))


@dataclass(frozen=True)
class InstallRecipe:
    url: str
    unpack: str = "none"
    checksum: tuple[str, str] | None = None  # (algorithm, hex digest)
    post_process: tuple[Mapping[str, Any], ...] = ()
    shell_steps: tuple[str, ...] = ()
    converter: str | None = None
    converter_options: Mapping[str, Any] = field(default_factory=dict)
    source_suffix: str | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"url": self.url, "unpack": self.unpack}
        if self.checksum is not None:
            d["checksum"] = {"algorithm": self.checksum[0], "value": self.checksum[1]}
        if self.post_process:
            d["post_process"] = [dict(s) for s in self.post_process]
        if self.shell_steps:
            d["shell"] = list(self.shell_steps)
        if self.converter is not None:
            d["converter"] = self.converter
        if self.converter_options:
            d["converter_options"] = dict(self.converter_options)
        if self.source_suffix is not None:
            d["source_suffix"] = self.source_suffix
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "InstallRecipe":
        checksum = d.get("checksum")
        return cls(
            url=d["url"],
            unpack=d.get("unpack", "none"),
            checksum=(checksum["algorithm"], checksum["value"].lower()) if checksum else None,
            post_process=tuple(dict(s) for s in d.get("post_process", ())),
            shell_steps=tuple(d.get("shell", ())),
            converter=d.get("converter"),
            converter_options=dict(d.get("converter_options", {})),
            source_suffix=d.get("source_suffix"),
        )


@dataclass(frozen=True)
class SongEntry:
    composer: str
    instruments: tuple[str, ...]
    recording_paths: tuple[str, ...]
    source_paths: tuple[str, ...] = ()
    ground_truth_paths: tuple[str, ...] = ()
    title: str | None = None
    # original annotation files, parallel to ground_truth_paths; consumed by conversion
    annotation_sources: tuple[str, ...] | None = None

    def all_paths(self) -> list[str]:
        return list(self.recording_paths) + list(self.source_paths) + list(self.ground_truth_paths)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {}
        if self.title is not None:
            d["title"] = self.title
        d["composer"] = self.composer
        d["instruments"] = list(self.instruments)
        d["recording"] = list(self.recording_paths)
        if self.source_paths:
            d["sources"] = list(self.source_paths)
        d["ground_truth"] = list(self.ground_truth_paths)
        if self.annotation_sources is not None:
            d["annotation_sources"] = list(self.annotation_sources)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SongEntry":
        ann = d.get("annotation_sources")
        return cls(
            composer=d["composer"],
            instruments=tuple(d["instruments"]),
            recording_paths=tuple(d["recording"]),
            source_paths=tuple(d.get("sources", ())),
            ground_truth_paths=tuple(d.get("ground_truth", ())),
            title=d.get("title"),
            annotation_sources=tuple(ann) if ann is not None else None,
        )


@dataclass(frozen=True)
class DatasetDefinition:
    name: str
    ensemble: bool | str
    instruments: tuple[str, ...] | str
    install: InstallRecipe
    ground_truth: Mapping[str, int]
    songs: tuple[SongEntry, ...] = ()
    sources_format: str | None = None
    recording_format: str | None = None
    f0_frame_rate: float | None = None
    description: str | None = None
    license: str | None = None

    def level(self, kind: str) -> int:
        """Availability level declared for annotation ``kind`` (0 when absent)."""
        if kind not in ANNOTATION_KINDS:
            raise KeyError(f"unknown annotation kind {kind!r}")
        return self.ground_truth.get(kind, 0)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name}
        if self.description is not None:
            d["description"] = self.description
        if self.license is not None:
            d["license"] = self.license
        d["ensemble"] = self.ensemble
        d["instruments"] = (list(self.instruments)
                            if not isinstance(self.instruments, str) else self.instruments)
        if self.sources_format is not None:
            d["sources"] = {"format": self.sources_format}
        if self.recording_format is not None:
            d["recording"] = {"format": self.recording_format}
            if self.f0_frame_rate is not None:
                d["recording"]["f0_frame_rate"] = self.f0_frame_rate
        d["install"] = self.install.to_dict()
        d["ground_truth"] = dict(self.ground_truth)
        d["songs"] = [s.to_dict() for s in self.songs]
        return d


def _check_song(name: str, i: int, song: SongEntry) -> None:
    where = f"songs[{i}]"
    gts = song.ground_truth_paths
    if gts and len(gts) != len(song.instruments):
        raise DefinitionError(
            name, f"{where}.ground_truth",
            f"{len(gts)} annotation paths for {len(song.instruments)} instruments; "
            "list one path per instrument (repeat shared files)")
    if song.annotation_sources is not None and len(song.annotation_sources) != len(gts):
        raise DefinitionError(name, f"{where}.annotation_sources",
                              "must be parallel to ground_truth")


def parse_definition(doc: Any, origin: str = "<definition>") -> DatasetDefinition:
    """Validate a decoded definition document and build a DatasetDefinition."""
    name = doc.get("name", origin) if isinstance(doc, dict) else origin
    validator = jsonschema.Draft202012Validator(definition_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = ".".join(str(p) if not isinstance(p, int) else f"[{p}]"
                        for p in err.absolute_path).replace(".[", "[")
        raise DefinitionError(str(name), path, err.message, file=origin)

    rec = doc.get("recording")
    defn = DatasetDefinition(
        name=doc["name"],
        ensemble=doc["ensemble"],
        instruments=(tuple(doc["instruments"]) if isinstance(doc["instruments"], list)
                     else doc["instruments"]),
        install=InstallRecipe.from_dict(doc["install"]),
        ground_truth={k: doc["ground_truth"][k] for k in ANNOTATION_KINDS
                      if k in doc["ground_truth"]},
        songs=tuple(SongEntry.from_dict(s) for s in doc["songs"]),
        sources_format=doc["sources"]["format"] if "sources" in doc else None,
        recording_format=rec["format"] if rec else None,
        f0_frame_rate=rec.get("f0_frame_rate") if rec else None,
        description=doc.get("description"),
        license=doc.get("license"),
    )
    for i, song in enumerate(defn.songs):
        _check_song(defn.name, i, song)
    return defn


def load_definition_file(path) -> DatasetDefinition:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DefinitionError(path.stem, "", f"malformed JSON: {exc}", file=str(path)) from exc
    defn = parse_definition(doc, origin=str(path))
    if defn.name != path.stem:
        raise DefinitionError(defn.name, "name",
                              f"file {path.name} must be named {defn.name}.json", file=str(path))
    return defn


def load_definitions(dirs: Iterable) -> list[DatasetDefinition]:
    """Parse every ``*.json`` definition in ``dirs`` (in order, files sorted by name)."""
    out: list[DatasetDefinition] = []
    seen: dict[str, Path] = {}
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"definitions directory not found: {d}")
        for path in sorted(d.glob("*.json")):
            defn = load_definition_file(path)
            if defn.name in seen:
                raise DefinitionError(defn.name, "name",
                                      f"duplicate dataset name (also defined in {seen[defn.name]})",
                                      file=str(path))
            seen[defn.name] = path
            out.append(defn)
    return out


def write_definition(defn: DatasetDefinition, directory) -> Path:
    path = Path(directory) / f"{defn.name}.json"
    path.write_text(json.dumps(defn.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def detect_installed(config: FrameworkConfig,
                     defs: Sequence[DatasetDefinition]) -> dict[str, bool]:
    """Map each dataset name to whether ``install_dir/<name>/`` exists."""
    root = config.install_dir
    if root.exists() and not root.is_dir():
        raise ConfigError(f"install_dir is not a directory: {root}")
    if root.exists() and not os.access(root, os.R_OK | os.X_OK):
        raise ConfigError(f"install_dir unreadable: {root}")
    return {d.name: (root / d.name).is_dir() for d in defs}
