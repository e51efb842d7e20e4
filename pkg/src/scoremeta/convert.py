"""Conversion of source-dataset annotation files into ground-truth records.

Converters live in a registry and are looked up by name (the ``converter``
field of a definition's install recipe) or by file extension. Third parties
add their own with the :func:`convert` decorator::

    from scoremeta.convert import convert
    from scoremeta.annotations import prototype_gt

    @convert([".myext"])
    def my_format(filename, **options):
        out = prototype_gt()
        ...
        return out
"""
from __future__ import annotations

import csv
import importlib
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .annotations import (NOTE_KINDS, AnnotationError, GroundTruth, NoteList,
                          coerce_ground_truth, encode_ground_truth)
from .definitions import DatasetDefinition, FrameworkConfig, detect_installed
from .midi import DRUM_CHANNEL, extract_notes, read_midi
from .scores import convert_beats_to_seconds

log = logging.getLogger(__name__)

ConverterFn = Callable[..., Any]


class ConversionError(ValueError):
    pass


@dataclass(frozen=True)
class ConverterEntry:
    name: str
    extensions: tuple[str, ...]
    function: ConverterFn

    def __post_init__(self):
        exts = tuple(e.lower() if e.startswith(".") else "." + e.lower()
                     for e in self.extensions)
        if not exts:
            raise ValueError(f"converter {self.name!r} needs at least one extension")
        object.__setattr__(self, "extensions", exts)

    def __call__(self, path, **options) -> list[GroundTruth]:
        return normalize_output(self.function(path, **options))


class ConverterRegistry:
    def __init__(self):
        self._by_name: dict[str, ConverterEntry] = {}

    def register(self, entry: ConverterEntry) -> ConverterEntry:
        if entry.name in self._by_name:
            raise ValueError(f"converter {entry.name!r} already registered")
        self._by_name[entry.name] = entry
        return entry

    def convert(self, extensions: Sequence[str], name: str | None = None):
        """Decorator registering ``fn`` for ``extensions`` (name defaults to fn.__name__)."""
        def deco(fn):
            self.register(ConverterEntry(name or fn.__name__, tuple(extensions), fn))
            return fn
        return deco

    def get(self, name: str) -> ConverterEntry:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConversionError(f"no converter named {name!r}") from None

    def for_extension(self, ext: str) -> list[ConverterEntry]:
        ext = ext.lower()
        return [e for e in self._by_name.values() if ext in e.extensions]

    def resolve(self, path, name: str | None = None) -> ConverterEntry:
        """By-name lookup wins; otherwise the file's final suffix must match
        exactly one converter."""
        if name is not None:
            return self.get(name)
        suffix = Path(path).suffix.lower()
        matches = self.for_extension(suffix)
        if not matches:
            raise ConversionError(f"no converter for extension {suffix!r}")
        if len(matches) > 1:
            names = ", ".join(sorted(e.name for e in matches))
            raise ConversionError(f"extension {suffix!r} is ambiguous ({names}); name a converter")
        return matches[0]

    def names(self) -> list[str]:
        return sorted(self._by_name)

    def __contains__(self, name) -> bool:
        return name in self._by_name


REGISTRY = ConverterRegistry()


def register_converter(entry: ConverterEntry, registry: ConverterRegistry = REGISTRY) -> ConverterEntry:
    return registry.register(entry)


def convert(extensions: Sequence[str], name: str | None = None):
    return REGISTRY.convert(extensions, name)


def load_plugins(modules: Sequence[str]) -> None:
    """Import plugin modules; they register converters at import time."""
    for mod in modules:
        importlib.import_module(mod)


def normalize_output(out: Any) -> list[GroundTruth]:
    if isinstance(out, (GroundTruth, Mapping)):
        return [coerce_ground_truth(out)]
    if isinstance(out, Sequence) and not isinstance(out, (str, bytes)):
        return [coerce_ground_truth(o) for o in out]
    raise ConversionError(f"converter returned {type(out).__name__}, expected ground truth")


def _check_kind(kind: str) -> None:
    if kind not in NOTE_KINDS:
        raise ConversionError(f"alignment kind must be one of {NOTE_KINDS}, got {kind!r}")


def _to_seconds(times: list[float], time_unit: str) -> list[float]:
    if time_unit == "seconds":
        return times
    if time_unit == "beats":
        return convert_beats_to_seconds(times)
    raise ConversionError(f"time_unit must be 'seconds' or 'beats', got {time_unit!r}")


DEFAULT_COLUMNS = {"onset": 0, "pitch": 1, "duration": 2}


def convert_csv_notes(path, column_map: Mapping[str, int] | None = None, *,
                      kind: str = "precise_alignment", delimiter: str = ",",
                      skip_rows: int = 0, time_unit: str = "seconds",
                      instrument: int = 0) -> GroundTruth:
    """Delimiter-separated note table → ground truth.

    ``column_map`` maps roles to column indices. ``onset`` and ``pitch`` are
    required, plus either ``duration`` (offset = onset + duration) or
    ``offset``. ``velocity`` and ``note_name`` are optional.
    """
    _check_kind(kind)
    cols = dict(DEFAULT_COLUMNS if column_map is None else column_map)
    if "onset" not in cols or "pitch" not in cols:
        raise ConversionError("column_map needs 'onset' and 'pitch'")
    if ("duration" in cols) == ("offset" in cols):
        raise ConversionError("column_map needs exactly one of 'duration' or 'offset'")
    onsets, offsets, pitches, vels, names = [], [], [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        for rowno, row in enumerate(csv.reader(f, delimiter=delimiter), start=1):
            if rowno <= skip_rows or not row or all(not c.strip() for c in row):
                continue
            try:
                onset = float(row[cols["onset"]])
                pitch = int(round(float(row[cols["pitch"]])))
                if "duration" in cols:
                    dur = float(row[cols["duration"]])
                    if dur < 0:
                        raise ConversionError(f"{path}: row {rowno}: negative duration {dur}")
                    end = onset + dur
                else:
                    end = float(row[cols["offset"]])
                if "velocity" in cols:
                    vels.append(int(round(float(row[cols["velocity"]]))))
                if "note_name" in cols:
                    names.append(row[cols["note_name"]].strip())
            except (ValueError, IndexError) as exc:
                if isinstance(exc, ConversionError):
                    raise
                raise ConversionError(f"{path}: row {rowno}: cannot parse {row!r}: {exc}") from exc
            if not (math.isfinite(onset) and math.isfinite(end)):
                raise ConversionError(f"{path}: row {rowno}: non-finite time")
            onsets.append(onset)
            offsets.append(end)
            pitches.append(pitch)
    onsets = _to_seconds(onsets, time_unit)
    offsets = _to_seconds(offsets, time_unit)
    try:
        notes = NoteList(onsets, offsets, pitches, vels, names)
    except AnnotationError as exc:
        raise ConversionError(f"{path}: {exc}") from exc
    return GroundTruth(instrument=instrument, **{kind: notes})


def convert_midi(path, alignment_kind: str = "precise_alignment") -> list[GroundTruth]:
    """MIDI file → one record per (channel, program) group.

    Ticks become seconds through the file's tempo map, except for
    ``non_aligned`` where ticks become beats and then seconds at the fixed
    20 BPM, ignoring every tempo event. Channel 10 maps to instrument 128.
    """
    _check_kind(alignment_kind)
    midi = read_midi(path)
    notes = extract_notes(midi)
    if alignment_kind == "non_aligned":
        tpq = midi.ticks_per_quarter
        to_sec = lambda tick: convert_beats_to_seconds([tick / tpq])[0]  # noqa: E731
    else:
        to_sec = midi.tempo_map().seconds
    groups: dict[tuple[int, int], list] = defaultdict(list)
    for n in notes:
        groups[(n.channel, n.program)].append(n)
    out = []
    for (channel, program), group in sorted(groups.items()):
        nl = NoteList(
            onsets=[to_sec(n.start_tick) for n in group],
            offsets=[to_sec(n.end_tick) for n in group],
            pitches=[n.pitch for n in group],
            velocities=[n.velocity for n in group],
        )
        instrument = 128 if channel == DRUM_CHANNEL else program
        out.append(GroundTruth(instrument=instrument, **{alignment_kind: nl}))
    return out


def _is_number(s: str) -> bool:
    try:
        return math.isfinite(float(s))
    except ValueError:
        return False


def _hz_to_midi(f: float) -> int:
    if f <= 0:
        raise ConversionError(f"frequency must be positive, got {f}")
    return int(round(69 + 12 * math.log2(f / 440.0)))


def convert_label_track(path, *, kind: str = "precise_alignment", value_unit: str = "midi",
                        time_unit: str = "seconds", instrument: int = 0) -> GroundTruth:
    """Time-value label export (``time<TAB>value[<TAB>duration][<TAB>label]``).

    Rows carrying a duration become notes (value = pitch); rows without one
    become beat times. A file must not mix the two.
    """
    _check_kind(kind)
    if value_unit not in ("midi", "hz"):
        raise ConversionError("value_unit must be 'midi' or 'hz'")
    text = Path(path).read_text(encoding="utf-8")
    delimiter = "\t" if "\t" in text else ","
    notes, beats = [], []
    for rowno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(delimiter)]
        if not _is_number(cells[0]):
            raise ConversionError(f"{path}: row {rowno}: bad time {cells[0]!r}")
        t = float(cells[0])
        if len(cells) >= 3 and _is_number(cells[2]) and _is_number(cells[1]):
            dur = float(cells[2])
            if dur <= 0:
                raise ConversionError(f"{path}: row {rowno}: non-positive duration {dur}")
            value = float(cells[1])
            pitch = _hz_to_midi(value) if value_unit == "hz" else int(round(value))
            notes.append((rowno, t, t + dur, pitch))
        else:
            beats.append((rowno, t))
        if notes and beats:
            raise ConversionError(
                f"{path}: row {rowno}: mixed schema (rows with and without duration)")
    if beats:
        return GroundTruth(instrument=instrument,
                           beats_non_aligned=_to_seconds([t for _, t in beats], time_unit))
    try:
        nl = NoteList(_to_seconds([n[1] for n in notes], time_unit),
                      _to_seconds([n[2] for n in notes], time_unit),
                      [n[3] for n in notes])
    except AnnotationError as exc:
        raise ConversionError(f"{path}: {exc}") from exc
    return GroundTruth(instrument=instrument, **{kind: nl})


REGISTRY.register(ConverterEntry("csv_notes", (".csv",), convert_csv_notes))
REGISTRY.register(ConverterEntry("midi", (".mid", ".midi"), convert_midi))
REGISTRY.register(ConverterEntry("label_track", (".txt", ".lab", ".tsv"), convert_label_track))


@dataclass
class SongConversion:
    song_index: int
    written: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (source path, message)


@dataclass
class ConversionReport:
    dataset: str
    converter: str
    songs: list[SongConversion] = field(default_factory=list)

    @property
    def n_written(self) -> int:
        return sum(len(s.written) for s in self.songs)

    @property
    def n_failed(self) -> int:
        return sum(len(s.failures) for s in self.songs)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "converter": self.converter,
            "written": self.n_written,
            "failed": self.n_failed,
            "songs": [{"index": s.song_index, "written": s.written,
                       "failures": [{"source": p, "error": m} for p, m in s.failures]}
                      for s in self.songs],
        }


def annotation_sources(dataset: DatasetDefinition, song_index: int) -> list[str]:
    """Original annotation file for each ground-truth path of a song."""
    song = dataset.songs[song_index]
    if song.annotation_sources is not None:
        return list(song.annotation_sources)
    suffix = dataset.install.source_suffix
    if suffix is None:
        raise ConversionError(
            f"{dataset.name}: song {song_index} lists no annotation_sources and the "
            "install recipe has no source_suffix")
    out = []
    for p in song.ground_truth_paths:
        if not p.endswith(".json.gz"):
            raise ConversionError(f"{dataset.name}: ground-truth path {p!r} must end in .json.gz")
        out.append(p[: -len(".json.gz")] + suffix)
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _convert_song(dataset: DatasetDefinition, config: FrameworkConfig, entry: ConverterEntry,
                  options: Mapping[str, Any], index: int, sources: list[str]) -> SongConversion:
    song = dataset.songs[index]
    result = SongConversion(index)
    # distinct output files per source, in first-reference order
    targets: dict[str, list[str]] = {}
    for gt_path, src in zip(song.ground_truth_paths, sources):
        outs = targets.setdefault(src, [])
        if gt_path not in outs:
            outs.append(gt_path)
    for src, outs in targets.items():
        try:
            records = entry(config.resolve(src), **options)
            if len(records) == 1:
                assigned = records * len(outs)
            elif len(records) == len(outs):
                assigned = records
            else:
                raise ConversionError(
                    f"converter produced {len(records)} records for {len(outs)} annotation files")
            payloads = [encode_ground_truth(r) for r in assigned]
        except Exception as exc:  # converter plugins may raise anything
            log.warning("%s song %d: %s: %s", dataset.name, index, src, exc)
            result.failures.append((src, f"{type(exc).__name__}: {exc}"))
            continue
        for out, payload in zip(outs, payloads):
            _atomic_write(config.resolve(out), payload)
            result.written.append(out)
    return result


def run_conversion(dataset: DatasetDefinition, config: FrameworkConfig,
                   registry: ConverterRegistry = REGISTRY, max_workers: int = 1) -> ConversionReport:
    """Apply the dataset's converter to every song; failures are per file."""
    name = dataset.install.converter
    if name is None:
        raise ConversionError(f"{dataset.name}: install recipe names no converter")
    entry = registry.get(name)
    if not detect_installed(config, [dataset])[dataset.name]:
        raise ConversionError(f"{dataset.name} is not installed under {config.install_dir}")
    sources = [annotation_sources(dataset, i) for i in range(len(dataset.songs))]
    options = dict(dataset.install.converter_options)
    report = ConversionReport(dataset.name, name)
    jobs = range(len(dataset.songs))
    if max_workers <= 1:
        report.songs = [_convert_song(dataset, config, entry, options, i, sources[i]) for i in jobs]
    else:
        with ThreadPoolExecutor(max_workers) as pool:
            report.songs = list(pool.map(
                lambda i: _convert_song(dataset, config, entry, options, i, sources[i]), jobs))
    return report
