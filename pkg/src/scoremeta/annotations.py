"""Canonical ground-truth records and their compressed on-disk codec.

A ground-truth file holds the annotations of one instrument of one song. On
disk it is a gzip-compressed UTF-8 JSON object::

    {
      "precise_alignment": {"onsets": [], "offsets": [], "pitches": [],
                            "velocities": [], "notes": []},
      "broad_alignment":   {...same shape...},
      "non_aligned":       {...same shape...},
      "f0": [],
      "beats_non_aligned": [],
      "instrument": 0
    }

Times are seconds. ``non_aligned`` times are seconds at the fixed 20 BPM
tempo (see :func:`scoremeta.scores.convert_beats_to_seconds`). Unvoiced f0
frames are stored as 0.0 Hz. Empty sections mean "not available".
"""
from __future__ import annotations

import gzip
import json
import math
import zlib
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Iterable, Mapping, Sequence

NOTE_KINDS = ("precise_alignment", "broad_alignment", "non_aligned")
ANNOTATION_KINDS = NOTE_KINDS + ("f0", "beats_non_aligned", "instrument")
NOTE_FIELDS = ("onsets", "offsets", "pitches", "velocities", "notes")

DRUM_KIT = 128
GZIP_LEVEL = 9
FILE_SUFFIX = ".json.gz"


class AnnotationError(ValueError):
    """Raised for ground-truth records that violate their invariants or
    cannot be decoded."""


class AvailabilityLevel(IntEnum):
    UNAVAILABLE = 0
    MANUAL = 1  # human expert or mechanical transducer (e.g. Disklavier)
    ALGORITHMIC = 2


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x: Any) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)
            and math.isfinite(x))


@dataclass(frozen=True)
class NoteList:
    """Parallel arrays describing a set of notes."""

    onsets: tuple[float, ...] = ()
    offsets: tuple[float, ...] = ()
    pitches: tuple[int, ...] = ()
    velocities: tuple[int, ...] = ()
    note_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("onsets", "offsets", "pitches", "velocities", "note_names"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        n = len(self.onsets)
        if len(self.offsets) != n or len(self.pitches) != n:
            raise AnnotationError(
                f"onsets/offsets/pitches lengths differ: "
                f"{n}/{len(self.offsets)}/{len(self.pitches)}")
        for name in ("velocities", "note_names"):
            k = len(getattr(self, name))
            if k not in (0, n):
                raise AnnotationError(f"{name} has length {k}, expected 0 or {n}")
        for i, (on, off) in enumerate(zip(self.onsets, self.offsets)):
            if not (_is_real(on) and _is_real(off)):
                raise AnnotationError(f"note {i}: non-finite or non-numeric time")
            if on < 0:
                raise AnnotationError(f"note {i}: negative onset {on}")
            if not off > on:
                raise AnnotationError(f"note {i}: offset {off} <= onset {on}")
        for i, p in enumerate(self.pitches):
            if not _is_int(p) or not 0 <= p <= 127:
                raise AnnotationError(f"note {i}: pitch {p!r} outside 0..127")
        for i, v in enumerate(self.velocities):
            if not _is_int(v) or not 0 <= v <= 127:
                raise AnnotationError(f"note {i}: velocity {v!r} outside 0..127")
        for i, s in enumerate(self.note_names):
            if not isinstance(s, str):
                raise AnnotationError(f"note {i}: note name {s!r} is not a string")

    def __len__(self) -> int:
        return len(self.onsets)

    @property
    def has_velocities(self) -> bool:
        return len(self.velocities) == len(self.onsets) and len(self.onsets) > 0

    def to_dict(self) -> dict:
        return {
            "onsets": [float(x) for x in self.onsets],
            "offsets": [float(x) for x in self.offsets],
            "pitches": list(self.pitches),
            "velocities": list(self.velocities),
            "notes": list(self.note_names),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NoteList":
        if not isinstance(d, Mapping):
            raise AnnotationError(f"note list must be an object, got {type(d).__name__}")
        unknown = set(d) - set(NOTE_FIELDS)
        if unknown:
            raise AnnotationError(f"unknown note list keys: {sorted(unknown)}")
        values = {}
        for key in NOTE_FIELDS:
            v = d.get(key, [])
            if not isinstance(v, list):
                raise AnnotationError(f"{key} must be an array")
            values[key] = v
        for key in ("onsets", "offsets"):
            if not all(_is_real(x) for x in values[key]):
                raise AnnotationError(f"{key} must contain finite numbers")
        return cls(
            onsets=tuple(float(x) for x in values["onsets"]),
            offsets=tuple(float(x) for x in values["offsets"]),
            pitches=tuple(values["pitches"]),
            velocities=tuple(values["velocities"]),
            note_names=tuple(values["notes"]),
        )


@dataclass(frozen=True)
class GroundTruth:
    """Annotations of one instrument in one song."""

    instrument: int = 0
    precise_alignment: NoteList = field(default_factory=NoteList)
    broad_alignment: NoteList = field(default_factory=NoteList)
    non_aligned: NoteList = field(default_factory=NoteList)
    f0: tuple[float, ...] = ()
    beats_non_aligned: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "f0", tuple(self.f0))
        object.__setattr__(self, "beats_non_aligned", tuple(self.beats_non_aligned))
        self.validate()

    def validate(self) -> None:
        if not _is_int(self.instrument) or not 0 <= self.instrument <= DRUM_KIT:
            raise AnnotationError(f"instrument {self.instrument!r} outside 0..128")
        for kind in NOTE_KINDS:
            notes = getattr(self, kind)
            if not isinstance(notes, NoteList):
                raise AnnotationError(f"{kind} must be a NoteList")
        for name in ("f0", "beats_non_aligned"):
            for i, x in enumerate(getattr(self, name)):
                if not _is_real(x) or x < 0:
                    raise AnnotationError(f"{name}[{i}] = {x!r} must be finite and >= 0")

    def notes(self, kind: str) -> NoteList:
        if kind not in NOTE_KINDS:
            raise KeyError(f"{kind!r} is not a note annotation kind")
        return getattr(self, kind)

    def has(self, kind: str) -> bool:
        """True when section ``kind`` is non-empty."""
        if kind == "instrument":
            return True
        return len(getattr(self, kind)) > 0

    def to_dict(self) -> dict:
        d: dict[str, Any] = {kind: getattr(self, kind).to_dict() for kind in NOTE_KINDS}
        d["f0"] = [float(x) for x in self.f0]
        d["beats_non_aligned"] = [float(x) for x in self.beats_non_aligned]
        d["instrument"] = self.instrument
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        if not isinstance(d, Mapping):
            raise AnnotationError("ground truth must be a JSON object")
        unknown = set(d) - set(ANNOTATION_KINDS)
        if unknown:
            raise AnnotationError(f"unknown ground-truth keys: {sorted(unknown)}")
        if "instrument" not in d:
            raise AnnotationError("missing required field 'instrument'")
        kwargs: dict[str, Any] = {"instrument": d["instrument"]}
        for kind in NOTE_KINDS:
            kwargs[kind] = NoteList.from_dict(d.get(kind, {}))
        for name in ("f0", "beats_non_aligned"):
            v = d.get(name, [])
            if not isinstance(v, list) or not all(_is_real(x) for x in v):
                raise AnnotationError(f"{name} must be an array of finite numbers")
            kwargs[name] = tuple(float(x) for x in v)
        return cls(**kwargs)

    def replace_notes(self, kind: str, notes: NoteList) -> "GroundTruth":
        if kind not in NOTE_KINDS:
            raise KeyError(kind)
        return replace(self, **{kind: notes})


def prototype_gt() -> dict:
    """A fresh, empty, mutable ground-truth dictionary in on-disk layout.

    Custom converters may fill it and return it as is::

        out = prototype_gt()
        out["precise_alignment"]["onsets"].append(0.5)
    """
    return GroundTruth().to_dict()


def encode_ground_truth(gt: GroundTruth) -> bytes:
    """Serialize ``gt`` to deterministic gzip-compressed JSON bytes."""
    if not isinstance(gt, GroundTruth):
        raise TypeError(f"expected GroundTruth, got {type(gt).__name__}")
    gt.validate()
    for kind in NOTE_KINDS:
        getattr(gt, kind).validate()
    text = json.dumps(gt.to_dict(), separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)
    return gzip.compress(text.encode("utf-8"), compresslevel=GZIP_LEVEL, mtime=0)


def decode_ground_truth(data: bytes) -> GroundTruth:
    """Inverse of :func:`encode_ground_truth`; validates the result."""
    try:
        raw = gzip.decompress(data)
    except (OSError, EOFError, zlib.error) as exc:
        raise AnnotationError(f"not a valid gzip stream: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"malformed JSON: {exc}") from exc
    return GroundTruth.from_dict(doc)


def write_ground_truth(path, gt: GroundTruth) -> None:
    with open(path, "wb") as f:
        f.write(encode_ground_truth(gt))


def read_ground_truth(path) -> GroundTruth:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_ground_truth(data)
    except AnnotationError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


def merge_ground_truths(parts: Sequence[GroundTruth]) -> list[tuple[int, GroundTruth]]:
    """Present per-instrument records as ``(instrument, record)`` pairs.

    Order is preserved. A record referenced several times (one shared file
    for e.g. first and second violins) appears once per reference, and the
    entries share the same object.
    """
    if not parts:
        raise ValueError("merge_ground_truths needs at least one part")
    return [(gt.instrument, gt) for gt in parts]


def coerce_ground_truth(obj: Any) -> GroundTruth:
    """Accept a GroundTruth or an on-disk-layout dict (as filled from
    :func:`prototype_gt`)."""
    if isinstance(obj, GroundTruth):
        return obj
    if isinstance(obj, Mapping):
        return GroundTruth.from_dict(obj)
    raise AnnotationError(f"cannot interpret {type(obj).__name__} as ground truth")


def iter_note_kinds(kinds: Iterable[str]) -> list[str]:
    out = []
    for k in kinds:
        if k not in NOTE_KINDS:
            raise KeyError(f"{k!r} is not a note annotation kind; expected one of {NOTE_KINDS}")
        out.append(k)
    return out
