"""Note matrices and pianorolls rendered from ground-truth records.

Non-aligned scores are expressed in seconds at a fixed, deliberately unusual
tempo of 20 BPM, whatever tempo the source claims. Any "usual" tempo would
bias the misalignment statistics toward pieces played near it.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotations import NOTE_KINDS, GroundTruth, NoteList

FIXED_BPM = 20.0
SECONDS_PER_BEAT = 60.0 / FIXED_BPM
DEFAULT_FRAME_RATE = 100.0
N_PITCHES = 128

MATRIX_COLUMNS = ("onset_s", "offset_s", "pitch", "velocity", "instrument_index")

PIANOROLL_MAGIC = b"SMPR"
PIANOROLL_VERSION = 1
_PR_HEADER = struct.Struct("<4sIIId")  # magic, version, n_pitches, n_frames, frame_rate


class ScoreError(ValueError):
    pass


def convert_beats_to_seconds(times_in_beats: Iterable[float]) -> list[float]:
    """Beats → seconds at 20 BPM (each beat lasts exactly 3 s)."""
    out = []
    for b in times_in_beats:
        b = float(b)
        if not math.isfinite(b) or b < 0:
            raise ValueError(f"beat position must be finite and non-negative, got {b}")
        out.append(b * SECONDS_PER_BEAT)
    return out


@dataclass(frozen=True)
class NoteMatrix:
    """One row per note: onset_s, offset_s, pitch, velocity, instrument_index.

    ``velocity_absent[i]`` marks rows whose source had no velocity (stored
    as 0 in the velocity column).
    """

    data: np.ndarray
    velocity_absent: np.ndarray
    kinds: tuple[str, ...] = ()  # annotation kind used per instrument_index

    def __len__(self):
        return self.data.shape[0]

    @property
    def onsets(self):
        return self.data[:, 0]

    @property
    def offsets(self):
        return self.data[:, 1]

    @property
    def pitches(self):
        return self.data[:, 2].astype(int)


@dataclass(frozen=True)
class Pianoroll:
    matrix: np.ndarray  # (128, T)
    frame_rate: float

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[1]

    def to_bytes(self) -> bytes:
        """Portable little-endian float32 export with a small header."""
        m = np.ascontiguousarray(self.matrix, dtype="<f4")
        header = _PR_HEADER.pack(PIANOROLL_MAGIC, PIANOROLL_VERSION, m.shape[0], m.shape[1],
                                 float(self.frame_rate))
        return header + m.tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Pianoroll":
        if len(data) < _PR_HEADER.size:
            raise ScoreError("truncated pianoroll header")
        magic, version, rows, cols, rate = _PR_HEADER.unpack_from(data)
        if magic != PIANOROLL_MAGIC or version != PIANOROLL_VERSION:
            raise ScoreError("not a pianoroll file")
        body = data[_PR_HEADER.size:]
        if len(body) != rows * cols * 4:
            raise ScoreError("pianoroll body size does not match header")
        m = np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)
        return cls(m, rate)


def _select(gts: Sequence[GroundTruth], score_type: Sequence[str]) -> str:
    if not score_type:
        raise ScoreError("score_type must list at least one annotation kind")
    for kind in score_type:
        if kind not in NOTE_KINDS:
            raise ScoreError(f"{kind!r} is not a note annotation kind {NOTE_KINDS}")
    for kind in score_type:
        if any(gt.has(kind) for gt in gts):
            return kind
    raise ScoreError(f"none of {list(score_type)} is available for this song")


def note_matrix(gts: Sequence[GroundTruth], score_type: Sequence[str]) -> NoteMatrix:
    """Stack the notes of the first available kind across instruments."""
    kind = _select(gts, score_type)
    rows = []
    absent = []
    for idx, gt in enumerate(gts):
        notes: NoteList = gt.notes(kind)
        has_vel = notes.has_velocities
        for j in range(len(notes)):
            vel = notes.velocities[j] if has_vel else 0
            rows.append((notes.onsets[j], notes.offsets[j], notes.pitches[j], vel, idx))
            absent.append(not has_vel)
    data = np.array(rows, dtype=float).reshape(-1, 5)
    absent_arr = np.array(absent, dtype=bool)
    # onset, then pitch, then instrument; lexsort keys go last-first
    order = np.lexsort((data[:, 1], data[:, 4], data[:, 2], data[:, 0])) if len(data) else []
    return NoteMatrix(data[order], absent_arr[order], (kind,) * len(gts))


def pianoroll_from_matrix(mat: NoteMatrix, frame_rate: float = DEFAULT_FRAME_RATE) -> Pianoroll:
    if frame_rate <= 0:
        raise ScoreError("frame_rate must be positive")
    data = mat.data
    n_frames = int(math.ceil(data[:, 1].max() * frame_rate)) if len(data) else 0
    roll = np.zeros((N_PITCHES, n_frames), dtype=np.float32)
    for (on, off, pitch, vel, _), absent in zip(data, mat.velocity_absent):
        start = int(math.floor(on * frame_rate))
        end = int(math.ceil(off * frame_rate))
        value = 1.0 if absent else vel
        seg = roll[int(pitch), start:end]
        np.maximum(seg, value, out=seg)
    return Pianoroll(roll, float(frame_rate))


def get_score(corpus, i: int, score_type: Sequence[str] = ("precise_alignment",)) -> NoteMatrix:
    """Note matrix of view entry ``i`` using the first available kind in ``score_type``."""
    return note_matrix(corpus.get_gts(i), score_type)


def get_pianoroll(corpus, i: int, score_type: Sequence[str] = ("precise_alignment",),
                  frame_rate: float = DEFAULT_FRAME_RATE) -> Pianoroll:
    return pianoroll_from_matrix(get_score(corpus, i, score_type), frame_rate)


def matrix_to_csv(mat: NoteMatrix) -> str:
    lines = [",".join(MATRIX_COLUMNS + ("velocity_absent",))]
    for row, absent in zip(mat.data, mat.velocity_absent):
        lines.append(f"{float(row[0])!r},{float(row[1])!r},{int(row[2])},{int(row[3])},{int(row[4])},{int(absent)}")
    return "\n".join(lines) + "\n"
