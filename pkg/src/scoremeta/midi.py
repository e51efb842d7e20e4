"""Minimal Standard MIDI File reader: events, tempo map, note pairing.

Only what conversion needs is decoded: note on/off, program changes and
set-tempo meta events. Everything else is skipped by length.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)
DRUM_CHANNEL = 9

# data-byte counts for channel voice messages, by status high nibble
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


class MidiError(ValueError):
    pass


class DanglingNoteWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MidiEvent:
    tick: int
    track: int
    kind: str  # note_on | note_off | program | tempo
    channel: int = -1
    data1: int = 0
    data2: int = 0


@dataclass
class MidiFile:
    format: int
    division: int  # ticks per quarter when > 0
    smpte: tuple[int, int] | None  # (frames per second, ticks per frame)
    tracks: list[list[MidiEvent]] = field(default_factory=list)
    track_lengths: list[int] = field(default_factory=list)  # tick of end of each track

    @property
    def ticks_per_quarter(self) -> int:
        if self.smpte is not None:
            raise MidiError("file uses SMPTE time division; no quarter-note resolution")
        return self.division

    def merged_events(self) -> list[MidiEvent]:
        """All events in time order; ties keep per-track order, lower tracks first."""
        keyed = [(ev.tick, ev.track, i, ev)
                 for t in self.tracks for i, ev in enumerate(t)]
        keyed.sort(key=lambda k: k[:3])
        return [k[3] for k in keyed]

    def tempo_map(self) -> "TempoMap":
        changes = [(ev.tick, ev.data1) for ev in self.merged_events() if ev.kind == "tempo"]
        return TempoMap(self, changes)


class TempoMap:
    """Piecewise-linear tick → seconds mapping."""

    def __init__(self, midi: MidiFile, changes: list[tuple[int, int]]):
        self.smpte = midi.smpte
        self.division = midi.division
        self._ticks = [0]
        self._tempi = [DEFAULT_TEMPO]
        self._secs = [0.0]
        for tick, tempo in changes:
            if tick == self._ticks[-1]:
                self._tempi[-1] = tempo
                continue
            self._secs.append(self._secs[-1] + self._span(tick - self._ticks[-1], self._tempi[-1]))
            self._ticks.append(tick)
            self._tempi.append(tempo)

    def _span(self, dticks: int, tempo: int) -> float:
        return dticks * tempo / (1e6 * self.division)

    def seconds(self, tick: int) -> float:
        if self.smpte is not None:
            fps, tpf = self.smpte
            return tick / (fps * tpf)
        # last segment starting at or before tick
        lo, hi = 0, len(self._ticks) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._ticks[mid] <= tick:
                lo = mid
            else:
                hi = mid - 1
        return self._secs[lo] + self._span(tick - self._ticks[lo], self._tempi[lo])


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiError("truncated variable-length quantity")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise MidiError("variable-length quantity longer than 4 bytes")


def _parse_track(data: bytes, pos: int, end: int, index: int) -> tuple[list[MidiEvent], int]:
    events: list[MidiEvent] = []
    tick = 0
    status = None
    while pos < end:
        delta, pos = _read_varlen(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiError(f"track {index}: truncated event")
        b = data[pos]
        if b == 0xFF:
            if pos + 2 > end:
                raise MidiError(f"track {index}: truncated meta event")
            mtype = data[pos + 1]
            length, pos = _read_varlen(data, pos + 2, end)
            payload = data[pos:pos + length]
            if len(payload) != length:
                raise MidiError(f"track {index}: truncated meta payload")
            pos += length
            if mtype == 0x51 and length == 3:
                events.append(MidiEvent(tick, index, "tempo", data1=int.from_bytes(payload, "big")))
            elif mtype == 0x2F:
                return events, tick
            continue
        if b in (0xF0, 0xF7):
            length, pos = _read_varlen(data, pos + 1, end)
            pos += length
            status = None
            continue
        if b & 0x80:
            status = b
            pos += 1
        elif status is None:
            raise MidiError(f"track {index}: running status without a prior status byte")
        hi, channel = status >> 4, status & 0x0F
        n = _CHANNEL_DATA_LEN.get(hi)
        if n is None:
            raise MidiError(f"track {index}: unsupported status byte 0x{status:02X}")
        if pos + n > end:
            raise MidiError(f"track {index}: truncated channel message")
        d1 = data[pos]
        d2 = data[pos + 1] if n == 2 else 0
        pos += n
        if hi == 0x9 and d2 > 0:
            events.append(MidiEvent(tick, index, "note_on", channel, d1, d2))
        elif hi == 0x8 or (hi == 0x9 and d2 == 0):
            events.append(MidiEvent(tick, index, "note_off", channel, d1, d2))
        elif hi == 0xC:
            events.append(MidiEvent(tick, index, "program", channel, d1))
    # no end-of-track meta: tolerated
    return events, tick


def parse_midi(data: bytes) -> MidiFile:
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiError("not a standard MIDI file (missing MThd header)")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiError("corrupt MIDI header length")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiError(f"unsupported MIDI format {fmt}")
    smpte = None
    if division & 0x8000:
        fps = 256 - (division >> 8)
        smpte = (fps, division & 0xFF)
    elif division == 0:
        raise MidiError("zero ticks-per-quarter division")
    midi = MidiFile(fmt, division, smpte)
    pos = 8 + hlen
    while pos + 8 <= len(data) and len(midi.tracks) < ntracks:
        cid = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        start, end = pos + 8, pos + 8 + clen
        if end > len(data):
            raise MidiError(f"chunk {cid!r} overruns file")
        if cid == b"MTrk":
            events, last = _parse_track(data, start, end, len(midi.tracks))
            midi.tracks.append(events)
            midi.track_lengths.append(last)
        pos = end
    if len(midi.tracks) != ntracks:
        raise MidiError(f"header declares {ntracks} tracks, found {len(midi.tracks)}")
    return midi


def read_midi(path) -> MidiFile:
    return parse_midi(Path(path).read_bytes())


@dataclass(frozen=True)
class MidiNote:
    channel: int
    program: int
    pitch: int
    velocity: int
    start_tick: int
    end_tick: int


def extract_notes(midi: MidiFile) -> list[MidiNote]:
    """Pair note-ons with note-offs (first in, first out per channel and pitch).

    Notes still sounding at the end of their track are closed there with a
    :class:`DanglingNoteWarning`. Zero-length notes are dropped.
    """
    programs = [0] * 16
    open_notes: dict[tuple[int, int, int], list[tuple[int, int, int]]] = {}
    notes: list[MidiNote] = []
    dropped = 0

    def _close(key, start, vel, prog, tick):
        nonlocal dropped
        if tick > start:
            notes.append(MidiNote(key[1], prog, key[2], vel, start, tick))
        else:
            dropped += 1

    for ev in midi.merged_events():
        if ev.kind == "program":
            programs[ev.channel] = ev.data1
        elif ev.kind == "note_on":
            open_notes.setdefault((ev.track, ev.channel, ev.data1), []).append(
                (ev.tick, ev.data2, programs[ev.channel]))
        elif ev.kind == "note_off":
            # note-offs may come from any track in format 1; match own track first
            key = (ev.track, ev.channel, ev.data1)
            if not open_notes.get(key):
                key = next((k for k, v in open_notes.items()
                            if v and k[1:] == key[1:]), key)
            stack = open_notes.get(key)
            if stack:
                start, vel, prog = stack.pop(0)
                _close(key, start, vel, prog, ev.tick)
    dangling = 0
    for key, stack in open_notes.items():
        for start, vel, prog in stack:
            dangling += 1
            _close(key, start, vel, prog, midi.track_lengths[key[0]])
    if dangling:
        warnings.warn(f"{dangling} note-on(s) without note-off closed at end of track",
                      DanglingNoteWarning, stacklevel=2)
    if dropped:
        warnings.warn(f"dropped {dropped} zero-length note(s)", stacklevel=2)
    notes.sort(key=lambda n: (n.start_tick, n.pitch, n.channel))
    return notes
