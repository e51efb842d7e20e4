"""Miniature synthetic collection used by the tests and example scripts.

Three small datasets (ten songs, one-second 16-bit PCM audio, hand-written
annotations) exercise every part of the query API without any copyrighted
material:

* ``PianoSolo``: solo piano, human-level precise alignment.
* ``Chamber``: ensembles, one annotation file per instrument, including
  one file shared by two violins.
* ``Stems``: mixes given only as separated stems, ensemble unknown.

:func:`build_misalignment_corpus` writes a larger generated dataset whose
deviations follow a known distribution, for testing model training.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import GroundTruth, NoteList, write_ground_truth
from .audio import write_wav
from .scores import SECONDS_PER_BEAT

SAMPLE_RATE = 8000
DURATION = 1.0


@dataclass(frozen=True)
class FixturePaths:
    root: Path
    config: Path
    definitions: Path
    install_dir: Path


def _tone(freq: float, amp: float, phase: float = 0.0) -> np.ndarray:
    t = np.arange(int(SAMPLE_RATE * DURATION)) / SAMPLE_RATE
    return amp * np.sin(2 * np.pi * freq * t + phase)


def _hz(pitch: int) -> float:
    return 440.0 * 2 ** ((pitch - 69) / 12)


def _score(beats_pitches) -> tuple[list[float], list[float], list[int]]:
    """(start beat, end beat, pitch) triples → seconds at 20 BPM."""
    on = [b0 * SECONDS_PER_BEAT for b0, _, _ in beats_pitches]
    off = [b1 * SECONDS_PER_BEAT for _, b1, _ in beats_pitches]
    return on, off, [p for _, _, p in beats_pitches]


def _notes(onsets, offsets, pitches, velocities=()) -> NoteList:
    return NoteList(tuple(onsets), tuple(offsets), tuple(pitches), tuple(velocities))


# PianoSolo: aligned onsets/offsets in seconds, score in beats; velocities present.
_PIANO_SONGS = [
    dict(title="Sonata in C, first bars", composer="Wolfgang Amadeus Mozart",
         precise=([0.05, 0.26, 0.52, 0.74], [0.24, 0.50, 0.70, 0.98], [60, 64, 67, 72]),
         broad=([0.05, 0.27, 0.51, 0.75], [0.24, 0.50, 0.70, 0.98]),
         score=[(0, 1, 60), (1, 2, 64), (2, 3, 67), (3, 4, 72)],
         velocities=[70, 64, 66, 80]),
    dict(title="Rondo, opening", composer="Mozart",
         precise=([0.00, 0.11, 0.23, 0.34, 0.48], [0.10, 0.22, 0.33, 0.46, 0.93], [71, 69, 68, 69, 72]),
         broad=([0.00, 0.12, 0.22, 0.35, 0.47], [0.10, 0.22, 0.33, 0.46, 0.93]),
         score=[(0, 0.5, 71), (0.5, 1, 69), (1, 1.5, 68), (1.5, 2, 69), (2, 4, 72)],
         velocities=[60, 55, 58, 57, 75]),
    dict(title="Bagatelle, opening", composer="Ludwig van Beethoven",
         precise=([0.02, 0.14, 0.27, 0.39, 0.52, 0.66], [0.13, 0.26, 0.38, 0.50, 0.64, 0.97],
                  [76, 75, 76, 75, 76, 71]),
         broad=([0.02, 0.14, 0.27, 0.39, 0.52, 0.66], [0.13, 0.26, 0.38, 0.50, 0.64, 0.97]),
         score=[(0, 0.5, 76), (0.5, 1, 75), (1, 1.5, 76), (1.5, 2, 75), (2, 2.5, 76), (2.5, 4, 71)],
         velocities=[50, 48, 52, 49, 55, 62]),
    dict(title="Improvisation", composer="unknown",
         precise=([0.10, 0.40], [0.35, 0.90], [48, 55]),
         broad=([0.10, 0.40], [0.35, 0.90]),
         score=[(0, 2, 48), (2, 4, 55)],
         velocities=[90, 85]),
]


def _piano_dataset(install: Path) -> dict:
    name = "PianoSolo"
    songs = []
    for i, s in enumerate(_PIANO_SONGS):
        base = f"{name}/song{i}"
        (install / name).mkdir(parents=True, exist_ok=True)
        on, off, p = s["precise"]
        bon, boff = s["broad"]
        son, soff, sp = _score(s["score"])
        gt = GroundTruth(
            instrument=0,
            precise_alignment=_notes(on, off, p, s["velocities"]),
            broad_alignment=_notes(bon, boff, p, s["velocities"]),
            non_aligned=_notes(son, soff, sp),
        )
        write_ground_truth(install / f"{base}.json.gz", gt)
        # original annotation for the csv converter: onset,pitch,duration
        rows = [f"{a!r},{pp},{b - a!r}" for a, b, pp in zip(on, off, p)]
        (install / f"{base}.csv").write_text("\n".join(rows) + "\n")
        audio = sum(_tone(_hz(pp), 0.2) for pp in p)
        write_wav(install / f"{base}.wav", audio, SAMPLE_RATE)
        songs.append({"title": s["title"], "composer": s["composer"], "instruments": ["piano"],
                      "recording": [f"{base}.wav"], "ground_truth": [f"{base}.json.gz"]})
    return {
        "name": name, "description": "Synthetic solo piano fixtures",
        "ensemble": False, "instruments": ["piano"], "recording": {"format": "wav"},
        "install": {"url": "https://example.invalid/PianoSolo.zip", "unpack": "zip",
                    "converter": "csv_notes", "source_suffix": ".csv"},
        "ground_truth": {"precise_alignment": 1, "broad_alignment": 2, "non_aligned": 1,
                         "f0": 0, "beats_non_aligned": 0, "instrument": 1},
        "songs": songs,
    }


def _chamber_dataset(install: Path) -> dict:
    name = "Chamber"
    d = install / name
    d.mkdir(parents=True, exist_ok=True)
    frame_rate = 10.0  # f0 frames per second for this dataset

    def part(program, broad, score, f0_pitch):
        on, off, p = broad
        son, soff, sp = _score(score)
        n_frames = int(DURATION * frame_rate)
        f0 = [_hz(f0_pitch) if k % 5 else 0.0 for k in range(n_frames)]  # every 5th unvoiced
        return GroundTruth(instrument=program,
                           broad_alignment=_notes(on, off, p),
                           non_aligned=_notes(son, soff, sp),
                           f0=f0,
                           beats_non_aligned=[0.0, 3.0, 6.0, 9.0])

    songs = []
    # song 0: Mozart violin + piano
    gts = {
        "song0_violin": part(40, ([0.0, 0.5], [0.45, 0.95], [76, 79]), [(0, 2, 76), (2, 4, 79)], 76),
        "song0_piano": part(0, ([0.0, 0.25, 0.5], [0.24, 0.49, 0.9], [48, 52, 55]),
                            [(0, 1, 48), (1, 2, 52), (2, 4, 55)], 48),
    }
    songs.append({"title": "Violin sonata, opening", "composer": "W. A. Mozart",
                  "instruments": ["violin", "piano"],
                  "recording": ["Chamber/song0.wav"],
                  "ground_truth": ["Chamber/song0_violin.json.gz", "Chamber/song0_piano.json.gz"]})
    # song 1: Haydn trio, both violins share one annotation file
    gts.update({
        "song1_violins": part(40, ([0.0, 0.3, 0.6], [0.28, 0.58, 0.95], [67, 69, 71]),
                              [(0, 1, 67), (1, 2, 69), (2, 3, 71)], 67),
        "song1_cello": part(42, ([0.0, 0.5], [0.48, 0.97], [36, 43]), [(0, 2, 36), (2, 4, 43)], 36),
    })
    songs.append({"title": "String trio, minuet", "composer": "Joseph Haydn",
                  "instruments": ["violin", "violin", "cello"],
                  "recording": ["Chamber/song1.wav"],
                  "ground_truth": ["Chamber/song1_violins.json.gz", "Chamber/song1_violins.json.gz",
                                   "Chamber/song1_cello.json.gz"]})
    # song 2: a Mozart piano piece inside an ensemble dataset (must not pass ensemble=False)
    gts["song2_piano"] = part(0, ([0.1, 0.6], [0.55, 0.99], [60, 62]), [(0, 2, 60), (2, 4, 62)], 60)
    songs.append({"title": "Minuet for keyboard", "composer": "Mozart", "instruments": ["piano"],
                  "recording": ["Chamber/song2.wav"],
                  "ground_truth": ["Chamber/song2_piano.json.gz"]})
    for key, gt in gts.items():
        write_ground_truth(d / f"{key}.json.gz", gt)
    for i, freqs in enumerate([(659.3, 130.8), (392.0, 65.4), (261.6, 293.7)]):
        write_wav(d / f"song{i}.wav", sum(_tone(f, 0.3) for f in freqs), SAMPLE_RATE)
    return {
        "name": name, "description": "Synthetic chamber-music fixtures",
        "ensemble": True, "instruments": ["violin", "cello", "piano"],
        "recording": {"format": "wav", "f0_frame_rate": frame_rate},
        "install": {"url": "https://example.invalid/Chamber.tar.gz", "unpack": "tar-gzip"},
        "ground_truth": {"precise_alignment": 0, "broad_alignment": 2, "non_aligned": 1,
                         "f0": 1, "beats_non_aligned": 1, "instrument": 1},
        "songs": songs,
    }


def _stems_dataset(install: Path) -> dict:
    name = "Stems"
    d = install / name
    d.mkdir(parents=True, exist_ok=True)
    layout = [
        ("Serenade, excerpt", "Mozart", [("violin", 40, 76, 0.5), ("flute", 73, 84, 0.3)]),
        ("Symphony, excerpt", "Anton Bruckner",
         [("violin", 40, 67, 0.4), ("cello", 42, 43, 0.6), ("flute", 73, 79, 0.2),
          ("bassoon", 70, 48, 0.35)]),
        ("Sonata movement", "Mozart", [("piano", 0, 60, 0.5)]),
    ]
    songs = []
    for i, (title, composer, parts) in enumerate(layout):
        stems, gts = [], []
        for k, (instr, program, pitch, amp) in enumerate(parts):
            stem = f"{name}/song{i}_{instr}.wav"
            write_wav(install / stem, _tone(_hz(pitch), amp, phase=0.3 * k), SAMPLE_RATE)
            stems.append(stem)
            gt_path = f"{name}/song{i}_{instr}.json.gz"
            write_ground_truth(install / gt_path, GroundTruth(
                instrument=program,
                broad_alignment=_notes([0.0, 0.5], [0.49, 0.99], [pitch, pitch + 2]),
                non_aligned=_notes([0.0, 6.0], [6.0, 12.0], [pitch, pitch + 2])))
            gts.append(gt_path)
        entry = {"title": title, "composer": composer, "instruments": [p[0] for p in parts],
                 "recording": stems, "ground_truth": gts}
        if len(stems) > 1:
            entry["sources"] = stems
        songs.append(entry)
    return {
        "name": name, "description": "Synthetic multitrack fixtures; mixes are sums of stems",
        "ensemble": "unknown", "instruments": ["violin", "cello", "flute", "bassoon", "piano"],
        "sources": {"format": "wav"}, "recording": {"format": "wav"},
        "install": {"url": "https://example.invalid/Stems.zip", "unpack": "zip"},
        "ground_truth": {"precise_alignment": 0, "broad_alignment": 1, "non_aligned": 1,
                         "f0": 0, "beats_non_aligned": 0, "instrument": 1},
        "songs": songs,
    }


# (dataset, song index) pairs satisfying piano + solo + Mozart + precise alignment
LISTING1_EXPECTED = {("PianoSolo", 0), ("PianoSolo", 1)}


def build_fixture_collection(root) -> FixturePaths:
    """Write definitions, audio and annotations under ``root``."""
    root = Path(root)
    install = root / "install"
    defs = root / "definitions"
    install.mkdir(parents=True, exist_ok=True)
    defs.mkdir(parents=True, exist_ok=True)
    for doc in (_piano_dataset(install), _chamber_dataset(install), _stems_dataset(install)):
        (defs / f"{doc['name']}.json").write_text(json.dumps(doc, indent=2) + "\n")
    config = root / "datasets.json"
    config.write_text(json.dumps({"install_dir": "install"}) + "\n")
    return FixturePaths(root, config, defs, install)


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / x.std()


def build_misalignment_corpus(root, n_songs: int = 300, notes_per_song: int = 24,
                              seed: int = 0, name: str = "Synthetic") -> tuple[FixturePaths, dict]:
    """Songs whose deviations ``aligned - score`` have exactly prescribed
    per-piece mean and std.

    Piece means are 0.3 s with probability 0.6 and uniform on [-0.5, 1.0]
    otherwise; piece stds are uniform on [0.02, 0.15]. Returns the fixture
    paths and the true per-piece parameters.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    install = root / "install"
    defs = root / "definitions"
    (install / name).mkdir(parents=True, exist_ok=True)
    defs.mkdir(parents=True, exist_ok=True)
    truth = {"means": [], "stds": []}
    songs = []
    for i in range(n_songs):
        mu = 0.3 if rng.random() < 0.6 else float(rng.uniform(-0.5, 1.0))
        sd = float(rng.uniform(0.02, 0.15))
        beats = np.cumsum(rng.choice([0.5, 1.0, 2.0], size=notes_per_song)) + 1.0
        s_on = (beats - beats[0] + 1.0) * SECONDS_PER_BEAT
        s_off = s_on + rng.choice([0.5, 1.0], size=notes_per_song) * SECONDS_PER_BEAT
        pitches = rng.integers(40, 90, size=notes_per_song)
        a_on = s_on + mu + sd * _standardize(rng.standard_normal(notes_per_song))
        a_off = s_off + mu + sd * _standardize(rng.standard_normal(notes_per_song))
        gt = GroundTruth(
            instrument=0,
            precise_alignment=_notes(a_on.tolist(), a_off.tolist(), pitches.tolist()),
            non_aligned=_notes(s_on.tolist(), s_off.tolist(), pitches.tolist()),
        )
        path = f"{name}/song{i:04d}.json.gz"
        write_ground_truth(install / path, gt)
        songs.append({"composer": "unknown", "instruments": ["piano"],
                      "recording": [f"{name}/song{i:04d}.wav"], "ground_truth": [path]})
        truth["means"].append(mu)
        truth["stds"].append(sd)
    doc = {"name": name, "ensemble": False, "instruments": ["piano"],
           "install": {"url": "https://example.invalid/synthetic.zip", "unpack": "zip"},
           "ground_truth": {"precise_alignment": 1, "non_aligned": 1, "instrument": 1},
           "songs": songs}
    (defs / f"{name}.json").write_text(json.dumps(doc) + "\n")
    config = root / "datasets.json"
    config.write_text(json.dumps({"install_dir": "install"}) + "\n")
    return FixturePaths(root, config, defs, install), truth
