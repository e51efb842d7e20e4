"""Statistical misalignment model and artificial non-aligned scores.

Training compares aligned note times with their non-aligned (score) times.
For every piece it computes the mean and standard deviation of the
onset and offset deviations ``aligned - non_aligned``. Four histograms are
kept:

* standardized onset deviations ``(d - mean) / std``,
* standardized offset deviations,
* per-piece means (seconds),
* per-piece standard deviations (seconds).

The standardized histograms are rescaled so their largest absolute edge is
1.0, and the std histogram so its largest edge is 0.2.

Generation draws one (mean, std) per song and one standardized value per
note onset and offset. It then adds ``z * std + mean`` to the aligned times.
"""
from __future__ import annotations

import json
import logging
import math
import shutil
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from .annotations import (GroundTruth, NoteList, encode_ground_truth, read_ground_truth)

log = logging.getLogger(__name__)

N_BINS = 100
TARGET_MAX_VALUE = 1.0  # standardized deviations, seconds
TARGET_MAX_STD = 0.2
MIN_DURATION = 0.01
MAX_OFFSET_REDRAWS = 10
ZERO_STD = 1e-9

Seed = Union[int, np.random.SeedSequence, np.random.Generator, None]


class MisalignmentError(ValueError):
    pass


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.ndim != 1 or masses.ndim != 1 or len(edges) != len(masses) + 1:
            raise MisalignmentError("histogram needs len(edges) == len(masses) + 1")
        if np.any(np.diff(edges) < 0):
            raise MisalignmentError("bin edges must be non-decreasing")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise MisalignmentError(f"masses must be non-negative and sum to 1 (sum={masses.sum()})")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_values(cls, values, bins: int = N_BINS, nonnegative: bool = False) -> "Histogram":
        """Equal-width histogram over the observed range of ``values``."""
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            raise MisalignmentError("cannot build a histogram from no values")
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            pad = max(abs(lo), 1.0) * 1e-6
            lo, hi = lo - pad, hi + pad
        if nonnegative:
            lo = max(lo, 0.0)
        counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
        return cls(edges, counts / counts.sum())

    def normalized(self, target: float) -> "Histogram":
        """Linear rescale of the edges so that max |edge| == target exactly."""
        edges = self.bin_edges.copy()
        k = int(np.argmax(np.abs(edges)))
        peak = abs(edges[k])
        if peak == 0:
            return self
        edges *= target / peak
        edges[k] = math.copysign(target, edges[k])
        edges = np.maximum.accumulate(edges)  # guard rounding at the clamped edge
        return Histogram(edges, self.masses)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.bin_edges).max())

    @property
    def mode_bin(self) -> int:
        return int(np.argmax(self.masses))

    def sample(self, rng: Seed, size=None):
        """Bin chosen by mass, value uniform within the bin."""
        rng = _rng(rng)
        idx = rng.choice(len(self.masses), size=size, p=self.masses)
        u = rng.random(size)
        lo = self.bin_edges[idx]
        hi = self.bin_edges[np.asarray(idx) + 1]
        out = lo + u * (hi - lo)
        return float(out) if size is None else out

    def cdf(self, x):
        """Piecewise-linear CDF of the histogram density."""
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.bin_edges, cum, left=0.0, right=1.0)

    def to_dict(self) -> dict:
        return {"bin_edges": [float(e) for e in self.bin_edges],
                "masses": [float(m) for m in self.masses]}

    @classmethod
    def from_dict(cls, d) -> "Histogram":
        return cls(np.array(d["bin_edges"], dtype=float), np.array(d["masses"], dtype=float))

    @classmethod
    def point(cls, value: float = 0.0) -> "Histogram":
        """Degenerate histogram concentrated at ``value``."""
        return cls(np.array([value, value]), np.array([1.0]))


@dataclass(frozen=True)
class MisalignmentModel:
    hist_onset_z: Histogram
    hist_offset_z: Histogram
    hist_mean: Histogram
    hist_std: Histogram
    target_max_value: float = TARGET_MAX_VALUE
    target_max_std: float = TARGET_MAX_STD
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "hist_onset_z": self.hist_onset_z.to_dict(),
            "hist_offset_z": self.hist_offset_z.to_dict(),
            "hist_mean": self.hist_mean.to_dict(),
            "hist_std": self.hist_std.to_dict(),
            "normalization": {"target_max_value": self.target_max_value,
                              "target_max_std": self.target_max_std},
            "training": self.metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "MisalignmentModel":
        norm = d.get("normalization", {})
        return cls(
            Histogram.from_dict(d["hist_onset_z"]),
            Histogram.from_dict(d["hist_offset_z"]),
            Histogram.from_dict(d["hist_mean"]),
            Histogram.from_dict(d["hist_std"]),
            norm.get("target_max_value", TARGET_MAX_VALUE),
            norm.get("target_max_std", TARGET_MAX_STD),
            dict(d.get("training", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MisalignmentModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _aligned_kind(defn, gt: GroundTruth) -> str | None:
    """Aligned section usable for training: precise preferred, human-level only."""
    for kind in ("precise_alignment", "broad_alignment"):
        if defn.level(kind) == 1 and gt.has(kind):
            return kind
    return None


@dataclass
class PieceStats:
    dataset: str
    song_index: int
    onset_dev: np.ndarray
    offset_dev: np.ndarray


def collect_deviations(corpus) -> tuple[list[PieceStats], list[dict]]:
    """Per-piece deviations ``aligned - non_aligned`` over eligible songs.

    Notes are paired by position after checking that both annotations list
    the same pitch sequence; songs where they differ are skipped.
    """
    pieces, skipped = [], []
    for i, ref in enumerate(corpus.view):
        defn = corpus.definition(ref.dataset_name)
        if defn.level("non_aligned") != 1:
            continue
        if not any(defn.level(k) == 1 for k in ("precise_alignment", "broad_alignment")):
            continue
        on_dev, off_dev = [], []
        reason = None
        gts = corpus.get_gts(i)
        seen = set()
        for gt in gts:
            if id(gt) in seen:  # shared file listed for several instruments
                continue
            seen.add(id(gt))
            kind = _aligned_kind(defn, gt)
            if kind is None or not gt.has("non_aligned"):
                continue
            a, s = gt.notes(kind), gt.non_aligned
            if a.pitches != s.pitches:
                reason = "pitch sequences of aligned and non-aligned notes differ"
                break
            on_dev.extend(np.subtract(a.onsets, s.onsets))
            off_dev.extend(np.subtract(a.offsets, s.offsets))
        if reason:
            skipped.append({"dataset": ref.dataset_name, "index": ref.song_index, "reason": reason})
            continue
        if on_dev:
            pieces.append(PieceStats(ref.dataset_name, ref.song_index,
                                     np.array(on_dev), np.array(off_dev)))
    return pieces, skipped


def train(corpus, bins: int = N_BINS) -> MisalignmentModel:
    pieces, skipped = collect_deviations(corpus)
    z_on, z_off, means, stds = [], [], [], []
    used = 0
    for p in pieces:
        mu_on, sd_on = p.onset_dev.mean(), p.onset_dev.std()
        mu_off, sd_off = p.offset_dev.mean(), p.offset_dev.std()
        if sd_on <= ZERO_STD or sd_off <= ZERO_STD:
            warnings.warn(f"{p.dataset} song {p.song_index}: zero deviation spread, skipped",
                          stacklevel=2)
            skipped.append({"dataset": p.dataset, "index": p.song_index,
                            "reason": "zero standard deviation"})
            continue
        used += 1
        z_on.append((p.onset_dev - mu_on) / sd_on)
        z_off.append((p.offset_dev - mu_off) / sd_off)
        means.extend([mu_on, mu_off])
        stds.extend([sd_on, sd_off])
    if not used:
        raise MisalignmentError("no eligible data: no piece with aligned and non-aligned notes "
                                "and non-zero deviation spread")
    z_on = np.concatenate(z_on)
    z_off = np.concatenate(z_off)
    return MisalignmentModel(
        hist_onset_z=Histogram.from_values(z_on, bins).normalized(TARGET_MAX_VALUE),
        hist_offset_z=Histogram.from_values(z_off, bins).normalized(TARGET_MAX_VALUE),
        hist_mean=Histogram.from_values(means, bins),
        hist_std=Histogram.from_values(stds, bins, nonnegative=True).normalized(TARGET_MAX_STD),
        metadata={"n_pieces": used, "n_notes": int(z_on.size), "bins": bins,
                  "skipped": skipped},
    )


def sample_piece_params(model: MisalignmentModel, rng_seed: Seed) -> tuple[float, float]:
    """Draw one (mean, std) pair in seconds."""
    if model is None:
        raise MisalignmentError("model is not trained")
    rng = _rng(rng_seed)
    return model.hist_mean.sample(rng), model.hist_std.sample(rng)


def misalign_notes(model: MisalignmentModel, notes: NoteList, mean: float, std: float,
                   rng: np.random.Generator) -> NoteList:
    n = len(notes)
    if n == 0:
        return NoteList()
    on = np.asarray(notes.onsets, dtype=float)
    off = np.asarray(notes.offsets, dtype=float)
    new_on = np.maximum(on + model.hist_onset_z.sample(rng, n) * std + mean, 0.0)
    new_off = off + model.hist_offset_z.sample(rng, n) * std + mean
    for i in np.flatnonzero(new_off <= new_on):
        for _ in range(MAX_OFFSET_REDRAWS):
            cand = off[i] + model.hist_offset_z.sample(rng) * std + mean
            if cand > new_on[i]:
                new_off[i] = cand
                break
        else:
            new_off[i] = new_on[i] + MIN_DURATION
    return NoteList(tuple(float(x) for x in new_on), tuple(float(x) for x in new_off),
                    notes.pitches, notes.velocities, notes.note_names)


def misalign_song(model: MisalignmentModel, notes: NoteList, rng_seed: Seed) -> NoteList:
    """Artificial non-aligned version of an aligned note list."""
    if model is None:
        raise MisalignmentError("model is not trained")
    rng = _rng(rng_seed)
    mean, std = sample_piece_params(model, rng)
    return misalign_notes(model, notes, mean, std, rng)


def song_seed(seed: int, dataset: str, song_index: int) -> np.random.SeedSequence:
    """Independent per-song stream, stable across runs and processes."""
    return np.random.SeedSequence([int(seed), zlib.crc32(dataset.encode("utf-8")), song_index])


@dataclass
class AugmentationReport:
    touched: list[tuple[str, int]] = field(default_factory=list)
    written: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"touched": [{"dataset": d, "index": i} for d, i in self.touched],
                "written": self.written,
                "failures": [{"path": p, "error": e} for p, e in self.failures]}


def apply_misalignment(corpus, model: MisalignmentModel, rng_seed: int) -> AugmentationReport:
    """Overwrite the ``non_aligned`` section of every aligned song's annotations.

    The first time a file is rewritten its original is kept as ``<file>.orig``.
    """
    if model is None:
        raise MisalignmentError("model is not trained")
    report = AugmentationReport()
    for ref, paths in zip(corpus.view, corpus.paths):
        distinct = list(dict.fromkeys(paths.ground_truth))
        records = {}
        for p in distinct:
            try:
                records[p] = read_ground_truth(p)
            except (OSError, ValueError) as exc:
                report.failures.append((str(p), str(exc)))
        aligned = {p: next((k for k in ("precise_alignment", "broad_alignment") if gt.has(k)), None)
                   for p, gt in records.items()}
        if not any(aligned.values()):
            continue
        rng = np.random.default_rng(song_seed(rng_seed, ref.dataset_name, ref.song_index))
        mean, std = sample_piece_params(model, rng)
        touched = False
        for p, gt in records.items():
            kind = aligned[p]
            if kind is None:
                continue
            new = gt.replace_notes("non_aligned",
                                   misalign_notes(model, gt.notes(kind), mean, std, rng))
            try:
                backup = p.with_name(p.name + ".orig")
                if not backup.exists():
                    shutil.copy2(p, backup)
                tmp = p.with_name(p.name + ".tmp")
                tmp.write_bytes(encode_ground_truth(new))
                tmp.replace(p)
            except OSError as exc:
                report.failures.append((str(p), str(exc)))
                continue
            report.written.append(str(p))
            touched = True
        if touched:
            report.touched.append((ref.dataset_name, ref.song_index))
    return report
