"""Query layer over the union of loaded dataset definitions.

>>> corpus = open_corpus(load_config("datasets.json"))            # doctest: +SKIP
>>> solo = corpus.filter(instruments=["piano"], ensemble=False,    # doctest: +SKIP
...                      composer="Mozart", ground_truth=["precise_alignment"])
>>> mix, sources, gts = solo.get_item(0)                           # doctest: +SKIP

Filtering never touches audio or annotation files and returns a new corpus;
the original is left intact. Filters compose by intersection.
"""
from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .annotations import (ANNOTATION_KINDS, AnnotationError, GroundTruth, merge_ground_truths,
                          read_ground_truth)
from .audio import Audio, DecodeHook, load_audio, mix
from .definitions import (UNKNOWN, DatasetDefinition, FrameworkConfig, SongEntry,
                          load_definitions)
from . import scores

log = logging.getLogger(__name__)

DEFAULT_LEVELS = frozenset({1, 2})


class CorpusError(Exception):
    pass


class SongProcessingError(CorpusError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        super().__init__(f"processing failed at view index {index}: {cause!r}")


@dataclass(frozen=True)
class SongRef:
    dataset_name: str
    song_index: int
    song: SongEntry


@dataclass(frozen=True)
class SongPaths:
    recordings: tuple[Path, ...]
    sources: tuple[Path, ...]
    ground_truth: tuple[Path, ...]

    def all(self) -> list[Path]:
        return [*self.recordings, *self.sources, *self.ground_truth]


def parse_ground_truth_requirement(item) -> tuple[str, frozenset[int]]:
    """``"kind"`` accepts levels 1 and 2; ``"kind:1"`` / ``"kind:2"`` demand that level."""
    if isinstance(item, tuple):
        kind, level = item
    elif ":" in str(item):
        kind, _, level = str(item).partition(":")
    else:
        kind, level = item, None
    if kind not in ANNOTATION_KINDS:
        raise ValueError(f"unknown annotation kind {kind!r}; expected one of {ANNOTATION_KINDS}")
    if level is None:
        return kind, DEFAULT_LEVELS
    level = int(level)
    if level not in (1, 2):
        raise ValueError(f"required level must be 1 or 2, got {level}")
    return kind, frozenset({level})


@dataclass(frozen=True)
class FilterSpec:
    """Conjunction of optional song attributes. The empty spec matches all.

    ``instruments``: the song must contain every listed instrument.
    ``any_instruments``: the song must contain at least one of them.
    ``composer``: case-insensitive substring (exact when ``composer_exact``);
    songs whose composer is unknown never match a composer constraint.
    ``ground_truth``: kind → accepted availability levels of the owning dataset.
    """

    datasets: frozenset[str] | None = None
    instruments: frozenset[str] | None = None
    any_instruments: frozenset[str] | None = None
    ensemble: bool | str | None = None
    composer: str | None = None
    composer_exact: bool = False
    ground_truth: Mapping[str, frozenset[int]] | None = None

    @classmethod
    def build(cls, datasets=None, instruments=None, any_instruments=None, ensemble=None,
              composer=None, composer_exact=False, ground_truth=None) -> "FilterSpec":
        def _set(x):
            if x is None:
                return None
            return frozenset([x] if isinstance(x, str) else x)

        gt = None
        if ground_truth is not None:
            items = ground_truth.items() if isinstance(ground_truth, Mapping) else (
                [ground_truth] if isinstance(ground_truth, str) else ground_truth)
            gt = {}
            for it in items:
                kind, levels = parse_ground_truth_requirement(it)
                gt[kind] = gt.get(kind, levels) & levels  # repeated kinds intersect
        if ensemble is not None and ensemble is not True and ensemble is not False \
                and ensemble != UNKNOWN:
            raise ValueError(f"ensemble must be true, false or 'unknown', got {ensemble!r}")
        return cls(_set(datasets), _set(instruments), _set(any_instruments), ensemble,
                   composer, composer_exact, gt)

    def is_empty(self) -> bool:
        return (self.datasets is None and self.instruments is None
                and self.any_instruments is None and self.ensemble is None
                and self.composer is None and self.ground_truth is None)

    def matches(self, defn: DatasetDefinition, song: SongEntry) -> bool:
        if self.datasets is not None and defn.name not in self.datasets:
            return False
        if self.ensemble is not None and not (type(defn.ensemble) is type(self.ensemble)
                                              and defn.ensemble == self.ensemble):
            return False
        song_instruments = set(song.instruments)
        if self.instruments is not None and not self.instruments <= song_instruments:
            return False
        if self.any_instruments is not None and not self.any_instruments & song_instruments:
            return False
        if self.composer is not None:
            if song.composer == UNKNOWN:
                return False
            a, b = self.composer.casefold(), song.composer.casefold()
            if (a != b) if self.composer_exact else (a not in b):
                return False
        if self.ground_truth is not None:
            for kind, levels in self.ground_truth.items():
                if defn.level(kind) not in levels:
                    return False
        return True


class Corpus:
    """The loaded collection and its current filtered view.

    ``view[i]`` identifies a song and ``paths[i]`` holds its absolute file
    paths. Values are treated as immutable: :meth:`filter` returns a copy.
    """

    def __init__(self, definitions: Sequence[DatasetDefinition], config: FrameworkConfig,
                 decode_hooks: Mapping[str, DecodeHook] | None = None):
        names = [d.name for d in definitions]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise CorpusError(f"duplicate dataset names: {sorted(dupes)}")
        self.definitions = tuple(definitions)
        self.config = config
        self.decode_hooks = dict(decode_hooks or {})
        self._by_name = {d.name: d for d in self.definitions}
        self._view = tuple(SongRef(d.name, i, s)
                           for d in self.definitions for i, s in enumerate(d.songs))

    @property
    def view(self) -> tuple[SongRef, ...]:
        return self._view

    @property
    def paths(self) -> list[SongPaths]:
        return [self._resolve(ref) for ref in self._view]

    def __len__(self) -> int:
        return len(self._view)

    def definition(self, name: str) -> DatasetDefinition:
        return self._by_name[name]

    def _resolve(self, ref: SongRef) -> SongPaths:
        r = self.config.resolve
        s = ref.song
        return SongPaths(tuple(r(p) for p in s.recording_paths),
                         tuple(r(p) for p in s.source_paths),
                         tuple(r(p) for p in s.ground_truth_paths))

    def _with_view(self, view: Iterable[SongRef]) -> "Corpus":
        new = copy.copy(self)
        new._view = tuple(view)
        return new

    def filter(self, spec: FilterSpec | None = None, **kwargs) -> "Corpus":
        """New corpus restricted to songs matching every given attribute.

        Accepts a :class:`FilterSpec` or its keyword form, e.g.
        ``filter(instruments=["piano"], ensemble=False, composer="Mozart",
        ground_truth=["precise_alignment"])``.
        """
        if spec is None:
            spec = FilterSpec.build(**kwargs)
        elif kwargs:
            raise TypeError("pass either a FilterSpec or keyword filters, not both")
        if spec.is_empty():
            return self._with_view(self._view)
        return self._with_view(ref for ref in self._view
                               if spec.matches(self._by_name[ref.dataset_name], ref.song))

    def locate(self, dataset: str, song_index: int) -> int:
        """View position of a song given its dataset and index in the definition."""
        for pos, ref in enumerate(self._view):
            if ref.dataset_name == dataset and ref.song_index == song_index:
                return pos
        raise KeyError(f"{dataset}:{song_index} is not in the current view")

    def _ref(self, i: int) -> SongRef:
        if not 0 <= i < len(self._view):
            raise IndexError(f"view index {i} out of range (view has {len(self._view)} songs)")
        return self._view[i]

    def get_mix(self, i: int) -> Audio:
        """Recording of song ``i``; several recordings are summed and normalized."""
        paths = self._resolve(self._ref(i))
        return mix([load_audio(p, self.decode_hooks) for p in paths.recordings])

    def get_source(self, i: int) -> list[Audio]:
        paths = self._resolve(self._ref(i))
        return [load_audio(p, self.decode_hooks) for p in paths.sources]

    def get_gts(self, i: int) -> list[GroundTruth]:
        ref = self._ref(i)
        paths = self._resolve(ref)
        if not paths.ground_truth:
            return []
        cache: dict[Path, GroundTruth] = {}
        parts = []
        for p in paths.ground_truth:
            if p not in cache:
                if not p.exists():
                    raise FileNotFoundError(f"missing annotation file: {p}")
                try:
                    cache[p] = read_ground_truth(p)
                except AnnotationError as exc:
                    raise AnnotationError(
                        f"{ref.dataset_name} song {ref.song_index}: {exc}") from exc
            parts.append(cache[p])
        return [gt for _, gt in merge_ground_truths(parts)]

    def get_item(self, i: int) -> tuple[Audio, list[Audio], list[GroundTruth]]:
        return self.get_mix(i), self.get_source(i), self.get_gts(i)

    def get_score(self, i: int, score_type: Sequence[str] = ("precise_alignment",)):
        return scores.get_score(self, i, score_type)

    def get_pianoroll(self, i: int, score_type: Sequence[str] = ("precise_alignment",),
                      frame_rate: float = scores.DEFAULT_FRAME_RATE):
        return scores.get_pianoroll(self, i, score_type, frame_rate)

    def parallel_map(self, fn: Callable[..., Any], *args, max_workers: int | None = None,
                     **kwargs) -> list:
        """``[fn(i, self, *args, **kwargs) for i in range(len(self))]``, run on a
        thread pool. Results follow view order; the first failing index aborts."""
        n = len(self._view)
        if max_workers == 1 or n <= 1:
            out = []
            for i in range(n):
                try:
                    out.append(fn(i, self, *args, **kwargs))
                except Exception as exc:
                    raise SongProcessingError(i, exc) from exc
            return out
        with ThreadPoolExecutor(max_workers) as pool:
            futures = [pool.submit(fn, i, self, *args, **kwargs) for i in range(n)]
            out = []
            for i, fut in enumerate(futures):
                try:
                    out.append(fut.result())
                except Exception as exc:
                    for f in futures[i + 1:]:
                        f.cancel()
                    raise SongProcessingError(i, exc) from exc
            return out

    parallel = parallel_map

    def records(self) -> list[dict]:
        """JSON-ready description of the view (used by ``list``/``export``)."""
        out = []
        for ref, paths in zip(self._view, self.paths):
            out.append({
                "dataset": ref.dataset_name,
                "index": ref.song_index,
                "title": ref.song.title,
                "composer": ref.song.composer,
                "instruments": list(ref.song.instruments),
                "paths": {
                    "recordings": [str(p) for p in paths.recordings],
                    "sources": [str(p) for p in paths.sources],
                    "ground_truth": [str(p) for p in paths.ground_truth],
                },
            })
        return out


def open_corpus(config: FrameworkConfig, definition_dirs: Sequence | None = None,
                decode_hooks: Mapping[str, DecodeHook] | None = None) -> Corpus:
    """Load every definition in ``definition_dirs`` (default: the config's)."""
    dirs = config.definition_dirs if definition_dirs is None else definition_dirs
    return Corpus(load_definitions(dirs), config, decode_hooks)
