"""scoremeta: a federated collection of audio/score music datasets."""
from .annotations import (AvailabilityLevel, GroundTruth, NoteList, decode_ground_truth,
                          encode_ground_truth, merge_ground_truths, prototype_gt)
from .convert import convert, register_converter
from .corpus import Corpus, FilterSpec, open_corpus
from .definitions import (DatasetDefinition, FrameworkConfig, detect_installed, load_config,
                          load_definitions)

__version__ = "0.1.0"

__all__ = [
    "AvailabilityLevel", "Corpus", "DatasetDefinition", "FilterSpec", "FrameworkConfig",
    "GroundTruth", "NoteList", "convert", "decode_ground_truth", "detect_installed",
    "encode_ground_truth", "load_config", "load_definitions", "merge_ground_truths",
    "open_corpus", "prototype_gt", "register_converter",
]
