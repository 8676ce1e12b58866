"""Cloze-style multiple-choice reading comprehension with LM negative augmentation."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: E402
from .corpus import DatasetSplit, Instance, load_jsonl, validate_instance  # noqa: E402
from .encoder import ReferenceEncoder, ReferenceEncoderConfig, ScoringHead  # noqa: E402
from .mcscorer import TrainConfig, predict, score_instance, train  # noqa: E402
from .probe import augment_instance, top_negatives, zero_shot_rank  # noqa: E402
from .tokenization import ByteLevelBPETokenizer, WhitespaceTokenizer  # noqa: E402

__all__ = [
    "KERNEL_BACKEND",
    "ByteLevelBPETokenizer",
    "DatasetSplit",
    "Instance",
    "ReferenceEncoder",
    "ReferenceEncoderConfig",
    "ScoringHead",
    "TrainConfig",
    "WhitespaceTokenizer",
    "augment_instance",
    "load_jsonl",
    "predict",
    "score_instance",
    "top_negatives",
    "train",
    "validate_instance",
    "zero_shot_rank",
]
