"""Nested named-entity recognition by 1-D bounding-box regression."""

__version__ = "0.1.0"

from .geometry import Box, OffsetPair, TokenSpan, decode_offsets, encode_offsets, iou
from .proposal import Candidate, ProposalConfig, propose
from .matching import Assignment, TruthBox, assign, sample_negatives
from .model import ModelConfig, ModelState, init_model, load_model, save_model
from .trainer import TrainConfig, train
from .decoder import Entity, PredictedBox, finalize, nms, predict_corpus, predict_entities
from .corpus import Document, EntitySpan, SynthSpec, generate_synthetic, load_corpus, split_corpus
from .evaluate import Metrics, evaluate

__all__ = [
    "Box", "OffsetPair", "TokenSpan", "iou", "encode_offsets", "decode_offsets",
    "Candidate", "ProposalConfig", "propose",
    "Assignment", "TruthBox", "assign", "sample_negatives",
    "ModelConfig", "ModelState", "init_model", "save_model", "load_model",
    "TrainConfig", "train",
    "Entity", "PredictedBox", "nms", "finalize", "predict_entities", "predict_corpus",
    "Document", "EntitySpan", "SynthSpec", "generate_synthetic", "load_corpus",
    "split_corpus",
    "Metrics", "evaluate",
]
