"""Inference: offset application, geometric filtering, 1-D non-maximum
suppression and token-aligned entity emission.

NMS is greedy and class-agnostic: repeatedly keep the highest-confidence box
and delete every remaining box whose IoU with it strictly exceeds lambda,
plus exact geometric duplicates (IoU 1) regardless of lambda.  At lambda =
1.0 this means only fully-overlapping duplicates are removed.  A per-class
variant is available for the suppression-threshold study.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, OffsetPair, TokenSpan, decode_offsets, iou, round_to_tokens
from .model import ModelState, build_forward
from .autodiff import Tape
from .encoder import pad_or_trim, lookup_vectors
from .proposal import propose

__all__ = ["PredictedBox", "Entity", "boxes_from_outputs", "predict_boxes", "nms",
           "finalize", "predict_entities", "predict_corpus"]


@dataclass(frozen=True)
class PredictedBox:
    box: Box
    class_id: int       # >= 1; background-argmax boxes are dropped earlier
    confidence: float
    source: int         # index of the originating candidate


@dataclass(frozen=True)
class Entity:
    span: TokenSpan
    label: str
    confidence: float


def boxes_from_outputs(cand_boxes: list[Box], probs: np.ndarray,
                       offsets: np.ndarray | None,
                       keep_background: bool = False) -> list[PredictedBox]:
    """Apply predicted offsets and the geometric validity filter.

    Boxes whose argmax class is background are dropped (kept with their best
    non-background class when keep_background is set, for trajectory dumps),
    as are boxes regressed to non-positive length or beyond the sentence end.
    """
    out = []
    for i, cand in enumerate(cand_boxes):
        row = probs[i]
        cls = int(row.argmax())
        if cls == 0:
            if not keep_background:
                continue
            cls = int(row[1:].argmax()) + 1
        geom = cand
        if offsets is not None:
            geom = decode_offsets(cand, OffsetPair(offsets[i, 0], offsets[i, 1]))
        if geom.length <= 0.0 or geom.end > 1.0:
            continue
        out.append(PredictedBox(geom, cls, float(row[cls]), i))
    return out


def _forward_values(state: ModelState, docs, vectors_table=None):
    """Batched forward over documents; yields (doc, cand list, probs, offsets)."""
    cfg = state.config
    ids = []
    rls = []
    cands = []
    vecs = [] if cfg.input_width is not None else None
    for doc in docs:
        padded, rl = pad_or_trim(state.vocab.encode(doc.tokens), cfg.L)
        ids.append(padded)
        rls.append(rl)
        cands.append(propose(rl, state.proposal))
        if vecs is not None:
            vecs.append(lookup_vectors(vectors_table, doc.id, len(doc.tokens))[:cfg.L])
    fwd = build_forward(state, np.array(ids, dtype=np.intp), np.array(rls),
                        [[c.span for c in cs] for cs in cands], Tape(), vecs)
    for doc, cs, (lo, hi) in zip(docs, cands, fwd.slices):
        if hi == lo:
            yield doc, cs, np.zeros((0, state.n_types + 1)), None
            continue
        probs = fwd.probs.value[lo:hi]
        offsets = fwd.offsets.value[lo:hi] if fwd.offsets is not None else None
        yield doc, cs, probs, offsets


def predict_boxes(state: ModelState, doc, vectors_table=None,
                  keep_background: bool = False) -> list[PredictedBox]:
    """Raw (pre-NMS) predicted boxes for one document."""
    _doc, cands, probs, offsets = next(iter(_forward_values(state, [doc], vectors_table)))
    return boxes_from_outputs([c.box for c in cands], probs, offsets, keep_background)


def nms(boxes: list[PredictedBox], lam: float, per_class: bool = False) -> list[PredictedBox]:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    order = sorted(boxes, key=lambda b: (-b.confidence, b.box.start, b.source))

    def survives(b, head):
        if per_class and b.class_id != head.class_id:
            return True
        v = iou(head.box, b.box)
        # strictly-greater-than lambda, except that IoU 1 (identical geometry)
        # is always suppressed so lambda = 1 still erases exact duplicates
        return v <= lam and v < 1.0

    kept: list[PredictedBox] = []
    remaining = list(order)
    while remaining:
        head = remaining.pop(0)
        kept.append(head)
        remaining = [b for b in remaining if survives(b, head)]
    return kept


def finalize(boxes: list[PredictedBox], L: int, labels: list[str]) -> list[Entity]:
    """Round surviving boxes to token spans; merge duplicates keeping the
    highest confidence; drop empty spans."""
    best: dict[tuple[TokenSpan, int], float] = {}
    for b in boxes:
        span = round_to_tokens(b.box, L)
        if span is None:
            continue
        key = (span, b.class_id)
        if b.confidence > best.get(key, -1.0):
            best[key] = b.confidence
    return sorted((Entity(span, labels[cls - 1], conf)
                   for (span, cls), conf in best.items()),
                  key=lambda e: (e.span.start, e.span.length, e.label))


def predict_entities(state: ModelState, doc, lam: float = 0.6,
                     vectors_table=None, per_class_nms: bool = False) -> list[Entity]:
    raw = predict_boxes(state, doc, vectors_table)
    return finalize(nms(raw, lam, per_class_nms), state.config.L, state.labels)


def predict_corpus(state: ModelState, docs, lam: float = 0.6, batch_size: int = 32,
                   vectors_table=None, per_class_nms: bool = False) -> dict[str, list[Entity]]:
    """Entities for every document, keyed by sentence id."""
    out: dict[str, list[Entity]] = {}
    for k in range(0, len(docs), batch_size):
        for doc, cands, probs, offsets in _forward_values(state, docs[k:k + batch_size],
                                                          vectors_table):
            raw = boxes_from_outputs([c.box for c in cands], probs, offsets)
            out[doc.id] = finalize(nms(raw, lam, per_class_nms),
                                   state.config.L, state.labels)
    return out
