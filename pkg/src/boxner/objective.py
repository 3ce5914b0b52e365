"""The multiobjective training loss.

Location loss: for every ground-truth box with a non-empty neighbourhood,
the Smooth-L1 error between predicted offsets and the encoded targets of its
neighbours, normalized by the neighbourhood size so every truth box weighs
the same.  Confidence loss: negative log probability of the matched class
for positives and of background for the sampled negatives.  Total:
location + alpha * confidence; per-sentence totals are averaged over the
batch.

Both a plain-value form (numpy, for direct checks) and a tape form (for
gradients) are provided.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .geometry import Box, encode_offsets
from .matching import Assignment, TruthBox
from .model import ForwardOut

__all__ = ["HeadOutputs", "SentenceExample", "smooth_l1", "smooth_l1_grad",
           "location_loss", "confidence_loss", "total_loss", "build_batch_loss"]

PROB_FLOOR = 1e-12


def smooth_l1(x: float) -> float:
    """0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; C1 at the seam."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def smooth_l1_grad(x: float) -> float:
    return max(-1.0, min(1.0, x))


@dataclass
class HeadOutputs:
    probs: np.ndarray               # (n_cand, Z+1), rows sum to 1
    offsets: np.ndarray | None      # (n_cand, 2) or None for the BBC ablation


def _offset_targets(assignment: Assignment, truths: list[TruthBox],
                    boxes: list[Box]):
    """Yields (truth index, neighbour candidate indices, (n, 2) targets)."""
    for j, members in assignment.neighbourhoods.items():
        g = truths[j].box
        targets = np.array([[encode_offsets(boxes[i], g).ds,
                             encode_offsets(boxes[i], g).dl] for i in members])
        yield j, members, targets


def location_loss(assignment: Assignment, heads: HeadOutputs,
                  truths: list[TruthBox], boxes: list[Box]) -> float:
    if heads.offsets is None:
        return 0.0
    total = 0.0
    for _j, members, targets in _offset_targets(assignment, truths, boxes):
        diff = heads.offsets[members] - targets
        total += np.vectorize(smooth_l1)(diff).sum() / len(members)
    return float(total)


def confidence_loss(assignment: Assignment, heads: HeadOutputs,
                    truths: list[TruthBox]) -> float:
    probs = np.maximum(heads.probs, PROB_FLOOR)
    total = 0.0
    for i in assignment.positive_indices:
        z = truths[assignment.matched[i]].class_id
        total -= math.log(probs[i, z])
    for i in np.flatnonzero(assignment.sampled_negative):
        total -= math.log(probs[i, 0])
    return float(total)


def total_loss(assignment: Assignment, heads: HeadOutputs, truths: list[TruthBox],
               boxes: list[Box], alpha: float = 1.0) -> float:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return (location_loss(assignment, heads, truths, boxes)
            + alpha * confidence_loss(assignment, heads, truths))


@dataclass
class SentenceExample:
    """Everything the loss needs for one sentence of a batch."""
    assignment: Assignment
    truths: list[TruthBox]
    boxes: list[Box]


def build_batch_loss(tape: Tape, fwd: ForwardOut, examples: list[SentenceExample],
                     alpha: float) -> tuple[Node, float, float]:
    """Tape version of the batch-averaged total loss.

    Returns (loss node, mean location loss value, mean confidence loss value).
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    B = len(examples)
    logp = ad.log(fwd.probs, floor=PROB_FLOOR) if fwd.probs is not None else None
    terms: list[Node] = []
    loc_sum = 0.0
    conf_sum = 0.0
    for (lo, hi), ex in zip(fwd.slices, examples):
        if hi == lo:
            continue
        if fwd.offsets is not None:
            for _j, members, targets in _offset_targets(ex.assignment, ex.truths, ex.boxes):
                pred = ad.gather_rows(fwd.offsets, [lo + i for i in members])
                err = ad.smooth_l1(ad.sub(pred, tape.const(targets)))
                term = ad.scale(ad.reduce_sum(err), 1.0 / len(members))
                loc_sum += float(term.value)
                terms.append(term)
        rows = []
        cols = []
        for i in ex.assignment.positive_indices:
            rows.append(lo + int(i))
            cols.append(ex.truths[ex.assignment.matched[i]].class_id)
        for i in np.flatnonzero(ex.assignment.sampled_negative):
            rows.append(lo + int(i))
            cols.append(0)
        if rows:
            conf = ad.scale(ad.reduce_sum(ad.take(logp, rows, cols)), -1.0)
            conf_sum += float(conf.value)
            terms.append(ad.scale(conf, alpha))
    if not terms:
        return tape.const(0.0), 0.0, 0.0
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / B), loc_sum / B, conf_sum / B
