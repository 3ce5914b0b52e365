"""Training-time assignment of candidates to ground-truth boxes.

A candidate is positive when its best IoU over the truth boxes reaches the
threshold gamma; its matched truth is the argmax (ties broken by earliest
truth start, then shortest truth, then truth index).  The positive set is
partitioned into per-truth neighbourhoods; negatives are subsampled at a
fixed positive:negative ratio before entering the confidence loss.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box, iou

__all__ = ["TruthBox", "Assignment", "assign", "sample_negatives", "sample_negatives_hard"]


@dataclass(frozen=True)
class TruthBox:
    box: Box
    class_id: int  # >= 1; 0 is reserved for background

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"truth class_id must be >= 1, got {self.class_id}")


@dataclass(frozen=True)
class Assignment:
    matched: np.ndarray        # per candidate: argmax-IoU truth index, -1 if no truths
    iou: np.ndarray            # per candidate: the max IoU value
    positive: np.ndarray       # bool mask, max IoU >= gamma
    neighbourhoods: dict[int, list[int]]  # truth index -> indices of its positives
    sampled_negative: np.ndarray          # bool mask set by sample_negatives

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.positive)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.positive)


def assign(candidates: list[Box], truths: list[TruthBox], gamma: float) -> Assignment:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    m = len(candidates)
    matched = np.full(m, -1, dtype=np.intp)
    best = np.zeros(m)
    positive = np.zeros(m, dtype=bool)
    neighbourhoods: dict[int, list[int]] = {}
    if truths:
        # Truths in tie-break order: earliest start, shortest, original index.
        order = sorted(range(len(truths)),
                       key=lambda j: (truths[j].box.start, truths[j].box.length, j))
        for i, cand in enumerate(candidates):
            best_iou = -1.0
            best_j = -1
            for j in order:
                v = iou(cand, truths[j].box)
                if v > best_iou:
                    best_iou = v
                    best_j = j
            matched[i] = best_j
            best[i] = best_iou
            if best_iou >= gamma:
                positive[i] = True
                neighbourhoods.setdefault(best_j, []).append(i)
    return Assignment(matched, best, positive,
                      neighbourhoods, np.zeros(m, dtype=bool))


def _with_sampled(assignment: Assignment, chosen: np.ndarray) -> Assignment:
    mask = np.zeros(len(assignment.matched), dtype=bool)
    mask[chosen] = True
    return replace(assignment, sampled_negative=mask)


def sample_negatives(assignment: Assignment, ratio: int, seed: int) -> Assignment:
    """Uniformly sample min(ratio * |positives|, |negatives|) negatives.

    With no positives at all, ratio negatives are still drawn so the
    confidence loss never goes empty.
    """
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    neg = assignment.negative_indices
    n_pos = int(assignment.positive.sum())
    want = ratio * n_pos if n_pos > 0 else ratio
    k = min(want, len(neg))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(neg, size=k, replace=False) if k > 0 else np.empty(0, dtype=np.intp)
    return _with_sampled(assignment, chosen)


def sample_negatives_hard(assignment: Assignment, background_prob: np.ndarray,
                          ratio: int) -> Assignment:
    """Hard-negative variant: keep the negatives with the lowest background
    probability (largest confidence-loss contribution)."""
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    neg = assignment.negative_indices
    n_pos = int(assignment.positive.sum())
    want = ratio * n_pos if n_pos > 0 else ratio
    k = min(want, len(neg))
    order = neg[np.argsort(background_prob[neg], kind="stable")]
    return _with_sampled(assignment, order[:k])
