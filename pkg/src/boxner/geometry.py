"""1-D interval geometry for entity spans.

Spans live in normalized sentence coordinates: token index i in a
fixed-length-L sentence maps to position i / L, so a span covering tokens
[s, s+n) is the half-open interval [s/L, (s+n)/L).  Half-open intervals make
adjacent spans have IoU 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "Box",
    "TokenSpan",
    "OffsetPair",
    "iou",
    "encode_offsets",
    "decode_offsets",
    "round_to_tokens",
]


@dataclass(frozen=True)
class Box:
    """A continuous (start, length) interval in [0, 1] coordinates."""

    start: float
    length: float

    @property
    def end(self) -> float:
        return self.start + self.length

    def is_valid(self) -> bool:
        """True when the box lies inside the sentence with positive length."""
        return self.length > 0.0 and self.start >= 0.0 and self.end <= 1.0 + 1e-12


@dataclass(frozen=True)
class TokenSpan:
    """Discrete counterpart of Box: whole-token start and length."""

    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length

    def to_box(self, L: int) -> Box:
        return Box(self.start / L, self.length / L)


@dataclass(frozen=True)
class OffsetPair:
    """Regression target: normalized position offset and log shape offset."""

    ds: float
    dl: float


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two intervals; 0 when disjoint."""
    if a.start == b.start and a.length == b.length:
        return 1.0  # exact: identical boxes must score 1 even when start+length rounds
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    # the true intersection never exceeds either length; the subtraction above
    # can overshoot by a few ulps and push the ratio past 1
    inter = min(inter, a.length, b.length)
    union = a.length + b.length - inter
    return inter / union


def encode_offsets(d: Box, g: Box) -> OffsetPair:
    """Offsets that move candidate d onto target g.

    ds = (g.start - d.start) / g.length, dl = ln(g.length / d.length).
    """
    if d.length <= 0.0 or g.length <= 0.0:
        raise ValueError(f"boxes must have positive length, got {d.length} and {g.length}")
    return OffsetPair((g.start - d.start) / g.length, math.log(g.length / d.length))


def decode_offsets(d: Box, off: OffsetPair) -> Box:
    """Exact inverse of encode_offsets.

    The position offset is normalized by the *target* length, which is unknown
    at inference, so the length is decoded first and reused.
    """
    length = d.length * math.exp(off.dl)
    return Box(d.start + off.ds * length, length)


def _round_half_away(x: float) -> int:
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def round_to_tokens(b: Box, L: int) -> TokenSpan | None:
    """Round both boundaries to the nearest token boundary, clamped to [0, L].

    Returns None when the rounded span is empty (the caller drops the box).
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    start = min(max(_round_half_away(b.start * L), 0), L)
    end = min(max(_round_half_away(b.end * L), 0), L)
    if end - start <= 0:
        return None
    return TokenSpan(start, end - start)
