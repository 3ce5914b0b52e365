"""Candidate span generation over the real (non-padding) token range.

Two strategies: exhaustive enumeration of every span up to length K, and
interval enumeration restricted to a fixed ascending length set.  During
training the interval mode additionally injects the gold spans so the
classifier sees every annotated entity; at test time only the interval
lengths are proposed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import Box, TokenSpan

__all__ = ["ProposalConfig", "Candidate", "propose", "training_candidates"]

DEFAULT_INTERVAL_LENGTHS = (1, 3, 5, 7, 11, 15, 20)


@dataclass(frozen=True)
class Candidate:
    span: TokenSpan
    box: Box


@dataclass(frozen=True)
class ProposalConfig:
    mode: str = "exhaustive"  # "exhaustive" | "interval"
    K: int = 6
    lengths: tuple[int, ...] = DEFAULT_INTERVAL_LENGTHS
    L: int = 50

    def __post_init__(self):
        if self.mode not in ("exhaustive", "interval"):
            raise ValueError(f"unknown proposal mode {self.mode!r}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        lengths = tuple(self.lengths)
        if not lengths or any(n < 1 for n in lengths):
            raise ValueError(f"lengths must all be >= 1, got {lengths}")
        if any(a >= b for a, b in zip(lengths, lengths[1:])):
            raise ValueError(f"lengths must be strictly increasing, got {lengths}")
        object.__setattr__(self, "lengths", lengths)


def _candidate(start: int, length: int, L: int) -> Candidate:
    span = TokenSpan(start, length)
    return Candidate(span, span.to_box(L))


def propose_exhaustive(real_length: int, cfg: ProposalConfig) -> list[Candidate]:
    """All spans of token length 1..K fitting in the real range, start-major."""
    out = []
    for i in range(real_length):
        for n in range(1, min(cfg.K, real_length - i) + 1):
            out.append(_candidate(i, n, cfg.L))
    return out


def propose_interval(real_length: int, cfg: ProposalConfig) -> list[Candidate]:
    """Spans at the configured lengths only, start-major."""
    out = []
    for i in range(real_length):
        for n in cfg.lengths:
            if n > real_length - i:
                break
            out.append(_candidate(i, n, cfg.L))
    return out


def propose(real_length: int, cfg: ProposalConfig) -> list[Candidate]:
    if real_length > cfg.L:
        raise ValueError(f"real_length {real_length} exceeds L={cfg.L}")
    if real_length <= 0:
        return []
    if cfg.mode == "exhaustive":
        return propose_exhaustive(real_length, cfg)
    return propose_interval(real_length, cfg)


def training_candidates(real_length: int, cfg: ProposalConfig,
                        gold_spans: list[TokenSpan] = ()) -> list[Candidate]:
    """Proposals plus, in interval mode, the gold spans missing from them."""
    cands = propose(real_length, cfg)
    if cfg.mode != "interval":
        return cands
    seen = {c.span for c in cands}
    for span in gold_spans:
        if span not in seen and span.end <= real_length:
            seen.add(span)
            cands.append(Candidate(span, span.to_box(cfg.L)))
    return cands
