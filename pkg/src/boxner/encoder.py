"""Token-side plumbing for the recurrent encoder: vocabulary, fixed-length
padding/trimming, feature-map container and precomputed-vector ingestion.

The precomputed-vector file is plain text, one block per sentence:

    <sentence id> <TAB> <token count> <TAB> <width>
    v11 v12 ... v1w
    ...
    vn1 vn2 ... vnw

These vectors replace the embedding lookup (the recurrent layer still runs
on top of them) and are never trained.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PAD_ID", "UNK_ID", "Vocabulary", "pad_or_trim", "FeatureMap",
           "VectorFileError", "load_token_vectors", "lookup_vectors"]

PAD_ID = 0
UNK_ID = 1
_RESERVED = ("<pad>", "<unk>")


class Vocabulary:
    """Dense token-to-id table with reserved padding (0) and unknown (1) ids."""

    def __init__(self, tokens=()):
        self._ids: dict[str, int] = {tok: i for i, tok in enumerate(_RESERVED)}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = len(self._ids)

    @classmethod
    def from_documents(cls, docs) -> "Vocabulary":
        return cls(tok for doc in docs for tok in doc.tokens)

    def __len__(self) -> int:
        return len(self._ids)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        """All tokens in id order (including the reserved entries)."""
        return sorted(self._ids, key=self._ids.get)


def pad_or_trim(ids: list[int], L: int) -> tuple[list[int], int]:
    """Fix a token-id sequence to length L; returns (sequence, real_length)."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if len(ids) >= L:
        return list(ids[:L]), min(len(ids), L)
    return list(ids) + [PAD_ID] * (L - len(ids)), len(ids)


@dataclass
class FeatureMap:
    """L x d_feat contextual token representations; rows at and beyond
    real_length belong to padding and are excluded from proposal."""

    data: np.ndarray
    real_length: int


class VectorFileError(ValueError):
    """Malformed precomputed-vector file; message carries a line locator."""


def load_token_vectors(path) -> dict[str, np.ndarray]:
    """Parse a precomputed-vector file into {sentence id: (n, width) array}."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    k = 0
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        where = f"{path}:{k + 1}"
        head = lines[k].split("\t")
        if len(head) != 3:
            raise VectorFileError(f"{where}: expected 'id<TAB>count<TAB>width' header")
        sent_id, n_s, w_s = head
        try:
            n, width = int(n_s), int(w_s)
        except ValueError as e:
            raise VectorFileError(f"{where}: non-integer count/width") from e
        if sent_id in table:
            raise VectorFileError(f"{where}: duplicate sentence id {sent_id!r}")
        if k + n >= len(lines) + 1 and n > 0:
            raise VectorFileError(f"{where}: truncated block for sentence {sent_id!r}")
        rows = []
        for r in range(n):
            row_where = f"{path}:{k + 2 + r}"
            try:
                row = np.array([float(x) for x in lines[k + 1 + r].split()])
            except (IndexError, ValueError) as e:
                raise VectorFileError(f"{row_where}: bad vector row for {sent_id!r}") from e
            if row.size != width:
                raise VectorFileError(f"{row_where}: sentence {sent_id!r} declares width "
                                      f"{width} but row has {row.size} values")
            rows.append(row)
        table[sent_id] = np.vstack(rows) if rows else np.zeros((0, width))
        k += 1 + n
    return table


def lookup_vectors(table: dict[str, np.ndarray], sent_id: str,
                   n_tokens: int) -> np.ndarray:
    if sent_id not in table:
        raise VectorFileError(f"no precomputed vectors for sentence {sent_id!r}")
    vecs = table[sent_id]
    if len(vecs) != n_tokens:
        raise VectorFileError(f"sentence {sent_id!r} has {n_tokens} tokens but "
                              f"{len(vecs)} precomputed vectors")
    return vecs


def write_token_vectors(path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent_id, vecs in table.items():
            fh.write(f"{sent_id}\t{len(vecs)}\t{vecs.shape[1]}\n")
            for row in vecs:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
