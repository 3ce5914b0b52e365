"""Corpus I/O, synthetic nested-entity generation and splitting.

The on-disk format is line-delimited JSON, one sentence per line:

    {"id": "s0", "tokens": ["w1", "B2", "w4", "E2"],
     "entities": [[1, 3, "T2"], [2, 1, "T1"]]}

Entities are (start_token, token_length, label) standoff records, so nesting
and full overlap of distinct-type entities are expressible.  Predictions use
the same shape with a confidence appended: [start, length, label, conf].
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

__all__ = [
    "EntitySpan",
    "Document",
    "CorpusError",
    "load_corpus",
    "write_corpus",
    "load_predictions",
    "write_predictions",
    "SynthSpec",
    "generate_synthetic",
    "nesting_ratio",
    "split_corpus",
]


class CorpusError(ValueError):
    """Malformed corpus or prediction file; message carries a record locator."""


@dataclass(frozen=True)
class EntitySpan:
    start: int
    length: int
    label: str


@dataclass
class Document:
    id: str
    tokens: list[str]
    entities: list[EntitySpan] = field(default_factory=list)


def _validate_document(doc: Document, where: str) -> None:
    n = len(doc.tokens)
    seen = set()
    for ent in doc.entities:
        if ent.length < 1 or ent.start < 0 or ent.start + ent.length > n:
            raise CorpusError(f"{where}: entity {ent} out of bounds for {n} tokens")
        key = (ent.start, ent.length, ent.label)
        if key in seen:
            raise CorpusError(f"{where}: duplicate entity {key}")
        seen.add(key)


def load_corpus(path) -> list[Document]:
    docs = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: invalid JSON ({e})") from e
            try:
                doc = Document(str(rec["id"]), list(rec["tokens"]),
                               [EntitySpan(int(s), int(n), str(lab))
                                for s, n, lab in rec.get("entities", [])])
            except (KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"{where}: malformed record ({e})") from e
            if doc.id in ids:
                raise CorpusError(f"{where}: duplicate sentence id {doc.id!r}")
            ids.add(doc.id)
            _validate_document(doc, where)
            docs.append(doc)
    return docs


def write_corpus(docs: list[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            rec = {"id": doc.id, "tokens": doc.tokens,
                   "entities": [[e.start, e.length, e.label] for e in doc.entities]}
            fh.write(json.dumps(rec) + "\n")


def write_predictions(path, predictions: dict[str, list[tuple[int, int, str, float]]]) -> None:
    """predictions: sentence id -> [(start, length, label, confidence), ...]."""
    with open(path, "w", encoding="utf-8") as fh:
        for sent_id, ents in predictions.items():
            rec = {"id": sent_id,
                   "entities": [[s, n, lab, round(conf, 6)] for s, n, lab, conf in ents]}
            fh.write(json.dumps(rec) + "\n")


def load_predictions(path) -> dict[str, list[tuple[int, int, str, float]]]:
    out: dict[str, list[tuple[int, int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
                out[str(rec["id"])] = [(int(s), int(n), str(lab), float(conf))
                                       for s, n, lab, conf in rec["entities"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"{where}: malformed prediction record ({e})") from e
    return out


@dataclass(frozen=True)
class SynthSpec:
    n_sentences: int = 500
    vocab_size: int = 50
    n_types: int = 5
    sentence_len: tuple[int, int] = (8, 30)
    entity_len: tuple[int, int] = (1, 5)
    entities_per_sentence: tuple[int, int] = (1, 3)
    nesting_ratio: float = 0.35
    max_nested_iou: float = 0.6  # keeps inner/outer pairs separable by NMS
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.nesting_ratio <= 1.0:
            raise ValueError(f"nesting ratio must be in [0, 1], got {self.nesting_ratio}")
        if self.entity_len[0] < 1 or self.entity_len[1] > self.sentence_len[1]:
            raise ValueError(f"entity lengths {self.entity_len} infeasible for "
                             f"sentence lengths {self.sentence_len}")
        if self.n_types < 1 or self.n_sentences < 1 or self.vocab_size < 1:
            raise ValueError("spec counts must be positive")


@dataclass(frozen=True)
class _Planted:
    start: int
    length: int
    type_id: int

    @property
    def end(self):
        return self.start + self.length


def _overlaps(a: _Planted, start: int, length: int) -> bool:
    return start < a.end and a.start < start + length


def generate_synthetic(spec: SynthSpec) -> list[Document]:
    """Deterministic synthetic nested-entity corpus.

    Entities are made learnable by marker tokens: a length-1 entity of type z
    is the token "U{z}"; longer ones start with "B{z}" and end with "E{z}"
    with generic filler in between.  Inner entities overwrite part of their
    host's filler, so both remain recoverable from token identity.  Nesting is
    steered towards the target ratio by a running-ratio feedback rule.
    """
    rng = random.Random(spec.seed)
    docs = []
    total = 0
    nested = 0
    for si in range(spec.n_sentences):
        n_tok = rng.randint(*spec.sentence_len)
        n_ent = rng.randint(*spec.entities_per_sentence)
        planted: list[_Planted] = []
        nested_flags: list[bool] = []
        hosts_used: set[int] = set()

        def place_disjoint(min_len: int) -> int | None:
            for _attempt in range(20):
                length = rng.randint(max(spec.entity_len[0], min_len),
                                     min(spec.entity_len[1], n_tok))
                start = rng.randint(0, n_tok - length)
                if not any(_overlaps(p, start, length) for p in planted):
                    planted.append(_Planted(start, length, rng.randrange(spec.n_types)))
                    nested_flags.append(False)
                    return len(planted) - 1
            return None

        def place_inner(k: int) -> bool:
            nonlocal nested
            host = planted[k]
            max_len = min(spec.entity_len[1], host.length - 2,
                          int(spec.max_nested_iou * host.length))
            if max_len < spec.entity_len[0]:
                return False
            length = rng.randint(spec.entity_len[0], max_len)
            start = rng.randint(host.start + 1, host.end - 1 - length)
            planted.append(_Planted(start, length, rng.randrange(spec.n_types)))
            hosts_used.add(k)
            if not nested_flags[k]:
                nested_flags[k] = True
                nested += 1
            nested_flags.append(True)
            nested += 1
            return True

        remaining = n_ent
        while remaining > 0:
            placed = 0
            want_nest = (spec.nesting_ratio > 0
                         and nested < spec.nesting_ratio * max(total, 1))
            if want_nest:
                host_ids = [k for k, p in enumerate(planted)
                            if k not in hosts_used and p.length >= 3]
                rng.shuffle(host_ids)
                for k in host_ids:
                    if place_inner(k):
                        placed = 1
                        break
                min_host = max(3, spec.entity_len[0] + 2,
                               -int(-spec.entity_len[0] // spec.max_nested_iou))
                if not placed and remaining >= 2 and spec.entity_len[1] >= min_host:
                    # No usable host: plant a host-sized entity and nest into it.
                    k = place_disjoint(min_len=min_host)
                    if k is not None and place_inner(k):
                        placed = 2
            if not placed:
                if place_disjoint(min_len=spec.entity_len[0]) is not None:
                    placed = 1
            if placed == 0:
                break  # sentence is full
            total += placed
            remaining -= placed
        tokens = [f"w{rng.randrange(spec.vocab_size)}" for _ in range(n_tok)]
        # Longer entities first so inner markers overwrite host filler.
        for p in sorted(planted, key=lambda p: -p.length):
            if p.length == 1:
                tokens[p.start] = f"U{p.type_id}"
            else:
                tokens[p.start] = f"B{p.type_id}"
                tokens[p.end - 1] = f"E{p.type_id}"
        entities = [EntitySpan(p.start, p.length, f"T{p.type_id}") for p in planted]
        # Drop accidental duplicates (same span, same type from host+inner draws).
        entities = list(dict.fromkeys(entities))
        docs.append(Document(f"s{si}", tokens, entities))
    return docs


def nesting_ratio(docs: list[Document]) -> float:
    """Fraction of entities that contain or are contained in another entity."""
    total = 0
    nested = 0
    for doc in docs:
        ents = doc.entities
        total += len(ents)
        for i, a in enumerate(ents):
            for j, b in enumerate(ents):
                if i == j:
                    continue
                if ((a.start >= b.start and a.start + a.length <= b.start + b.length)
                        or (b.start >= a.start and b.start + b.length <= a.start + a.length)):
                    nested += 1
                    break
    return nested / total if total else 0.0


def split_corpus(docs: list[Document], seed: int,
                 ratios: tuple[int, int, int] = (8, 1, 1)):
    """Seeded 8:1:1 shuffle-split into (train, dev, test)."""
    if len(docs) < sum(ratios):
        raise ValueError(f"corpus too small to split: {len(docs)} < {sum(ratios)}")
    order = list(range(len(docs)))
    random.Random(seed).shuffle(order)
    n = len(docs)
    denom = sum(ratios)
    n_train = n * ratios[0] // denom
    n_dev = n * ratios[1] // denom
    shuffled = [docs[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_dev],
            shuffled[n_train + n_dev:])
