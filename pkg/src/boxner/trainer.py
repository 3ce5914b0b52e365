"""Seeded end-to-end training: batching, Adam with decoupled weight decay,
per-epoch logging and checkpointing hooks.

Everything downstream of the run seed is deterministic: epoch shuffling,
negative sampling (re-drawn per sentence per epoch from a seed derived from
(run seed, epoch, sentence index)) and parameter initialization.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .corpus import Document
from .decoder import predict_corpus
from .encoder import Vocabulary, pad_or_trim, lookup_vectors
from .evaluate import evaluate
from .matching import TruthBox, assign, sample_negatives, sample_negatives_hard
from .model import ModelConfig, ModelState, build_forward, init_model
from .objective import SentenceExample, build_batch_loss
from .proposal import ProposalConfig, training_candidates
from .geometry import TokenSpan

__all__ = ["TrainConfig", "TrainingError", "train", "adam_step"]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.00005
    weight_decay: float = 0.01
    batch_size: int = 30
    epochs: int = 10
    seed: int = 0
    gamma: float = 0.7
    alpha: float = 1.0
    neg_ratio: int = 3
    nms_lambda: float = 0.6
    eval_every: int = 1          # train-F1 evaluation cadence in epochs; 0 disables
    stop_at_train_f1: float | None = None
    hard_negatives: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.weight_decay < 0 or self.alpha < 0 or self.neg_ratio < 1:
            raise ValueError("weight_decay, alpha and neg_ratio out of range")


def adam_step(state: ModelState, grads: dict[str, np.ndarray], lr: float,
              weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update with decoupled weight decay, in place."""
    state.step += 1
    b1, b2 = betas
    t = state.step
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.opt_m.setdefault(name, np.zeros_like(p))
        v = state.opt_v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            p -= lr * weight_decay * p


@dataclass
class _Prepared:
    ids: list[int]
    real_length: int
    spans: list[TokenSpan]
    example_truths: list[TruthBox]
    vectors: np.ndarray | None = None


def _prepare(doc: Document, vocab: Vocabulary, labels: list[str],
             model_cfg: ModelConfig, proposal: ProposalConfig,
             vectors_table=None) -> _Prepared:
    ids, rl = pad_or_trim(vocab.encode(doc.tokens), model_cfg.L)
    label_ids = {lab: z + 1 for z, lab in enumerate(labels)}
    truths = [TruthBox(TokenSpan(e.start, e.length).to_box(model_cfg.L), label_ids[e.label])
              for e in doc.entities if e.start + e.length <= rl]
    cands = training_candidates(rl, proposal,
                                [TokenSpan(e.start, e.length) for e in doc.entities
                                 if e.start + e.length <= rl])
    vecs = None
    if model_cfg.input_width is not None:
        vecs = lookup_vectors(vectors_table, doc.id, len(doc.tokens))[:model_cfg.L]
    return _Prepared(ids, rl, [c.span for c in cands], truths, vecs)


def train(docs: list[Document], train_cfg: TrainConfig, model_cfg: ModelConfig,
          proposal: ProposalConfig, labels: list[str] | None = None,
          vectors_table=None, log_fn=None) -> tuple[ModelState, list[dict]]:
    """Train a model on the documents; returns (state, per-epoch history)."""
    if not docs:
        raise TrainingError("empty corpus")
    if labels is None:
        labels = sorted({e.label for doc in docs for e in doc.entities})
    vocab = Vocabulary.from_documents(docs)
    state = init_model(vocab, labels, proposal, model_cfg, train_cfg.seed)
    state.train_config = asdict(train_cfg)
    prepared = [_prepare(doc, vocab, labels, model_cfg, proposal, vectors_table)
                for doc in docs]
    assignments = [assign([s.to_box(model_cfg.L) for s in p.spans], p.example_truths,
                          train_cfg.gamma) for p in prepared]

    rng = np.random.default_rng(train_cfg.seed)
    history: list[dict] = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(prepared))
        tot = loc = conf = 0.0
        n_batches = 0
        for bstart in range(0, len(order), train_cfg.batch_size):
            batch_idx = order[bstart:bstart + train_cfg.batch_size]
            tape = Tape()
            items = [prepared[i] for i in batch_idx]
            fwd = build_forward(
                state,
                np.array([p.ids for p in items], dtype=np.intp),
                np.array([p.real_length for p in items]),
                [p.spans for p in items],
                tape,
                [p.vectors for p in items] if model_cfg.input_width is not None else None,
            )
            examples = []
            for pos, i in enumerate(batch_idx):
                p = prepared[i]
                a = assignments[i]
                if train_cfg.hard_negatives and fwd.probs is not None:
                    lo, hi = fwd.slices[pos]
                    a = sample_negatives_hard(a, fwd.probs.value[lo:hi, 0],
                                              train_cfg.neg_ratio)
                else:
                    a = sample_negatives(a, train_cfg.neg_ratio,
                                         [train_cfg.seed, epoch, int(i)])
                examples.append(SentenceExample(a, p.example_truths,
                                                [s.to_box(model_cfg.L) for s in p.spans]))
            loss, loc_val, conf_val = build_batch_loss(tape, fwd, examples,
                                                       train_cfg.alpha)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise TrainingError(f"non-finite loss in epoch {epoch}, "
                                    f"batch starting at {bstart}")
            ad.backward(loss)
            grads = fwd.trainable_grads()
            if "emb" in grads:
                grads["emb"][0] = 0.0  # padding row is never updated
            adam_step(state, grads, train_cfg.learning_rate, train_cfg.weight_decay)
            tot += loss_val
            loc += loc_val
            conf += conf_val
            n_batches += 1
        record = {"epoch": epoch,
                  "total_loss": tot / n_batches,
                  "location_loss": loc / n_batches,
                  "confidence_loss": conf / n_batches}
        if train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0:
            preds = predict_corpus(state, docs, train_cfg.nms_lambda,
                                   vectors_table=vectors_table)
            flat = {sid: [(e.span.start, e.span.length, e.label, e.confidence)
                          for e in ents] for sid, ents in preds.items()}
            record["train_f1"] = evaluate(flat, docs).f1
        history.append(record)
        if log_fn:
            log_fn(record)
        if (train_cfg.stop_at_train_f1 is not None
                and record.get("train_f1", 0.0) >= train_cfg.stop_at_train_f1):
            break
    return state, history
