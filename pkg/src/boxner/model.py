"""Model state and the differentiable forward pass.

The network is the pipeline: embedding lookup (or precomputed per-token
vectors), a bidirectional gated recurrent layer producing an L x 2*d_hidden
feature map, then two heads over each candidate span's representation: a
softmax classifier over background + entity types and, unless disabled, a
linear layer regressing (position, log-length) offsets.

A candidate's representation is the concatenation of the feature rows at its
start and inclusive-end tokens ("boundary" mode) or the mean over its span
("mean" mode).

The forward pass is built batched on an autodiff Tape: per time step the
whole batch advances as one (B, d) matrix, padding handled by masking, and
all candidate representations of the batch are gathered from the stacked
per-step outputs in one go.
"""
from __future__ import annotations

import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Node
from .encoder import FeatureMap, Vocabulary, pad_or_trim
from .geometry import TokenSpan
from .proposal import ProposalConfig

__all__ = ["ModelConfig", "ModelState", "ForwardOut", "init_model", "build_forward",
           "encode_sentence", "save_model", "load_model", "CheckpointError",
           "CheckpointVersionError", "FORMAT_VERSION"]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    L: int = 50
    d_emb: int = 16
    d_hidden: int = 32
    trainable_embeddings: bool = True
    rep_mode: str = "boundary"  # "boundary" | "mean"
    regression: bool = True
    input_width: int | None = None  # set when precomputed vectors replace embeddings

    def __post_init__(self):
        if self.rep_mode not in ("boundary", "mean"):
            raise ValueError(f"unknown rep_mode {self.rep_mode!r}")

    @property
    def d_feat(self) -> int:
        return 2 * self.d_hidden

    @property
    def rep_dim(self) -> int:
        return 2 * self.d_feat if self.rep_mode == "boundary" else self.d_feat

    @property
    def d_input(self) -> int:
        return self.input_width if self.input_width is not None else self.d_emb


@dataclass
class ModelState:
    config: ModelConfig
    vocab: Vocabulary
    labels: list[str]               # entity types; class id z maps to labels[z-1]
    proposal: ProposalConfig
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    train_config: dict | None = None

    @property
    def n_types(self) -> int:
        return len(self.labels)

    def label_of(self, class_id: int) -> str:
        return self.labels[class_id - 1]


def init_model(vocab: Vocabulary, labels: list[str], proposal: ProposalConfig,
               config: ModelConfig, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    d_h = config.d_hidden
    d_in = config.d_input
    params: dict[str, np.ndarray] = {}
    if config.input_width is None:
        params["emb"] = u(len(vocab), config.d_emb)
        params["emb"][0] = 0.0  # padding row stays zero
    for direction in ("fw", "bw"):
        params[f"{direction}_W"] = u(d_in + d_h, 4 * d_h)
        params[f"{direction}_b"] = u(4 * d_h)
    params["cls_W"] = u(config.rep_dim, len(labels) + 1)
    params["cls_b"] = u(len(labels) + 1)
    if config.regression:
        params["reg_W"] = u(config.rep_dim, 2)
        params["reg_b"] = u(2)
    return ModelState(config, vocab, list(labels), proposal, params)


@dataclass
class ForwardOut:
    probs: Node | None              # (n_cand, Z+1) class probabilities
    offsets: Node | None            # (n_cand, 2) predicted (ds, dl), None for BBC
    slices: list[tuple[int, int]]   # per-sentence [lo, hi) ranges into the rows
    leaves: dict[str, Node]

    def trainable_grads(self) -> dict[str, np.ndarray]:
        return {name: node.grad for name, node in self.leaves.items()
                if node.trainable and node.grad is not None}


def _run_direction(tape: Tape, xs: list[Node], masks: list[np.ndarray | None],
                   W: Node, b: Node, d_h: int, B: int) -> list[Node]:
    """One gated recurrent pass; returns the hidden state after each step."""
    h = tape.const(np.zeros((B, d_h)))
    c = tape.const(np.zeros((B, d_h)))
    outs = []
    for x, mask in zip(xs, masks):
        z = ad.concat([x, h], axis=1)
        pre = ad.add(ad.matmul(z, W), ad.expand_rows(b, B))
        gi = ad.sigmoid(ad.slice_cols(pre, 0, d_h))
        gf = ad.sigmoid(ad.slice_cols(pre, d_h, 2 * d_h))
        go = ad.sigmoid(ad.slice_cols(pre, 2 * d_h, 3 * d_h))
        gc = ad.tanh(ad.slice_cols(pre, 3 * d_h, 4 * d_h))
        c_new = ad.add(ad.mul(gf, c), ad.mul(gi, gc))
        h_new = ad.mul(go, ad.tanh(c_new))
        if mask is None:  # every sentence still live at this step
            h, c = h_new, c_new
        else:
            m = tape.const(mask)
            inv = tape.const(1.0 - mask)
            c = ad.add(ad.mul(m, c_new), ad.mul(inv, c))
            h = ad.add(ad.mul(m, h_new), ad.mul(inv, h))
        outs.append(h)
    return outs


def _encode_batch(tape: Tape, state: ModelState, ids: np.ndarray,
                  real_lengths: np.ndarray, vectors=None):
    """Run both recurrent directions; returns (outs_fw, outs_bw, leaves).

    outs_fw[t] is the forward hidden state after step t; outs_bw[t] is the
    backward hidden state after consuming t+1 tokens from the sentence end,
    i.e. it describes position real_length-1-t of each sentence.
    """
    cfg = state.config
    B, L = ids.shape
    max_rl = int(real_lengths.max()) if B else 0
    leaves: dict[str, Node] = {}
    for name, arr in state.params.items():
        trainable = not (name == "emb" and not cfg.trainable_embeddings)
        leaves[name] = tape.leaf(arr, trainable=trainable)

    if cfg.input_width is not None:
        if vectors is None:
            raise ValueError("model expects precomputed vectors but none were given")
        X = np.zeros((B, L, cfg.input_width))
        Xr = np.zeros_like(X)
        for b_i, vecs in enumerate(vectors):
            rl = int(real_lengths[b_i])
            X[b_i, :rl] = vecs[:rl]
            Xr[b_i, :rl] = vecs[:rl][::-1]
        xs_fw = [tape.const(X[:, t, :]) for t in range(max_rl)]
        xs_bw = [tape.const(Xr[:, t, :]) for t in range(max_rl)]
    else:
        emb = leaves["emb"]
        ids_rev = ids.copy()
        for b_i in range(B):
            rl = int(real_lengths[b_i])
            ids_rev[b_i, :rl] = ids[b_i, :rl][::-1]
        xs_fw = [ad.gather_rows(emb, ids[:, t]) for t in range(max_rl)]
        xs_bw = [ad.gather_rows(emb, ids_rev[:, t]) for t in range(max_rl)]

    masks: list[np.ndarray | None] = []
    for t in range(max_rl):
        live = (real_lengths > t).astype(float)
        if live.all():
            masks.append(None)
        else:
            masks.append(np.repeat(live[:, None], cfg.d_hidden, axis=1))

    outs_fw = _run_direction(tape, xs_fw, masks, leaves["fw_W"], leaves["fw_b"],
                             cfg.d_hidden, B)
    outs_bw = _run_direction(tape, xs_bw, masks, leaves["bw_W"], leaves["bw_b"],
                             cfg.d_hidden, B)
    return outs_fw, outs_bw, leaves


def build_forward(state: ModelState, ids: np.ndarray, real_lengths: np.ndarray,
                  spans: list[list[TokenSpan]], tape: Tape, vectors=None) -> ForwardOut:
    """Forward pass for a batch; spans[b] are the candidate spans of sentence b."""
    cfg = state.config
    B = ids.shape[0]
    real_lengths = np.asarray(real_lengths)
    slices = []
    lo = 0
    for sent_spans in spans:
        slices.append((lo, lo + len(sent_spans)))
        lo += len(sent_spans)
    n_cand = lo
    if n_cand == 0:
        leaves = {}
        return ForwardOut(None, None, slices, leaves)

    outs_fw, outs_bw, leaves = _encode_batch(tape, state, ids, real_lengths, vectors)
    # Stacked per-step outputs: row t*B + b holds sentence b at step t.
    F_fw = ad.concat(outs_fw, axis=0)
    F_bw = ad.concat(outs_bw, axis=0)

    if cfg.rep_mode == "boundary":
        fws, bws, fwe, bwe = [], [], [], []
        for b_i, sent_spans in enumerate(spans):
            rl = int(real_lengths[b_i])
            for span in sent_spans:
                s, e = span.start, span.end - 1
                fws.append(s * B + b_i)
                bws.append((rl - 1 - s) * B + b_i)
                fwe.append(e * B + b_i)
                bwe.append((rl - 1 - e) * B + b_i)
        rep = ad.concat([ad.gather_rows(F_fw, fws), ad.gather_rows(F_bw, bws),
                         ad.gather_rows(F_fw, fwe), ad.gather_rows(F_bw, bwe)], axis=1)
    else:
        n_rows = len(outs_fw) * B
        A_fw = np.zeros((n_cand, n_rows))
        A_bw = np.zeros((n_cand, n_rows))
        k = 0
        for b_i, sent_spans in enumerate(spans):
            rl = int(real_lengths[b_i])
            for span in sent_spans:
                w = 1.0 / span.length
                for p in range(span.start, span.end):
                    A_fw[k, p * B + b_i] = w
                    A_bw[k, (rl - 1 - p) * B + b_i] = w
                k += 1
        rep = ad.concat([ad.matmul(tape.const(A_fw), F_fw),
                         ad.matmul(tape.const(A_bw), F_bw)], axis=1)

    logits = ad.add(ad.matmul(rep, leaves["cls_W"]), ad.expand_rows(leaves["cls_b"], n_cand))
    probs = ad.softmax(logits)
    offsets = None
    if cfg.regression:
        offsets = ad.add(ad.matmul(rep, leaves["reg_W"]),
                         ad.expand_rows(leaves["reg_b"], n_cand))
    return ForwardOut(probs, offsets, slices, leaves)


def encode_sentence(state: ModelState, tokens: list[str], vectors=None) -> FeatureMap:
    """Map one sentence to its L x d_feat feature map (padding rows zero)."""
    cfg = state.config
    ids, rl = pad_or_trim(state.vocab.encode(tokens), cfg.L)
    tape = Tape()
    vec_arg = None
    if cfg.input_width is not None:
        if vectors is None:
            raise ValueError("model expects precomputed vectors but none were given")
        vec_arg = [np.asarray(vectors)[:cfg.L]]
    outs_fw, outs_bw, _ = _encode_batch(
        tape, state, np.array([ids]), np.array([rl]), vec_arg)
    data = np.zeros((cfg.L, cfg.d_feat))
    for p in range(rl):
        data[p, :cfg.d_hidden] = outs_fw[p].value[0]
        data[p, cfg.d_hidden:] = outs_bw[rl - 1 - p].value[0]
    return FeatureMap(data, rl)


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


def save_model(state: ModelState, path) -> None:
    """Atomic (write-then-rename), bit-exact, versioned serialization."""
    meta = {
        "config": asdict(state.config),
        "vocab": state.vocab.tokens,
        "labels": state.labels,
        "proposal": asdict(state.proposal),
        "step": state.step,
        "train_config": state.train_config,
    }
    arrays = {"format_version": np.array(FORMAT_VERSION), "meta": np.array(json.dumps(meta))}
    for name, arr in state.params.items():
        arrays[f"p_{name}"] = arr
    for name, arr in state.opt_m.items():
        arrays[f"m_{name}"] = arr
    for name, arr in state.opt_v.items():
        arrays[f"v_{name}"] = arr
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> ModelState:
    try:
        data = np.load(path, allow_pickle=False)
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    with data:
        if "format_version" not in data.files or "meta" not in data.files:
            raise CheckpointError(f"{path} is not a model checkpoint")
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{path} uses format version {version}, expected {FORMAT_VERSION}")
        try:
            meta = json.loads(str(data["meta"]))
            config = ModelConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                                    for k, v in meta["config"].items()})
            proposal_meta = {k: (tuple(v) if isinstance(v, list) else v)
                             for k, v in meta["proposal"].items()}
            proposal = ProposalConfig(**proposal_meta)
            vocab = Vocabulary(meta["vocab"][2:])
            params = {k[2:]: data[k] for k in data.files if k.startswith("p_")}
            opt_m = {k[2:]: data[k] for k in data.files if k.startswith("m_")}
            opt_v = {k[2:]: data[k] for k in data.files if k.startswith("v_")}
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    return ModelState(config, vocab, list(meta["labels"]), proposal, params,
                      opt_m, opt_v, int(meta["step"]), meta.get("train_config"))
