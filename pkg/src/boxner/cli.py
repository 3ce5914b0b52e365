"""Command-line interface.

Subcommands: generate, train, predict, eval, ablate-bbc, sweep,
dump-trajectories.  Every option can also come from a JSON config file
(--config); explicit flags override the file, which overrides built-in
defaults.  Training runs write a manifest (resolved config + seed + package
version) next to their outputs for reproducibility.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import __version__
from .corpus import (CorpusError, SynthSpec, generate_synthetic, load_corpus,
                     load_predictions, nesting_ratio, write_corpus, write_predictions)
from .decoder import predict_boxes, predict_corpus
from .encoder import VectorFileError, load_token_vectors
from .evaluate import evaluate
from .model import CheckpointError, ModelConfig, load_model, save_model
from .proposal import DEFAULT_INTERVAL_LENGTHS, ProposalConfig
from .trainer import TrainConfig, TrainingError, train

_TRAIN_DEFAULTS = {
    "mode": "exh",
    "gamma": None,  # resolved per mode: 0.7 exhaustive, 0.6 interval
    "nms_lambda": 0.6,
    "alpha": 1.0,
    "lr": 0.00005,
    "weight_decay": 0.01,
    "batch": 30,
    "epochs": 10,
    "seed": 0,
    "sentence_len": 50,
    "K": 6,
    "proposal_lengths": ",".join(str(x) for x in DEFAULT_INTERVAL_LENGTHS),
    "neg_ratio": 3,
    "d_emb": 16,
    "d_hidden": 32,
    "rep_mode": "boundary",
    "eval_every": 1,
    "stop_at_train_f1": None,
    "hard_negatives": False,
    "vectors": None,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("exh", "int"), default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lambda", dest="nms_lambda", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sentence-len", type=int, default=None, help="fixed length L")
    p.add_argument("--K", type=int, default=None, help="max length, exhaustive mode")
    p.add_argument("--proposal-lengths", default=None,
                   help="comma-separated interval lengths")
    p.add_argument("--neg-ratio", type=int, default=None)
    p.add_argument("--d-emb", type=int, default=None)
    p.add_argument("--d-hidden", type=int, default=None)
    p.add_argument("--rep-mode", choices=("boundary", "mean"), default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--stop-at-train-f1", type=float, default=None)
    p.add_argument("--hard-negatives", action="store_true", default=None)
    p.add_argument("--vectors", default=None, help="precomputed token-vector file")
    p.add_argument("--config", default=None, help="JSON config file")


def _resolve(args: argparse.Namespace, keys=_TRAIN_DEFAULTS) -> dict:
    """flag > config file > default."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in keys.items():
        cli = getattr(args, key, None)
        out[key] = cli if cli is not None else file_cfg.get(key, default)
    if out.get("gamma") is None:
        out["gamma"] = 0.7 if out["mode"] == "exh" else 0.6
    return out


def _build_configs(cfg: dict, regression: bool = True):
    proposal = ProposalConfig(
        mode="exhaustive" if cfg["mode"] == "exh" else "interval",
        K=cfg["K"],
        lengths=tuple(int(x) for x in str(cfg["proposal_lengths"]).split(",")),
        L=cfg["sentence_len"],
    )
    vectors_table = load_token_vectors(cfg["vectors"]) if cfg["vectors"] else None
    input_width = None
    if vectors_table:
        input_width = next(iter(vectors_table.values())).shape[1]
    model_cfg = ModelConfig(L=cfg["sentence_len"], d_emb=cfg["d_emb"],
                            d_hidden=cfg["d_hidden"], rep_mode=cfg["rep_mode"],
                            regression=regression, input_width=input_width,
                            trainable_embeddings=input_width is None)
    train_cfg = TrainConfig(learning_rate=cfg["lr"], weight_decay=cfg["weight_decay"],
                            batch_size=cfg["batch"], epochs=cfg["epochs"],
                            seed=cfg["seed"], gamma=cfg["gamma"], alpha=cfg["alpha"],
                            neg_ratio=cfg["neg_ratio"], nms_lambda=cfg["nms_lambda"],
                            eval_every=cfg["eval_every"],
                            stop_at_train_f1=cfg["stop_at_train_f1"],
                            hard_negatives=bool(cfg["hard_negatives"]))
    return proposal, model_cfg, train_cfg, vectors_table


def _write_manifest(out_dir: str, command: str, cfg: dict) -> None:
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"command": command, "config": cfg, "seed": cfg.get("seed"),
                   "version": __version__}, fh, indent=2)


def _predictions_dict(state, docs, lam, vectors_table=None):
    preds = predict_corpus(state, docs, lam, vectors_table=vectors_table)
    return {sid: [(e.span.start, e.span.length, e.label, e.confidence) for e in ents]
            for sid, ents in preds.items()}


def _train_run(args, regression: bool = True):
    cfg = _resolve(args)
    proposal, model_cfg, train_cfg, vectors_table = _build_configs(cfg, regression)
    docs = load_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    history_path = os.path.join(args.out, "history.jsonl")
    with open(history_path, "w", encoding="utf-8") as hist_fh:
        def log(rec):
            hist_fh.write(json.dumps(rec) + "\n")
            print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in rec.items()))
        state, _history = train(docs, train_cfg, model_cfg, proposal,
                                vectors_table=vectors_table, log_fn=log)
    save_model(state, os.path.join(args.out, "model.npz"))
    _write_manifest(args.out, "ablate-bbc" if not regression else "train", cfg)
    return state, cfg, vectors_table


def cmd_generate(args) -> int:
    spec = SynthSpec(n_sentences=args.sentences, vocab_size=args.vocab_size,
                     n_types=args.types,
                     sentence_len=(args.min_sentence_len, args.max_sentence_len),
                     entity_len=(args.min_entity_len, args.max_entity_len),
                     entities_per_sentence=(args.min_entities, args.max_entities),
                     nesting_ratio=args.nesting_ratio, seed=args.seed)
    docs = generate_synthetic(spec)
    write_corpus(docs, args.out)
    print(f"wrote {len(docs)} sentences to {args.out} "
          f"(realized nesting ratio {nesting_ratio(docs):.3f})")
    return 0


def cmd_train(args) -> int:
    _train_run(args, regression=True)
    return 0


def cmd_ablate_bbc(args) -> int:
    state, cfg, vectors_table = _train_run(args, regression=False)
    if args.eval_corpus:
        docs = load_corpus(args.eval_corpus)
        # The ablation classifies raw proposals and is trained to call every
        # well-overlapping proposal an entity, so its confidences saturate and
        # give suppression nothing to rank by.  By default it emits all
        # distinct non-background proposals (lambda 1.0 erases exact
        # duplicates only); pass --lambda to override.
        lam = args.nms_lambda if args.nms_lambda is not None else 1.0
        metrics = evaluate(_predictions_dict(state, docs, lam,
                                             vectors_table), docs)
        print(metrics.table())
    return 0


def cmd_predict(args) -> int:
    state = load_model(args.model)
    docs = load_corpus(args.corpus)
    vectors_table = load_token_vectors(args.vectors) if args.vectors else None
    lam = args.nms_lambda if args.nms_lambda is not None else 0.6
    write_predictions(args.out, _predictions_dict(state, docs, lam, vectors_table))
    print(f"wrote predictions for {len(docs)} sentences to {args.out}")
    return 0


def cmd_eval(args) -> int:
    gold = load_corpus(args.gold)
    preds = load_predictions(args.pred)
    print(evaluate(preds, gold).table())
    return 0


def cmd_sweep(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    cfg = _resolve(args)
    eval_docs = load_corpus(args.eval_corpus)
    rows = []
    if args.param == "lambda":
        proposal, model_cfg, train_cfg, vectors_table = _build_configs(cfg)
        docs = load_corpus(args.corpus)
        state, _ = train(docs, train_cfg, model_cfg, proposal,
                         vectors_table=vectors_table)
        for v in values:
            m = evaluate(_predictions_dict(state, eval_docs, v, vectors_table), eval_docs)
            rows.append((v, m))
    else:  # gamma: retrain per grid point
        docs = load_corpus(args.corpus)
        for v in values:
            cfg_v = dict(cfg, gamma=v)
            proposal, model_cfg, train_cfg, vectors_table = _build_configs(cfg_v)
            state, _ = train(docs, train_cfg, model_cfg, proposal,
                             vectors_table=vectors_table)
            m = evaluate(_predictions_dict(state, eval_docs, cfg["nms_lambda"],
                                           vectors_table), eval_docs)
            rows.append((v, m))
    print(f"{args.param}\tP\tR\tF")
    for v, m in rows:
        print(f"{v:g}\t{m.precision:.4f}\t{m.recall:.4f}\t{m.f1:.4f}")
    return 0


def cmd_dump_trajectories(args) -> int:
    docs = {d.id: d for d in load_corpus(args.corpus)}
    if args.sentence_id not in docs:
        raise CorpusError(f"sentence id {args.sentence_id!r} not in {args.corpus}")
    doc = docs[args.sentence_id]
    vectors_table = load_token_vectors(args.vectors) if args.vectors else None
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        out.write("iteration\tstart\tlength\tclass\tconfidence\n")
        for k, path in enumerate(args.checkpoints):
            state = load_model(path)
            iteration = state.step if args.by_step else k
            for b in predict_boxes(state, doc, vectors_table, keep_background=True):
                out.write(f"{iteration}\t{b.box.start:.6f}\t{b.box.length:.6f}\t"
                          f"{state.label_of(b.class_id)}\t{b.confidence:.6f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxner",
                                     description="Nested NER by 1-D bounding-box regression")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic nested-entity corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--types", type=int, default=5)
    p.add_argument("--min-sentence-len", type=int, default=8)
    p.add_argument("--max-sentence-len", type=int, default=30)
    p.add_argument("--min-entity-len", type=int, default=1)
    p.add_argument("--max-entity-len", type=int, default=5)
    p.add_argument("--min-entities", type=int, default=1)
    p.add_argument("--max-entities", type=int, default=3)
    p.add_argument("--nesting-ratio", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a boundary-regression model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate-bbc", help="train the classification-only ablation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-corpus", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate_bbc)

    p = sub.add_parser("predict", help="emit entities for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="nms_lambda", type=float, default=None)
    p.add_argument("--vectors", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="gamma or lambda grid, P/R/F per point")
    p.add_argument("--param", choices=("gamma", "lambda"), required=True)
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--corpus", required=True, help="training corpus")
    p.add_argument("--eval-corpus", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-trajectories",
                       help="plot-ready box dump per checkpoint for one sentence")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sentence-id", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--by-step", action="store_true",
                   help="label rows by optimizer step instead of checkpoint order")
    p.add_argument("--vectors", default=None)
    p.set_defaults(func=cmd_dump_trajectories)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, VectorFileError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingError as e:
        print(f"training error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
