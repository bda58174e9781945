"""Command-line entry point: ``dsan {train,eval,eval-by-length,encode,inspect}``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Progress goes to stderr; set ``DSAN_LOG_LEVEL`` (e.g. ``DEBUG``) for more.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import tensor
from .checkpoint import CheckpointError, load_checkpoint
from .data import (DataFormatError, EmptySentenceError, SentenceBatch, Vocabulary, index_examples,
                   load_embeddings, parse_nli_jsonl, tokenize)
from .introspect import FORMATS, capture, export
from .layers import NORM_PLACEMENTS, ConfigError
from .tensor import NumericError, no_grad
from .train import TrainConfig, evaluate, evaluate_by_length, train_loop, write_length_table

log = logging.getLogger("dsan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_EDGES = (0, 5, 10, 15, 20, 25, 30)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


_TRAIN_FLAGS = {
    # flag: (TrainConfig field, type)
    "--lr": ("learning_rate", float),
    "--batch-size": ("batch_size", int),
    "--heads": ("h", int),
    "--alpha": ("alpha", float),
    "--dropout": ("dropout", float),
    "--d-e": ("d_e", int),
    "--d-ff": ("d_ff", int),
    "--d-h": ("d_h", int),
    "--epochs": ("epochs", int),
    "--seed": ("seed", int),
    "--adam-beta1": ("adam_beta1", float),
    "--adam-beta2": ("adam_beta2", float),
    "--adam-eps": ("adam_eps", float),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsan", description="Directional self-attention sentence encoder for NLI.")
    p.add_argument("--matmul", choices=("exact", "blas"), default="exact",
                   help="forward matmul backend (exact = padding-invariant)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model, keeping the best validation checkpoint")
    t.add_argument("--embeddings", required=True, type=Path)
    t.add_argument("--train", required=True, type=Path)
    t.add_argument("--valid", type=Path)
    t.add_argument("--test", type=Path, help="only contributes vocabulary, never trained on")
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--config", type=Path, help="JSON file of training settings; flags win")
    t.add_argument("--lenient-embeddings", action="store_true",
                   help="skip embedding lines of the wrong width instead of failing")
    for flag, (field, kind) in _TRAIN_FLAGS.items():
        t.add_argument(flag, dest=field, type=kind, default=argparse.SUPPRESS)
    t.add_argument("--norm", dest="norm", choices=NORM_PLACEMENTS, default=argparse.SUPPRESS)

    e = sub.add_parser("eval", help="accuracy and confusion matrix on a corpus")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--out", type=Path, help="write the result as JSON here")

    b = sub.add_parser("eval-by-length", help="accuracy bucketed by average sentence length")
    b.add_argument("--checkpoint", required=True, type=Path)
    b.add_argument("--data", required=True, type=Path)
    b.add_argument("--out", required=True, type=Path, help="CSV table")
    b.add_argument("--edges", type=float, nargs="+", default=list(DEFAULT_EDGES))

    c = sub.add_parser("encode", help="sentence file -> tab-separated 4*d_e vectors")
    c.add_argument("--checkpoint", required=True, type=Path)
    c.add_argument("--sentences", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--batch-size", type=int, default=64)

    i = sub.add_parser("inspect", help="case-study artifacts for one sentence")
    i.add_argument("--checkpoint", required=True, type=Path)
    i.add_argument("--sentence", required=True)
    i.add_argument("--out", type=Path, default=Path("case_study"))
    i.add_argument("--formats", nargs="+", choices=FORMATS, default=list(FORMATS))
    i.add_argument("--alpha", type=float, help="override the checkpoint's distance weight")
    return p


def _require_files(*paths):
    for path in paths:
        if path is not None and not path.is_file():
            raise DataFormatError("no such file", path)


def effective_train_config(args) -> TrainConfig:
    """Defaults, overlaid by the --config file, overlaid by explicit flags."""
    settings = TrainConfig().to_dict()
    if args.config is not None:
        _require_files(args.config)
        try:
            loaded = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid JSON: {exc}", args.config) from None
        unknown = set(loaded) - set(settings)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        settings.update(loaded)
    for field in settings:
        if hasattr(args, field):
            settings[field] = getattr(args, field)
    return TrainConfig(**settings)


def cmd_train(args) -> int:
    _require_files(args.embeddings, args.train, args.valid, args.test)
    config = effective_train_config(args)
    train = parse_nli_jsonl(args.train)
    valid = parse_nli_jsonl(args.valid) if args.valid else []
    test = parse_nli_jsonl(args.test) if args.test else []
    for name, corpus in (("train", train), ("valid", valid), ("test", test)):
        if corpus:
            log.info("%s: %d lines, %d no-consensus dropped, %d empty dropped, %d pairs",
                     name, corpus.lines, corpus.no_consensus, corpus.empty, len(corpus))
    vocab = Vocabulary.build(s for corpus in (train, valid, test)
                             for e in corpus for s in (e.premise, e.hypothesis))
    emb = load_embeddings(args.embeddings, vocab, strict=not args.lenient_embeddings)
    if "d_e" in vars(args) and args.d_e != emb.dim:
        raise UsageError(f"--d-e {args.d_e} does not match the embedding width {emb.dim}")
    if emb.dim != config.d_e:
        log.info("d_e taken from the embedding file: %d", emb.dim)
        if "d_ff" not in vars(args):
            config.d_ff = 4 * emb.dim
        config.d_e = emb.dim
    config.validate()
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(json.dumps(
        {"train": config.to_dict(), "embeddings": str(args.embeddings), "train_data": str(args.train),
         "valid_data": str(args.valid) if args.valid else None,
         "test_data": str(args.test) if args.test else None,
         "matmul": args.matmul}, indent=2, sort_keys=True) + "\n")
    result = train_loop(index_examples(train, vocab), index_examples(valid, vocab), config, emb, vocab,
                        out_dir=args.out)
    log.info("best epoch %d (score %.4f); checkpoint %s", result.best_epoch, result.best_score,
             args.out / "best.ckpt")
    return EXIT_OK


def _load_indexed(args):
    _require_files(args.checkpoint, args.data)
    model = load_checkpoint(args.checkpoint)
    corpus = parse_nli_jsonl(args.data)
    if model.vocab is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint carries no vocabulary")
    return model, index_examples(corpus, model.vocab)


def cmd_eval(args) -> int:
    model, data = _load_indexed(args)
    res = evaluate(data, model)
    log.info("accuracy %.4f on %d pairs", res.accuracy, res.count)
    text = json.dumps(res.to_dict(), indent=2) + "\n"
    if args.out is not None:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval_by_length(args) -> int:
    model, data = _load_indexed(args)
    rows = evaluate_by_length(data, model, args.edges)
    write_length_table(rows, args.out)
    log.info("%d buckets written to %s", len(rows), args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    _require_files(args.checkpoint, args.sentences)
    model = load_checkpoint(args.checkpoint)
    if model.vocab is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint carries no vocabulary")
    seqs = []
    with args.sentences.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                seqs.append(model.vocab.encode(tokenize(line)))
            except EmptySentenceError:
                log.warning("%s:%d: empty sentence skipped", args.sentences, lineno)
    with args.out.open("w", encoding="utf-8") as out, no_grad():
        for start in range(0, len(seqs), args.batch_size):
            batch = SentenceBatch.from_sequences(seqs[start:start + args.batch_size])
            vecs = model.encode(batch).sentence_vector.data
            for row in vecs:
                out.write("\t".join(repr(float(v)) for v in row) + "\n")
    log.info("%d vectors of width %d written to %s", len(seqs), 4 * model.config.d_e, args.out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    _require_files(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    if args.alpha is not None:
        model.config = dataclasses.replace(model.config, alpha=args.alpha).validate()
    report = capture(args.sentence, model)
    for problem in report.violations():
        log.warning("invariant: %s", problem)
    paths = export(report, args.out, args.formats)
    log.info("%d files written under %s", len(paths), args.out)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "eval-by-length": cmd_eval_by_length,
            "encode": cmd_encode, "inspect": cmd_inspect}


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DSAN_LOG_LEVEL", "INFO").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        previous = tensor.set_matmul_backend(args.matmul)
        try:
            return COMMANDS[args.command](args)
        finally:
            tensor.set_matmul_backend(previous)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"dsan: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"dsan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"dsan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
