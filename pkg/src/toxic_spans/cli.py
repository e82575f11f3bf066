"""Command-line entry point: synth, preprocess, train, predict, evaluate, analyze, gradcheck.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import dataio
from .biaffine import BiaffineModel, train_biaffine
from .config import RunConfig, load_config
from .metrics import (
    DEFAULT_LEXICON,
    AnalysisReport,
    BucketMode,
    bucketed_f1,
    corpus_f1,
    lexicon_split_f1,
    load_lexicon,
    span_length_counts,
)
from .neural_core import gradient_check
from .span_codec import TagScheme, offsets_to_token_spans, token_spans_to_tags
from .tagger import Tagger, train
from .text_prep import prepare
from .training import DataError, NumericError, ToxicSpansError, child_rng, make_examples

logger = logging.getLogger("toxic_spans")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

GRADCHECK_TEXT = "you are stupid"
GRADCHECK_GOLD = range(8, 14)


class UsageError(ToxicSpansError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_model_flags(p):
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="seed for every source of randomness")
    p.add_argument("--arch", choices=["tagger", "biaffine"])
    p.add_argument("--scheme", choices=["io", "bio"])
    p.add_argument("--no-crf", action="store_true", help="softmax head instead of the CRF")
    p.add_argument("--no-lstm", action="store_true", help="feed embeddings straight to the head")
    p.add_argument("--no-preprocess", action="store_true", help="split on raw whitespace only")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toxic-spans", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--vocab-seed", type=int, help="share a vocabulary between splits")
    p.add_argument("--mix", default=None, help="span length weights '1,2-4,>=5', e.g. 0.77,0.16,0.07")
    p.add_argument("--mode", choices=["planted", "contextual"], default="planted")
    p.add_argument("--lexicon", type=Path)
    p.add_argument("--output", type=Path, required=True)

    p = sub.add_parser("preprocess", help="normalize, tokenize and tag a task CSV (JSON lines out)")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--scheme", choices=["io", "bio"], default="io")
    p.add_argument("--no-preprocess", action="store_true")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    _add_model_flags(p)
    p.add_argument("--input", type=Path, help="training CSV (overrides [run] train)")
    p.add_argument("--dev", type=Path, help="development CSV (overrides [run] dev)")
    p.add_argument("--output", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="per-epoch CSV log (default: <output>.log.csv)")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("predict", help="predict toxic offsets for a task CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True)

    for name, help_ in (("evaluate", "score predictions against gold"), ("analyze", "evaluate with all analyses")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--input", type=Path, required=True, help="prediction CSV")
        p.add_argument("--gold", type=Path, required=True, help="gold CSV, aligned by row order")
        p.add_argument("--buckets", action="store_true", help="span-length buckets")
        p.add_argument("--bucket-mode", choices=[m.value for m in BucketMode], default="post")
        p.add_argument("--lexicon", type=Path, help="lexicon file for the single-word split")
        p.add_argument("--micro", action="store_true", help="pooled-count F1 instead of the post mean")
        p.add_argument("--no-preprocess", action="store_true", help="tokenization used for bucketing")
        p.add_argument("--output", type=Path, help="machine-readable report CSV")
        p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model loss")
    _add_model_flags(p)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=25, help="sampled entries per tensor")
    p.add_argument("--debug-corrupt-grad", action="store_true", help="scale one analytic gradient (must fail)")
    return parser


# ---------------------------------------------------------------- helpers

def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.apply_overrides(
        arch=args.arch, seed=args.seed, scheme=args.scheme,
        no_crf=args.no_crf, no_lstm=args.no_lstm, no_preprocess=args.no_preprocess,
    )


def _read(path, strict=True):
    try:
        return dataio.read_tsd_csv(path, strict=strict)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _write_log(path: Path, log):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "dev_f1", "lr", "steps"])
        for e in log:
            w.writerow([e.epoch, repr(e.loss), repr(e.dev_f1), repr(e.lr), e.steps])


# ---------------------------------------------------------------- commands

def _lexicon(path):
    try:
        return load_lexicon(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"lexicon {path}: {exc}") from exc


def cmd_synth(args) -> int:
    lexicon = sorted(_lexicon(args.lexicon)) if args.lexicon else dataio.SYNTH_LEXICON
    mix = dataio.TASK_SPAN_MIX
    if args.mix:
        try:
            mix = tuple(float(x) for x in args.mix.split(","))
        except ValueError as exc:
            raise UsageError(f"--mix: {exc}") from exc
    try:
        records = dataio.gen_synthetic(
            args.seed, args.size, args.vocab_size, lexicon, mix, args.mode, vocab_seed=args.vocab_seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dataio.write_predictions(records, [r.spans for r in records], args.output)
    print(f"wrote {len(records)} posts to {args.output}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    records = _read(args.input, args.strict)
    scheme = TagScheme(args.scheme)

    with open(args.output, "w", encoding="utf-8") as fh:
        for rec in records:
            tokens = prepare(rec.text, not args.no_preprocess)
            spans = offsets_to_token_spans(rec.spans, tokens)
            tags = token_spans_to_tags(spans, len(tokens), scheme)
            fh.write(json.dumps({
                "text": rec.text,
                "tokens": [[t.surface, t.orig_start, t.orig_end] for t in tokens],
                "tags": list(tags.tags),
                "spans": [[sp.s, sp.e] for sp in spans],
            }, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} records to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_path = args.input or cfg.train_path
    dev_path = args.dev or cfg.dev_path
    if train_path is None:
        raise UsageError("no training data: pass --input or set [run] train")
    strict = cfg.strict if args.strict is None else args.strict
    train_records = _read(train_path, strict)
    dev_records = _read(dev_path, strict) if dev_path else []
    if not train_records:
        raise DataError(f"{train_path} has no records")
    log_path = args.log or args.output.with_name(args.output.name + ".log.csv")

    texts = [r.text for r in train_records]
    try:
        if cfg.architecture == "tagger":
            model = Tagger.build(cfg.tagger, texts)
            result = train(model, train_records, dev_records, cfg.schedule)
        else:
            model = BiaffineModel.build(cfg.biaffine, texts)
            result = train_biaffine(model, train_records, dev_records, cfg.biaffine_schedule)
    except NumericError as exc:
        _write_log(log_path, exc.log)
        dataio.save_checkpoint(model, args.output)
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    dataio.save_checkpoint(model, args.output)
    _write_log(log_path, result.log)
    print(f"best dev F1 {result.best_dev_f1:.4f} after {len(result.log)} epochs; checkpoint {args.output}, log {log_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = dataio.load_checkpoint(args.model)
    records = _read(args.input, args.strict)
    preds = model.predict_posts([r.text for r in records])
    dataio.write_predictions(records, preds, args.output)
    print(f"wrote {len(records)} predictions to {args.output}")
    return EXIT_OK


def _evaluate(args, buckets: bool, lexicon) -> AnalysisReport:
    preds = _read(args.input, args.strict)
    golds = _read(args.gold, args.strict)
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} prediction rows but {len(golds)} gold rows")
    if not golds:
        raise DataError("no records to evaluate")
    pairs = [(p.spans, g.spans) for p, g in zip(preds, golds)]
    report = AnalysisReport(corpus_f1(pairs, micro=args.micro))
    if buckets or lexicon:
        tokens = [prepare(g.text, not args.no_preprocess) for g in golds]
        triples = [(p, g, t) for (p, g), t in zip(pairs, tokens)]
        if buckets:
            report.buckets = bucketed_f1(triples, BucketMode(args.bucket_mode))
            report.span_counts = span_length_counts((g, t) for (_, g), t in zip(pairs, tokens))
        if lexicon:
            a, b, na, nb = lexicon_split_f1(triples, lexicon)
            report.lexicon_f1 = (a, b)
            report.lexicon_counts = (na, nb)
    return report


def _finish_report(args, report: AnalysisReport) -> int:
    print(report.table())
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["section", "key", "value"])
            w.writerows(report.rows())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    lexicon = _lexicon(args.lexicon) if args.lexicon else None
    return _finish_report(args, _evaluate(args, args.buckets, lexicon))


def cmd_analyze(args) -> int:
    lexicon = _lexicon(args.lexicon) if args.lexicon else DEFAULT_LEXICON
    return _finish_report(args, _evaluate(args, True, lexicon))


def cmd_gradcheck(args) -> int:
    cfg = _run_config(args)
    rec = dataio.TsdRecord(list(GRADCHECK_GOLD), GRADCHECK_TEXT)

    if cfg.architecture == "tagger":
        model = Tagger.build(cfg.tagger, [rec.text])
        ex = make_examples([rec], cfg.tagger.use_preprocessing)[0]
        fn = model.loss_fn([ex.surfaces], [model.gold_tags(ex)])
    else:
        model = BiaffineModel.build(cfg.biaffine, [rec.text])
        ex = make_examples([rec], cfg.biaffine.use_preprocessing)[0]
        fn = model.loss_fn([ex.surfaces], [ex.spans])
    # move off the structured init (zero CRF, zero biases) so every path carries gradient
    rng = child_rng(cfg.seed, 2)
    for name in model.params.names():
        model.params.values[name] += rng.normal(0.0, 0.1, model.params[name].shape)
    if args.debug_corrupt_grad:
        victim = model.params.names()[0]
        inner = fn

        def fn():
            loss, grads = inner()
            grads = dict(grads)
            grads[victim] = grads[victim] * 1.5 + 1e-3
            return loss, grads

    report = gradient_check(
        fn, model.params, step=args.step, tolerance=args.tolerance,
        max_entries=args.max_entries, rng=child_rng(cfg.seed, 3),
    )
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ToxicSpansError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
