"""Command-line entry point: ``nnlda {synth,train,eval,topwords}``.

Log verbosity is read from the ``NNLDA_LOG_LEVEL`` environment variable
(default WARNING). Exit codes: 0 success, 1 runtime or data error,
2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .corpus import (
    EmptyCorpusError, SchemaError, SyntheticConfig, generate_synthetic, ingest_csv, write_csv,
)
from .evaluation import (
    EvalReport, classify_ratings, elbo_ratio_report, generate_comment, grouping_metrics,
    log_perplexity, write_rows,
)
from .inference import ConfigurationError, train
from .model import (
    PRIOR_KINDS, DimensionMismatchError, ModelFormatError, TrainConfig, load_model, save_model,
)

LOG_ENV = "NNLDA_LOG_LEVEL"
logger = logging.getLogger("nnlda")

_DATA_ERRORS = (SchemaError, EmptyCorpusError, ConfigurationError, ModelFormatError,
                DimensionMismatchError, FloatingPointError, OSError, ValueError)


class UsageError(Exception):
    pass


def parse_topics(text: str) -> list[int]:
    """``"4"`` -> [4]; ``"4..6"`` -> [4, 5, 6] (inclusive)."""
    try:
        if ".." in text:
            lo, hi = (int(p) for p in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad topic range {text!r}; use K or A..B") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty topic range {text!r}")
    return list(range(lo, hi + 1))


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _split_cols(text: str | None) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def parse_side(text: str) -> dict[str, str]:
    """``"product=TV,description=price"`` -> dict."""
    out = {}
    for item in _split_cols(text):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"side entry {item!r} is not name=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _atomic_write(path: Path, write) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent if str(path.parent) else ".")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"file not found: {p}")


def _require_dir_for(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise OSError(f"output directory does not exist: {parent}")


# -- synth ----------------------------------------------------------------

def cmd_synth(args) -> int:
    _require_dir_for(args.out)
    cfg = SyntheticConfig(num_docs=args.docs, min_len=args.min_len, max_len=args.max_len,
                          seed=args.seed)
    corpus = generate_synthetic(cfg)
    _atomic_write(args.out, lambda p: write_csv(corpus, p))
    print(f"wrote {args.out}: {corpus.M} documents, mean length "
          f"{corpus.lengths.mean():.3f}, vocabulary size {corpus.V}")
    return 0


# -- train ----------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    for name in ("tol", "max_rounds", "estep_tol", "estep_max_iter", "hidden_dim",
                 "batch_size", "learning_rate", "weight_decay"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _sweep_path(out: Path, K: int, seed: int, single: bool) -> Path:
    if single:
        return out
    return out.with_name(f"{out.stem}.K{K}.seed{seed}{out.suffix or '.model'}")


def cmd_train(args) -> int:
    side_cols = _split_cols(args.side_cols)
    if args.model in ("dmr", "nnlda") and not side_cols:
        raise UsageError(f"--model {args.model} requires --side-cols")
    _require_files(args.corpus)
    out = Path(args.out)
    _require_dir_for(out)

    corpus = ingest_csv(args.corpus, text_col=args.text_col, side_cols=side_cols,
                        continuous_cols=_split_cols(args.continuous_cols))
    cfg = _train_config(args)
    single = len(args.topics) == 1 and len(args.seed) == 1
    rows = []
    for K in args.topics:
        for seed in args.seed:
            model = train(corpus, K, args.model, seed, cfg)
            path = _sweep_path(out, K, seed, single)
            _atomic_write(path, lambda p: save_model(model, p))
            stop_round, elbo = model.training_log[-1]
            print(f"{args.model} K={K} seed={seed}: stopped at round {stop_round}, "
                  f"ELBO {elbo:.6f} -> {path}")
            rows.append((args.model, K, seed, "final_elbo", elbo))
            rows.append((args.model, K, seed, "rounds", stop_round + 1))

    summary = args.summary
    if summary is None and not single:
        summary = out.with_name(f"{out.stem}.sweep.csv")
    if summary is not None:
        _atomic_write(Path(summary), lambda p: write_rows(rows, p))
        print(f"summary -> {summary}")
    return 0


# -- eval -----------------------------------------------------------------

def _load_eval_corpus(args, model, **cols):
    _require_files(args.corpus)
    return ingest_csv(args.corpus, text_col=args.text_col, vocabulary=model.vocabulary,
                      side_schema=model.side_schema, **cols)


def _side_source(a, b):
    """Model whose side schema the shared comparison corpus should use."""
    if a.side_schema.dim and b.side_schema.dim and a.side_schema != b.side_schema:
        raise DimensionMismatchError("models were trained with different side schemas")
    return a if a.side_schema.dim else b


def _emit(report: EvalReport, out) -> None:
    print(report.summary())
    if out:
        _atomic_write(Path(out), lambda p: write_rows(report.rows(), p))


def _report_for(model) -> EvalReport:
    return EvalReport(model=model.kind, K=model.K, seed=model.seed)


def cmd_eval(args) -> int:
    if args.task == "compare":
        _require_files(args.a, args.b, args.corpus)
        a, b = load_model(args.a), load_model(args.b)
        corpus = _load_eval_corpus(args, _side_source(a, b))
        report = EvalReport(model=f"{a.kind}-vs-{b.kind}", K=a.K, seed=a.seed,
                            elbo_ratio=elbo_ratio_report(a, b, corpus))
        _emit(report, args.out)
        return 0

    _require_files(args.model)
    model = load_model(args.model)
    report = _report_for(model)
    if args.task == "perplexity":
        report.log_perplexity = log_perplexity(model, _load_eval_corpus(args, model))
    elif args.task == "grouping":
        corpus = _load_eval_corpus(args, model, group_col=args.group_col)
        report.grouping = grouping_metrics(model, corpus)
    elif args.task == "classify":
        corpus = _load_eval_corpus(args, model, label_col=args.label_col)
        report.classification = classify_ratings(model, corpus, args.folds, args.cv_seed)
    elif args.task == "gencomment":
        side = model.side_schema.encode(args.side)
        words = generate_comment(model, side, args.len)
        label = ",".join(f"{k}={v}" for k, v in args.side.items())
        report.comments.append((label, words))
        print(" ".join(words))
        if args.out:
            _atomic_write(Path(args.out), lambda p: write_rows(report.rows(), p))
        return 0
    _emit(report, args.out)
    return 0


# -- topwords -------------------------------------------------------------

def cmd_topwords(args) -> int:
    _require_files(args.model)
    model = load_model(args.model)
    if args.n > model.V:
        logger.warning("n=%d exceeds vocabulary size %d; capped", args.n, model.V)
    for i, words in enumerate(model.top_words(args.n)):
        print(f"topic {i}: {' '.join(words)}")
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnlda", description="Topic models with side-data priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic product-review corpus as CSV")
    p.add_argument("--docs", type=int, default=2000)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one model or a sweep over K and seeds")
    p.add_argument("--model", choices=PRIOR_KINDS, required=True)
    p.add_argument("--topics", type=parse_topics, required=True, help="K or A..B (inclusive)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=parse_seeds, required=True, help="seed or comma list")
    p.add_argument("--out", required=True, help="model path; sweeps insert .K<k>.seed<s>")
    p.add_argument("--summary", help="CSV of final ELBOs (default <out>.sweep.csv for sweeps)")
    p.add_argument("--text-col", default="text")
    p.add_argument("--side-cols", help="comma list of side columns")
    p.add_argument("--continuous-cols", help="side columns to read as numbers")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--estep-tol", type=float)
    p.add_argument("--estep-max-iter", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    tasks = p.add_subparsers(dest="task", required=True)

    def task(name, help, needs_model=True):
        t = tasks.add_parser(name, help=help)
        if needs_model:
            t.add_argument("--model", required=True)
        t.add_argument("--out", help="CSV file for (model, K, seed, metric, value) rows")
        return t

    t = task("perplexity", "held-out log-perplexity")
    t.add_argument("--corpus", required=True)
    t.add_argument("--text-col", default="text")
    t = task("grouping", "topic/group matching precision, recall and F1")
    t.add_argument("--corpus", required=True)
    t.add_argument("--text-col", default="text")
    t.add_argument("--group-col", required=True)
    t = task("classify", "cross-validated rating classification on topic features")
    t.add_argument("--corpus", required=True)
    t.add_argument("--text-col", default="text")
    t.add_argument("--label-col", required=True)
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--cv-seed", type=int, default=0)
    t = task("gencomment", "top words for a side-feature combination")
    t.add_argument("--side", type=parse_side, required=True, help="name=value,...")
    t.add_argument("--len", type=int, default=5)
    t = task("compare", "per-word ELBO difference of two models", needs_model=False)
    t.add_argument("--a", required=True)
    t.add_argument("--b", required=True)
    t.add_argument("--corpus", required=True)
    t.add_argument("--text-col", default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topwords", help="print the top words of each topic")
    p.add_argument("--model", required=True)
    p.add_argument("-n", type=int, default=5)
    p.set_defaults(func=cmd_topwords)
    return parser


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nnlda: error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"nnlda: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
