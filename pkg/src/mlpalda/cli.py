"""Command line driver.

Subcommands: train, predict, evaluate, simulate-crowd, discretize, sweep.
Exit codes: 0 success; 1 usage or input problem; 2 training hit the
iteration cap without converging (the model file is still written);
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from .crowd import ADVERSARIAL_BUCKETS, DEFAULT_BUCKETS, ann_rmse, annotate_corpus, sample_pool
from .data import (
    CorpusFormatError,
    discretize_features,
    fit_discretizer,
    load_corpus,
    load_features,
    load_pool_file,
    read_predictions,
    save_corpus,
    save_discretizer,
    save_pool_file,
    split_corpus,
    write_crowd_file,
    write_predictions,
)
from .inference import NumericalFailureError, TrainConfig, predict, train
from .metrics import compute_report
from .model import Dimensions, load_model, normalize_mode, save_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_CONVERGENCE = 2
EXIT_NUMERICAL = 3

SWEEP_HEADER = "seed,train_fraction,topics,avg_accuracy,micro_f1,avg_class_loglik,ann_rmse"


def _parse_buckets(spec: str):
    if spec == "default":
        return DEFAULT_BUCKETS
    if spec == "adversarial":
        return ADVERSARIAL_BUCKETS
    buckets = []
    for part in spec.split(","):
        toks = part.split(":")
        if len(toks) != 3:
            raise ValueError(f"bad bucket {part!r}; expected <count>:<low>:<high>")
        buckets.append((int(toks[0]), float(toks[1]), float(toks[2])))
    return tuple(buckets)


def _train_config(args, mode: str) -> TrainConfig:
    return TrainConfig(
        max_em_iters=args.max_iters,
        em_rel_tol=args.tol,
        max_estep_iters=args.max_estep_iters,
        estep_tol=args.estep_tol,
        mode=mode,
        smoothing=args.smoothing == "on",
        seed=args.seed,
    )


def _known_truth(corpus):
    rows = []
    for doc in corpus:
        if doc.true_labels is None or not np.all(np.isin(doc.true_labels, (0, 1))):
            raise ValueError(f"document {doc.doc_id} has unknown labels; cannot evaluate")
        rows.append(doc.true_labels)
    return np.stack(rows)


def _predict_corpus(corpus, params, smoothed, cfg, threshold):
    beliefs, labels = [], []
    for doc in corpus:
        b, l = predict(doc, params, smoothed, cfg, threshold)
        beliefs.append(b)
        labels.append(l)
    return np.stack(beliefs), np.stack(labels)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    mode = normalize_mode(args.mode)
    if mode == "crowd" and args.crowd is None:
        raise ValueError("crowd mode needs --crowd")
    corpus, dims = load_corpus(args.corpus, args.crowd)
    dims = dims.with_topics(args.topics)
    cfg = _train_config(args, mode)
    threads = 1 if args.deterministic else args.threads
    params, topics, trace = train(corpus, dims, cfg, threads=threads)
    save_model(args.model_out, params, dims, mode, topics)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write(trace.to_csv())
    return EXIT_OK if trace.converged else EXIT_NO_CONVERGENCE


def cmd_predict(args) -> int:
    params, dims, smoothed, mode = load_model(args.model_in)
    corpus, cdims = load_corpus(args.corpus)
    if cdims.V != dims.V or cdims.C != dims.C:
        raise ValueError(
            f"model expects V={dims.V} C={dims.C}, corpus has V={cdims.V} C={cdims.C}"
        )
    cfg = TrainConfig(
        mode=mode,
        smoothing=smoothed is not None,
        max_estep_iters=args.max_estep_iters,
        estep_tol=args.estep_tol,
    )
    beliefs, labels = _predict_corpus(corpus, params, smoothed, cfg, args.threshold)
    write_predictions(
        args.out, [(doc.doc_id, b, l) for doc, b, l in zip(corpus, beliefs, labels)]
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if (args.predictions is None) == (args.model_in is None):
        raise ValueError("evaluate needs exactly one of --predictions or --model-in")
    corpus, cdims = load_corpus(args.corpus)
    truth = _known_truth(corpus)
    rmse = None
    if args.predictions is not None:
        by_id = {}
        for doc_id, b, l in read_predictions(args.predictions):
            if b.size != cdims.C:
                raise ValueError(f"predictions carry {b.size} classes, corpus has {cdims.C}")
            by_id[doc_id] = (b, l)
        missing = [d.doc_id for d in corpus if d.doc_id not in by_id]
        if missing:
            raise ValueError(f"predictions missing for document {missing[0]!r}")
        beliefs = np.stack([by_id[d.doc_id][0] for d in corpus])
        labels = np.stack([by_id[d.doc_id][1] for d in corpus])
    else:
        params, dims, smoothed, mode = load_model(args.model_in)
        if cdims.V != dims.V or cdims.C != dims.C:
            raise ValueError(
                f"model expects V={dims.V} C={dims.C}, corpus has V={cdims.V} C={cdims.C}"
            )
        cfg = TrainConfig(
            mode=mode,
            smoothing=smoothed is not None,
            max_estep_iters=args.max_estep_iters,
            estep_tol=args.estep_tol,
        )
        beliefs, labels = _predict_corpus(corpus, params, smoothed, cfg, args.threshold)
        if args.pool is not None:
            truth_rho = load_pool_file(args.pool)
            if truth_rho.size != params.rho.size:
                raise ValueError(
                    f"pool file has {truth_rho.size} annotators, model has {params.rho.size}"
                )
            rmse = ann_rmse(params.rho, truth_rho)
    report = compute_report(labels, beliefs, truth, ann_rmse=rmse)
    text = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate_crowd(args) -> int:
    corpus, _ = load_corpus(args.corpus)
    pool = sample_pool(_parse_buckets(args.buckets), args.seed, per_doc_count=args.per_doc)
    labeled, _ = annotate_corpus(corpus, pool, args.seed, mask_fraction=args.mask_fraction)
    write_crowd_file(args.crowd_out, labeled, K=pool.size)
    if args.pool_out:
        save_pool_file(args.pool_out, pool.qualities)
    return EXIT_OK


def cmd_discretize(args) -> int:
    rows, _, C = load_features(args.features)
    values = np.concatenate([r[2] for r in rows])
    disc = fit_discretizer(values, args.clusters, args.seed)
    docs = discretize_features(rows, disc)
    save_corpus(args.corpus_out, docs, Dimensions(D=len(docs), C=C, T=1, V=disc.size))
    if args.disc_out:
        save_discretizer(args.disc_out, disc)
    return EXIT_OK


def _fmt_cell(x) -> str:
    return "" if x is None else f"{x:.17g}"


def cmd_sweep(args) -> int:
    mode = normalize_mode(args.mode)
    fractions = [float(x) for x in args.fractions.split(",") if x]
    topic_grid = [int(x) for x in args.topic_grid.split(",") if x]
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise ValueError("--fractions entries must lie in (0, 1]")
    if not topic_grid or any(t < 1 for t in topic_grid):
        raise ValueError("--topic-grid entries must be >= 1")
    if args.repeats < 1:
        raise ValueError("--repeats must be >= 1")
    if not 0.0 < args.test_fraction < 1.0:
        raise ValueError("--test-fraction must be in (0, 1)")
    corpus, dims = load_corpus(args.corpus)
    buckets = _parse_buckets(args.buckets)
    threads = 1 if args.deterministic else args.threads

    lines = [SWEEP_HEADER]
    for frac in fractions:
        for T in topic_grid:
            cell = []
            for rep in range(args.repeats):
                seed = args.seed + rep
                train_docs, test_docs = split_corpus(corpus, 1.0 - args.test_fraction, seed)
                n_use = max(1, math.ceil(frac * len(train_docs)))
                use = train_docs[:n_use]
                pool = None
                if mode == "crowd":
                    pool = sample_pool(buckets, seed, per_doc_count=args.per_doc)
                    use, _ = annotate_corpus(use, pool, seed)
                    run_dims = Dimensions(D=len(use), C=dims.C, T=T, V=dims.V, K=pool.size)
                else:
                    run_dims = Dimensions(D=len(use), C=dims.C, T=T, V=dims.V)
                cfg = TrainConfig(
                    max_em_iters=args.max_iters,
                    em_rel_tol=args.tol,
                    max_estep_iters=args.max_estep_iters,
                    estep_tol=args.estep_tol,
                    mode=mode,
                    smoothing=args.smoothing == "on",
                    seed=seed,
                )
                params, topics, _ = train(use, run_dims, cfg, threads=threads)
                pcfg = TrainConfig(
                    mode=mode,
                    smoothing=cfg.smoothing,
                    max_estep_iters=args.max_estep_iters,
                    estep_tol=args.estep_tol,
                )
                beliefs, labels = _predict_corpus(
                    test_docs, params, topics, pcfg, args.threshold
                )
                truth = _known_truth(test_docs)
                rmse = ann_rmse(params.rho, pool.qualities) if pool is not None else None
                report = compute_report(labels, beliefs, truth, ann_rmse=rmse)
                cell.append(report)
                lines.append(
                    f"{seed},{frac:g},{T},{report.avg_accuracy:.17g},"
                    f"{report.micro_f1:.17g},{report.avg_class_loglik:.17g},"
                    f"{_fmt_cell(report.ann_rmse)}"
                )
            mean_rmse = (
                float(np.mean([r.ann_rmse for r in cell]))
                if all(r.ann_rmse is not None for r in cell)
                else None
            )
            lines.append(
                f"mean,{frac:g},{T},"
                f"{float(np.mean([r.avg_accuracy for r in cell])):.17g},"
                f"{float(np.mean([r.micro_f1 for r in cell])):.17g},"
                f"{float(np.mean([r.avg_class_loglik for r in cell])):.17g},"
                f"{_fmt_cell(mean_rmse)}"
            )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-estep-iters", type=int, default=100)
    p.add_argument("--estep-tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothing", choices=("on", "off"), default="off")
    p.add_argument("--mode", choices=("crowd", "nocrowd", "no-crowd"), default="nocrowd")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded E-step for run-to-run identical files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlpalda",
        description="Presence-absence topic model over multi-label documents, "
        "with optional crowd-annotator noise modeling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model to a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--crowd")
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--trace-out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="class-presence beliefs for each document")
    p.add_argument("--model-in", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-estep-iters", type=int, default=100)
    p.add_argument("--estep-tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against known labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions")
    p.add_argument("--model-in")
    p.add_argument("--pool", help="true annotator qualities; adds ann_rmse")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-estep-iters", type=int, default=100)
    p.add_argument("--estep-tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate-crowd", help="draw noisy annotators over a labeled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--crowd-out", required=True)
    p.add_argument("--pool-out")
    p.add_argument("--buckets", default="default",
                   help="'default', 'adversarial', or <count>:<low>:<high>[,...]")
    p.add_argument("--per-doc", type=int, default=5)
    p.add_argument("--mask-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate_crowd)

    p = sub.add_parser("discretize", help="turn real-valued features into a word corpus")
    p.add_argument("--features", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--corpus-out", required=True)
    p.add_argument("--disc-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("sweep", help="grid over training fraction and topic count")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default="1.0",
                   help="comma list of training-split fractions in (0, 1]")
    p.add_argument("--topic-grid", required=True, help="comma list of topic counts")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--buckets", default="default")
    p.add_argument("--per-doc", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage problems, 0 on --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CorpusFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
