"""Command-line entry point: corpus tooling, training, evaluation, serving."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import corpus as corpus_mod
from . import dialogue as dialogue_mod
from .base import Intent, IntentGateError
from .config import AppConfig, build_classifier, load_config
from .features import fit_tfidf, transform_many
from .forest import (
    ForestClassifier,
    ForestParams,
    ModelBundle,
    fit_forest,
    load_model,
    save_model,
    tune,
)
from .service import build_service, run as run_service


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; runtime failures exit 2 (see main)
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_synth(subparsers) -> None:
    p = subparsers.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rate", type=float, required=True, help="positive (change-topic) fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_split(subparsers) -> None:
    p = subparsers.add_parser("split", help="split a dataset 60/20/20")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grouped", action="store_true", help="keep conversations intact")
    p.add_argument("--out", required=True)


def _add_agreement(subparsers) -> None:
    p = subparsers.add_parser("agreement", help="inter-annotator agreement of a dataset")
    p.add_argument("--in", dest="in_path", required=True)


def _add_train(subparsers) -> None:
    p = subparsers.add_parser("train", help="fit TF-IDF + forest on the train split")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--features-per-split", default="sqrt")
    p.add_argument("--ngram-max", type=int, default=2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def _add_tune(subparsers) -> None:
    p = subparsers.add_parser("tune", help="random-search forest hyperparameters")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=25)
    p.add_argument("--ngram-max", type=int, default=2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def _add_eval(subparsers) -> None:
    p = subparsers.add_parser("eval", help="evaluate a saved model on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--records", help="write per-message JSONL here")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")


def _add_bench(subparsers) -> None:
    p = subparsers.add_parser("bench", help="compare configured backends on the test split")
    p.add_argument("--config", help="TOML config naming the backends")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out", help="write the report here instead of stdout")


def _add_serve(subparsers) -> None:
    p = subparsers.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--host")
    p.add_argument("--port", type=int)


def _add_chat(subparsers) -> None:
    p = subparsers.add_parser("chat", help="local REPL over the dialogue engine")
    p.add_argument("--config", help="TOML config file")


def _load_split_parts(in_path: str, split_path: str):
    dataset = corpus_mod.load_dataset(in_path)
    split = corpus_mod.load_split_result(split_path)
    return (
        dataset,
        dataset.subset(split.train),
        dataset.subset(split.validation),
        dataset.subset(split.test),
    )


def _texts_labels(ds: corpus_mod.Dataset) -> tuple[list[str], list[Intent]]:
    return [m.text for m in ds.messages], [m.label for m in ds.messages]


def _cmd_synth(args) -> int:
    dataset = corpus_mod.generate_synthetic_corpus(args.n, args.rate, args.seed)
    corpus_mod.save_dataset(dataset, args.out)
    balance = corpus_mod.class_balance(dataset)
    print(f"wrote {len(dataset)} messages to {args.out} (change-topic rate {balance:.4f})")
    return 0


def _cmd_split(args) -> int:
    dataset = corpus_mod.load_dataset(args.in_path)
    split = corpus_mod.split_dataset(
        dataset, tuple(args.ratios), seed=args.seed, grouped=args.grouped
    )
    corpus_mod.save_split_result(split, args.out)
    print(
        f"train/validation/test sizes: {len(split.train)}/"
        f"{len(split.validation)}/{len(split.test)} -> {args.out}"
    )
    return 0


def _cmd_agreement(args) -> int:
    dataset = corpus_mod.load_dataset(args.in_path)
    pairs = corpus_mod.agreement_pairs(dataset)
    report = corpus_mod.compute_agreement(pairs)
    print(f"items: {report.n_items}")
    print(f"percent agreement: {report.percent_agreement:.4f}")
    print(f"kappa: {report.kappa:.4f}")
    return 0


def _fit_bundle(train_ds, ngram_max: int, params: ForestParams, threshold: float) -> ModelBundle:
    texts, labels = _texts_labels(train_ds)
    tfidf = fit_tfidf(texts, ngram_range=(1, ngram_max))
    X = transform_many(tfidf, texts)
    forest = fit_forest(X, labels, params)
    return ModelBundle(tfidf=tfidf, forest=forest, threshold=threshold)


def _validation_f1(bundle: ModelBundle, val_ds) -> float:
    run = bench_mod.evaluate(
        ForestClassifier(bundle), val_ds, decision_threshold=bundle.threshold, warmup=False
    )
    return run.result.macro_f1


def _cmd_train(args) -> int:
    _, train_ds, val_ds, _ = _load_split_parts(args.in_path, args.split)
    fps = args.features_per_split
    if fps != "sqrt":
        fps = int(fps)
    params = ForestParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        features_per_split=fps,
        seed=args.seed,
    )
    bundle = _fit_bundle(train_ds, args.ngram_max, params, args.threshold)
    save_model(bundle, args.out)
    print(f"model written to {args.out}")
    print(f"validation macro-F1: {_validation_f1(bundle, val_ds):.4f}")
    return 0


def _cmd_tune(args) -> int:
    _, train_ds, val_ds, _ = _load_split_parts(args.in_path, args.split)
    train_texts, train_labels = _texts_labels(train_ds)
    val_texts, val_labels = _texts_labels(val_ds)
    tfidf = fit_tfidf(train_texts, ngram_range=(1, args.ngram_max))
    X_train = transform_many(tfidf, train_texts)
    X_val = transform_many(tfidf, val_texts)
    result = tune(
        (X_train, train_labels),
        (X_val, val_labels),
        budget=args.budget,
        seed=args.seed,
        threshold=args.threshold,
    )
    forest = fit_forest(X_train, train_labels, result.params)
    bundle = ModelBundle(tfidf=tfidf, forest=forest, threshold=args.threshold)
    save_model(bundle, args.out)
    print(f"best params: {result.params}")
    print(f"validation macro-F1: {result.macro_f1:.4f}")
    print(f"model written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    dataset, _, _, test_ds = _load_split_parts(args.in_path, args.split)
    bundle = load_model(args.model)
    run = bench_mod.evaluate(
        ForestClassifier(bundle), test_ds, decision_threshold=bundle.threshold
    )
    if args.records:
        bench_mod.write_records_jsonl(run.records, args.records)
    print(bench_mod.render_report([run.result], format=args.format), end="")
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else AppConfig()
    _, _, _, test_ds = _load_split_parts(args.in_path, args.split)
    results = []
    for name in config.bench_backends:
        backend_config = AppConfig(
            backend=name,
            model_path=config.model_path,
            remote=config.remote,
            mock_latency_seconds=config.mock_latency_seconds,
        )
        classifier, _ = build_classifier(backend_config)
        run = bench_mod.evaluate(classifier, test_ds)
        results.append(run.result)
    report = bench_mod.render_report(results, format=args.format)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        print(report, end="")
    return 0


def _cmd_serve(args) -> int:
    config = load_config(args.config) if args.config else AppConfig()
    if args.host or args.port:
        from dataclasses import replace

        config = replace(
            config,
            host=args.host or config.host,
            port=args.port if args.port is not None else config.port,
        )
    run_service(config)
    return 0


def _cmd_chat(args) -> int:
    config = load_config(args.config) if args.config else AppConfig()
    service = build_service(config)
    conversation_id = "local-chat"
    print(f"chatting with backend {config.backend!r}; Ctrl-D to quit")
    print(f"tutor> {service.phases[0].description}")
    while True:
        try:
            line = input("you> ")
        except (EOFError, KeyboardInterrupt):
            print()
            return 0
        if not line.strip():
            continue
        try:
            response = service.turn(conversation_id, line)
        except dialogue_mod.ConversationCompleted:
            print("tutor> (the lesson is already complete)")
            return 0
        if response["type"] == "reply":
            print(f"tutor> {response['text']}")
        else:
            print(f"[navigation event: {response['navigation_kind']}]")
            return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "agreement": _cmd_agreement,
    "train": _cmd_train,
    "tune": _cmd_tune,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
    "chat": _cmd_chat,
}


def build_parser() -> _Parser:
    parser = _Parser(
        prog="intentgate",
        description="Intent-detection gateway for chat lessons: data tooling, "
        "classifier training, benchmarking, and serving.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_synth(subparsers)
    _add_split(subparsers)
    _add_agreement(subparsers)
    _add_train(subparsers)
    _add_tune(subparsers)
    _add_eval(subparsers)
    _add_bench(subparsers)
    _add_serve(subparsers)
    _add_chat(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (IntentGateError, OSError) as exc:
        print(f"intentgate: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
