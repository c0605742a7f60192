"""Command line interface.

Subcommands: ``train``, ``matrix``, ``eval``, ``synth``, ``parse``, ``tag``.
Exit status is 0 on success, 2 for configuration errors and 3 when training
aborts on a non-finite value.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import metrics
from .data import (
    KEPT,
    SynthConfig,
    read_compression_tsv,
    read_conllu,
    read_tagged_tsv,
    synth_bilingual,
    write_bundle,
    write_conllu,
)
from .harness import (
    DataPaths,
    RunAborted,
    RunConfig,
    load_model,
    run_experiment,
    run_matrix,
    save_model,
)
from .model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3


def _budget(value: str):
    if value == "all":
        return value
    try:
        b = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget must be an integer or 'all', got {value!r}") from None
    if b < 0:
        raise argparse.ArgumentTypeError("budget must be nonnegative")
    return b


def _optional_float(value: str):
    return None if value.lower() == "none" else float(value)


def _add_run_flags(p: argparse.ArgumentParser, matrix: bool = False) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--task", choices=["tagging", "parsing"])
    if not matrix:
        p.add_argument("--objective", choices=["none", "gr", "gan", "wgan"])
        p.add_argument("--target-budget", type=_budget)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--clip-c", type=float)
    p.add_argument("--critic-steps", type=int)
    p.add_argument("--lr-tagger", type=float)
    p.add_argument("--lr-generator", type=float)
    p.add_argument("--lr-discriminator", type=float)
    p.add_argument("--lambda-schedule", choices=["constant", "ramp"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-grad-norm", type=_optional_float)
    p.add_argument("--discriminator-level", choices=["token", "sentence"])
    p.add_argument("--conditioning", choices=["previous", "independent"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--tagger-hidden", type=int)
    p.add_argument("--disc-hidden", type=int)
    p.add_argument("--d-word", type=int)
    p.add_argument("--d-pos", type=int)
    p.add_argument("--d-cluster", type=int)
    p.add_argument("--d-label", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--train-embeddings", action="store_true", default=None)
    p.add_argument("--metric", choices=["token_accuracy", "sentence_accuracy", "las"])
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int, required=True)
    data = p.add_argument_group("data (files)")
    data.add_argument("--source-train")
    data.add_argument("--target-train")
    data.add_argument("--target-unlabeled")
    data.add_argument("--dev")
    data.add_argument("--dev-language", choices=["source", "target"])
    data.add_argument("--test")
    data.add_argument("--embeddings")
    data.add_argument("--clusters")
    data.add_argument("--cluster-prefix", type=int)
    synth = p.add_argument_group("data (synthetic)")
    synth.add_argument("--synth", action="store_true", help="train on the synthetic bilingual bundle")
    _add_synth_flags(synth)


def _add_synth_flags(g) -> None:
    g.add_argument("--synth-seed", type=int)
    g.add_argument("--n-source", type=int)
    g.add_argument("--n-target-labeled", type=int)
    g.add_argument("--n-target-unlabeled", type=int)
    g.add_argument("--n-dev", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--vocab-size", type=int)
    g.add_argument("--n-tags", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--delta", type=float)


_SYNTH_FLAGS = (
    "n_source",
    "n_target_labeled",
    "n_target_unlabeled",
    "n_dev",
    "n_test",
    "vocab_size",
    "n_tags",
    "epsilon",
    "delta",
)
_PATH_FLAGS = ("source_train", "target_train", "target_unlabeled", "dev", "test", "embeddings", "clusters")


def _synth_config(args) -> SynthConfig:
    kw = {k: getattr(args, k) for k in _SYNTH_FLAGS if getattr(args, k, None) is not None}
    seed = args.synth_seed if args.synth_seed is not None else args.seed
    return SynthConfig(seed=seed, **kw)


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = RunConfig.from_dict(base)
    overrides = {}
    for name in RunConfig.__dataclass_fields__:
        if name in ("synth", "paths"):
            continue
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    for k, v in overrides.items():
        setattr(cfg, k, v)
    if args.synth:
        cfg.synth = _synth_config(args)
        cfg.paths = None
    elif any(getattr(args, k) is not None for k in _PATH_FLAGS):
        paths = cfg.paths or DataPaths()
        for k in _PATH_FLAGS:
            if getattr(args, k) is not None:
                setattr(paths, k, getattr(args, k))
        if args.cluster_prefix is not None:
            paths.cluster_prefix = args.cluster_prefix
        if args.dev_language is not None:
            paths.dev_language = 1 if args.dev_language == "target" else 0
        cfg.paths = paths
        cfg.synth = None
    return cfg


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    result = run_experiment(cfg)
    if args.save_model:
        save_model(result.estimator, args.save_model)
    print(f"{cfg.resolved_metric()}\t{result.final_test:.4f}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = config_from_args(args)
    objectives = args.objectives.split(",")
    budgets = [_budget(b) for b in args.budgets.split(",")]
    out = run_matrix(cfg, budgets, objectives, jobs=args.jobs)
    sys.stdout.write(out["tsv"])
    return EXIT_OK


def _read_any(path, task):
    if task == "parsing" or path.endswith(".conllu"):
        return read_conllu(path, require_heads=task != "parsing")
    try:
        return read_compression_tsv(path)
    except ValueError:
        return read_tagged_tsv(path)


def cmd_eval(args) -> int:
    if args.metric == "las":
        gold = [s.tree for s in read_conllu(args.gold)]
        pred = [s.tree for s in read_conllu(args.pred)]
        score = metrics.las(gold, pred)
    else:
        gold = [s.tags for s in _read_any(args.gold, "tagging")]
        pred = [s.tags for s in _read_any(args.pred, "tagging")]
        if any(t is None for t in gold + pred):
            raise ConfigError("eval: every sentence needs tags")
        score = (
            metrics.sentence_accuracy(gold, pred)
            if args.metric == "sentence_accuracy"
            else metrics.token_accuracy(gold, pred)
        )
    print(f"{args.metric}\t{score:.4f}")
    if args.metric != "las" and args.compression_rate:
        rate = 100.0 * sum(t == KEPT for s in pred for t in s) / sum(len(s) for s in pred)
        print(f"compression_rate\t{rate:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    bundle = synth_bilingual(_synth_config(args))
    paths = write_bundle(bundle, args.out)
    for k, v in sorted(paths.items()):
        print(f"{k}\t{v}")
    return EXIT_OK


def cmd_parse(args) -> int:
    est = load_model(args.model)
    sentences = read_conllu(args.input, require_heads=False)
    trees = est.predict(sentences)
    for s, t in zip(sentences, trees):
        s.tree = t
    write_conllu(sentences, args.output)
    return EXIT_OK


def cmd_tag(args) -> int:
    est = load_model(args.model)
    sentences = read_tagged_tsv(args.input)
    tags = est.predict(sentences)
    with open(args.output, "w", encoding="utf-8") as fh:
        for s, ts in zip(sentences, tags):
            for tok, tag in zip(s.tokens, ts):
                fh.write(f"{tok.form}\t{tag}\n")
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xladv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate one configuration")
    _add_run_flags(p)
    p.add_argument("--save-model", help="pickle the fitted estimator here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("matrix", help="objective x target-budget grid")
    _add_run_flags(p, matrix=True)
    p.add_argument("--objectives", default="none,gr,gan,wgan")
    p.add_argument("--budgets", default="0,1000,2000,all", help="comma-separated; 'all' allowed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("eval", help="score a prediction file against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metric", choices=["las", "token_accuracy", "sentence_accuracy"], default="las")
    p.add_argument("--compression-rate", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write the synthetic bilingual bundle to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parse", help="parse raw CoNLL-U with a saved parser")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("tag", help="tag FORM-per-line text with a saved tagger")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_tag)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
