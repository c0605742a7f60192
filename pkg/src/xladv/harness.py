"""Experiment runner: one run, or the objective x target-budget grid.

A run directory holds ``config.json`` (written before training), one JSON
record per epoch in ``metrics.jsonl``, ``summary.tsv`` and, separately so
the other files stay reproducible byte for byte, ``timing.json``.
"""
from __future__ import annotations

import json
import logging
import math
import os
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from . import metrics
from .data import (
    SOURCE,
    TARGET,
    DataBundle,
    SynthConfig,
    Vocabulary,
    embedding_matrix,
    load_brown_clusters,
    read_embedding_file,
    read_compression_tsv,
    read_conllu,
    read_tagged_tsv,
    synth_bilingual,
)
from .estimator import AdversarialParser, AdversarialTagger
from .model import OBJECTIVES, AdversarialConfig, ConfigError, NaNLossError

logger = logging.getLogger(__name__)

TASKS = ("tagging", "parsing")
TAG_METRICS = ("token_accuracy", "sentence_accuracy")


class RunAborted(RuntimeError):
    """Training hit a non-finite value; partial results are on disk."""


@dataclass
class DataPaths:
    source_train: Optional[str] = None
    target_train: Optional[str] = None
    target_unlabeled: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    embeddings: Optional[str] = None
    clusters: Optional[str] = None
    cluster_prefix: int = 8
    dev_language: int = SOURCE


@dataclass
class RunConfig:
    task: str = "tagging"
    objective: str = "none"
    lam: float = 0.1
    clip_c: float = 0.01
    critic_steps: Optional[int] = None
    lr_tagger: float = 0.05
    lr_generator: float = 0.05
    lr_discriminator: float = 0.01
    lambda_schedule: str = "constant"
    gamma: float = 10.0
    max_grad_norm: Optional[float] = 5.0
    discriminator_level: str = "token"
    conditioning: str = "previous"
    target_budget: Union[int, str] = 0
    epochs: int = 30
    batch_size: int = 16
    eval_every: int = 1
    patience: Optional[int] = None
    hidden: int = 64
    tagger_hidden: int = 128
    disc_hidden: int = 128
    d_word: int = 64
    d_pos: int = 16
    d_cluster: int = 8
    d_label: int = 8
    dropout: float = 0.0
    train_embeddings: bool = False
    metric: Optional[str] = None
    output_dir: Optional[str] = None
    seed: int = 0
    synth: Optional[SynthConfig] = None
    paths: Optional[DataPaths] = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        AdversarialConfig(**self.adversarial_kwargs())
        if not (self.target_budget == "all" or (isinstance(self.target_budget, int) and self.target_budget >= 0)):
            raise ConfigError(f"target_budget must be a nonnegative integer or 'all', got {self.target_budget!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        if (self.synth is None) == (self.paths is None):
            raise ConfigError("give exactly one of synthetic data parameters or data paths")
        if self.task == "tagging" and self.resolved_metric() not in TAG_METRICS:
            raise ConfigError(f"tagging metric must be one of {TAG_METRICS}")
        if self.paths is not None:
            p = self.paths
            if p.source_train is None or p.test is None:
                raise ConfigError("data paths need at least source_train and test")
            if self.objective != "none" and p.target_unlabeled is None and p.target_train is None:
                raise ConfigError(f"objective {self.objective!r} needs target-language text")
            if self.target_budget != 0 and p.target_train is None:
                raise ConfigError("a nonzero target budget needs target_train")
            if p.dev is not None and p.dev_language == TARGET and self.target_budget == 0:
                raise ConfigError(
                    "target-language dev data is not allowed without target supervision (budget 0)"
                )
        if self.patience is not None and self.dev_language() == TARGET and self.target_budget == 0:
            raise ConfigError("early stopping on target dev data is not allowed at budget 0")

    def dev_language(self) -> int:
        if self.paths is not None:
            return self.paths.dev_language
        return SOURCE

    def resolved_metric(self) -> str:
        if self.metric is not None:
            return self.metric
        return "las" if self.task == "parsing" else "token_accuracy"

    def adversarial_kwargs(self) -> dict:
        names = [f.name for f in fields(AdversarialConfig)]
        return {k: getattr(self, k) for k in names if hasattr(self, k)}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if d.get("synth") is not None:
            d["synth"] = SynthConfig(**d["synth"])
        if d.get("paths") is not None:
            d["paths"] = DataPaths(**d["paths"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunResult:
    rows: List[dict] = field(default_factory=list)
    final_test: float = float("nan")
    metric: str = ""
    wall_clock: float = 0.0
    aborted: bool = False
    estimator: object = None


# -- data ---------------------------------------------------------------


def load_bundle(cfg: RunConfig) -> DataBundle:
    if cfg.synth is not None:
        return synth_bilingual(cfg.synth)
    p = cfg.paths

    def read(path, lang, labeled=True):
        if path is None:
            return []
        if path.endswith(".conllu"):
            return read_conllu(path, language_id=lang, require_heads=labeled)
        if cfg.task == "parsing" and labeled:
            raise ConfigError(f"parsing needs CoNLL-U input, got {path}")
        try:
            return read_compression_tsv(path, language_id=lang)
        except ValueError:
            return read_tagged_tsv(path, language_id=lang)

    source = read(p.source_train, SOURCE)
    target_labeled = read(p.target_train, TARGET)
    target_unlabeled = [s.unlabeled() for s in read(p.target_unlabeled, TARGET, labeled=False)]
    dev = read(p.dev, p.dev_language)
    test = read(p.test, TARGET)
    clusters = load_brown_clusters(p.clusters, p.cluster_prefix) if p.clusters else None
    vectors = {}
    if p.embeddings:
        vectors, _ = read_embedding_file(p.embeddings)
    # embedding words join the vocabulary so unseen target forms keep their vectors
    vocab = Vocabulary.build(
        [source, target_labeled, target_unlabeled], extra_words=vectors.keys(), clusters=clusters
    )
    matrix, meta = None, {"dev_language": p.dev_language}
    if p.embeddings:
        matrix, report = embedding_matrix(vectors, vocab, seed=cfg.seed)
        meta["embedding_coverage"] = report.coverage
    meta["clusters"] = p.clusters
    meta["pos_source"] = "UPOS column (gold)"
    return DataBundle(source, target_labeled, target_unlabeled, dev, test, vocab, matrix, meta)


def _score(task: str, metric: str, est, corpus) -> float:
    if task == "parsing":
        return est.score(corpus)
    pred = est.predict(corpus)
    gold = [s.tags for s in corpus]
    if metric == "sentence_accuracy":
        return metrics.sentence_accuracy(gold, pred)
    return metrics.token_accuracy(gold, pred)


def make_estimator(cfg: RunConfig, bundle: DataBundle):
    cls = AdversarialParser if cfg.task == "parsing" else AdversarialTagger
    return cls(
        objective=cfg.objective,
        lam=cfg.lam,
        clip_c=cfg.clip_c,
        critic_steps=cfg.critic_steps,
        lr_tagger=cfg.lr_tagger,
        lr_generator=cfg.lr_generator,
        lr_discriminator=cfg.lr_discriminator,
        lambda_schedule=cfg.lambda_schedule,
        gamma=cfg.gamma,
        max_grad_norm=cfg.max_grad_norm,
        discriminator_level=cfg.discriminator_level,
        conditioning=cfg.conditioning,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        d_word=cfg.d_word,
        d_pos=cfg.d_pos,
        d_cluster=cfg.d_cluster,
        d_label=cfg.d_label,
        hidden=cfg.hidden,
        tagger_hidden=cfg.tagger_hidden,
        disc_hidden=cfg.disc_hidden,
        dropout=cfg.dropout,
        train_embeddings=cfg.train_embeddings,
        vocabulary=bundle.vocab,
        word_vectors=bundle.embeddings,
        patience=cfg.patience,
        seed=cfg.seed,
    )


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# -- runs ---------------------------------------------------------------


def run_experiment(cfg: RunConfig, bundle: Optional[DataBundle] = None) -> RunResult:
    """Train one configuration to completion and score it on the test set.

    Raises :class:`RunAborted` (after writing partial results) on a
    non-finite loss.
    """
    cfg.validate()
    out = cfg.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
    bundle = bundle if bundle is not None else load_bundle(cfg)
    metric = cfg.resolved_metric()
    if out:
        meta = {k: v for k, v in bundle.metadata.items() if k not in ("vectors", "hmm")}
        with open(os.path.join(out, "data.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)

    budget = len(bundle.target_labeled) if cfg.target_budget == "all" else cfg.target_budget
    if budget > len(bundle.target_labeled):
        raise ConfigError(
            f"target budget {budget} exceeds the {len(bundle.target_labeled)} labeled target sentences"
        )
    train = bundle.source_labeled + bundle.target_labeled[:budget]
    dev = bundle.dev or None
    test = bundle.test
    if cfg.synth is None and dev is not None and bundle.metadata.get("dev_language") == TARGET and budget == 0:
        raise ConfigError("target-language dev data is not allowed at budget 0")
    unlabeled = list(bundle.target_unlabeled) + [s.unlabeled() for s in bundle.target_labeled[budget:]]

    est = make_estimator(cfg, bundle)
    result = RunResult(metric=metric, estimator=est)
    metrics_path = os.path.join(out, "metrics.jsonl") if out else None
    if metrics_path:
        open(metrics_path, "w").close()

    def on_epoch(record, estimator):
        if record["epoch"] % cfg.eval_every == 0 or record["epoch"] == cfg.epochs:
            record["test"] = _score(cfg.task, metric, estimator, test)
        if cfg.objective == "wgan":
            record["max_abs_d"] = float(
                max(np.max(np.abs(t.value)) for t in estimator.params_.discriminator_tensors())
            )
        rec = dict(record)
        if not all(math.isfinite(v) for v in rec.values() if isinstance(v, float)):
            raise NaNLossError(f"non-finite metric in epoch {record['epoch']}")
        result.rows.append(rec)
        if metrics_path:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return False

    start = time.perf_counter()
    try:
        est.fit(train, X_target=unlabeled, X_dev=dev if cfg.patience else None, on_epoch=on_epoch)
    except NaNLossError as exc:
        result.aborted = True
        result.wall_clock = time.perf_counter() - start
        if out:
            with open(os.path.join(out, "aborted.json"), "w", encoding="utf-8") as fh:
                report = exc.report.as_dict() if getattr(exc, "report", None) else None
                json.dump({"error": str(exc), "last_report": report}, fh, indent=2, default=str)
        raise RunAborted(str(exc)) from exc
    result.final_test = _score(cfg.task, metric, est, test)
    result.wall_clock = time.perf_counter() - start
    if out:
        with open(os.path.join(out, "summary.tsv"), "w", encoding="utf-8") as fh:
            fh.write("task\tobjective\ttarget_budget\tseed\tepochs\tmetric\ttest\n")
            fh.write(
                f"{cfg.task}\t{cfg.objective}\t{cfg.target_budget}\t{cfg.seed}\t"
                f"{len(result.rows)}\t{metric}\t{result.final_test!r}\n"
            )
        with open(os.path.join(out, "timing.json"), "w", encoding="utf-8") as fh:
            json.dump({"wall_clock_seconds": result.wall_clock}, fh)
    return result


def save_model(estimator, path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(estimator, fh)


def load_model(path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _cell(args):
    cfg, bundle = args
    return run_experiment(cfg, bundle).final_test


def run_matrix(
    base: RunConfig,
    budgets: Sequence[Union[int, str]],
    objectives: Sequence[str],
    jobs: int = 1,
    share_data: bool = True,
) -> dict:
    """Final test metric for every (budget, objective) cell.

    Cell ``k`` (row-major over budgets, then objectives) runs with seed
    ``base.seed + k``.  Returns ``{"budgets", "objectives", "table", "tsv"}``
    where ``table[i][j]`` is the score for ``budgets[i]`` and
    ``objectives[j]``.
    """
    for o in objectives:
        if o not in OBJECTIVES:
            raise ConfigError(f"unknown objective {o!r}")
    bundle = load_bundle(base) if share_data else None
    cells = []
    for i, b in enumerate(budgets):
        for j, o in enumerate(objectives):
            k = i * len(objectives) + j
            out = os.path.join(base.output_dir, f"budget-{b}_{o}") if base.output_dir else None
            cells.append((replace(base, target_budget=b, objective=o, seed=base.seed + k, output_dir=out), bundle))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_cell, cells))
    else:
        scores = [_cell(c) for c in cells]
    table = [scores[i * len(objectives) : (i + 1) * len(objectives)] for i in range(len(budgets))]
    tsv = format_table(budgets, objectives, table)
    if base.output_dir:
        os.makedirs(base.output_dir, exist_ok=True)
        with open(os.path.join(base.output_dir, "matrix.tsv"), "w", encoding="utf-8") as fh:
            fh.write(tsv)
    return {"budgets": list(budgets), "objectives": list(objectives), "table": table, "tsv": tsv}


OBJECTIVE_TITLES = {"none": "No ADA", "gr": "GR", "gan": "GAN", "wgan": "WGAN"}


def format_table(budgets, objectives, table) -> str:
    lines = ["target_budget\t" + "\t".join(OBJECTIVE_TITLES.get(o, o) for o in objectives)]
    for b, row in zip(budgets, table):
        lines.append(f"{b}\t" + "\t".join(f"{v:.2f}" for v in row))
    return "\n".join(lines) + "\n"
