"""scikit-learn style estimators around the adversarial training regimes.

``AdversarialTagger`` labels every token; ``AdversarialParser`` predicts
arc-standard dependency trees.  Both take lists of
:class:`~xladv.data.Sentence`; gold annotations travel inside the sentences,
so ``y`` is accepted only for API compatibility.
"""
from __future__ import annotations

import logging
import time
from collections import defaultdict
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import metrics
from .data import TARGET, Sentence, Vocabulary, embedding_matrix
from .model import (
    AdversarialConfig,
    Batch,
    ConfigError,
    ModelParams,
    StepContext,
    predict_tags,
    predict_trees,
    generator_features,
    train_step,
)
from .parsing.system import (
    ROOT_LABEL,
    DependencyTree,
    NonProjectiveError,
    TransitionInventory,
    is_well_formed,
)

logger = logging.getLogger(__name__)


def check_corpus(X, require: Optional[str] = None, name: str = "X") -> List[Sentence]:
    """Validate a list of sentences, optionally requiring ``tags`` or ``tree`` annotations."""
    if isinstance(X, Sentence):
        raise TypeError(f"{name} must be a sequence of Sentence, got a single Sentence")
    X = list(X)
    for i, s in enumerate(X):
        if not isinstance(s, Sentence):
            raise TypeError(f"{name}[{i}] is {type(s).__name__}, expected Sentence")
        if require == "tags" and s.tags is None:
            raise ValueError(f"{name}[{i}] has no gold tags")
        if require == "tree" and s.tree is None:
            raise ValueError(f"{name}[{i}] has no gold tree")
    return X


def length_buckets(sentences: Sequence[Sentence]) -> Dict[int, List[int]]:
    buckets: Dict[int, List[int]] = defaultdict(list)
    for i, s in enumerate(sentences):
        buckets[len(s)].append(i)
    return dict(sorted(buckets.items()))


class _AdversarialBase(TransformerMixin, BaseEstimator):
    _require = "tags"

    def __init__(
        self,
        objective: str = "none",
        lam: float = 0.1,
        clip_c: float = 0.01,
        critic_steps: Optional[int] = None,
        lr_tagger: float = 0.05,
        lr_generator: float = 0.05,
        lr_discriminator: float = 0.01,
        lambda_schedule: str = "constant",
        gamma: float = 10.0,
        max_grad_norm: Optional[float] = 5.0,
        discriminator_level: str = "token",
        conditioning: str = "previous",
        epochs: int = 30,
        batch_size: int = 16,
        d_word: int = 64,
        d_pos: int = 16,
        d_cluster: int = 8,
        d_label: int = 8,
        hidden: int = 64,
        tagger_hidden: int = 128,
        disc_hidden: int = 128,
        dropout: float = 0.0,
        train_embeddings: bool = False,
        vocabulary: Optional[Vocabulary] = None,
        word_vectors=None,
        target_language: int = TARGET,
        patience: Optional[int] = None,
        seed: int = 0,
        verbose: int = 0,
    ):
        self.objective = objective
        self.lam = lam
        self.clip_c = clip_c
        self.critic_steps = critic_steps
        self.lr_tagger = lr_tagger
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.lambda_schedule = lambda_schedule
        self.gamma = gamma
        self.max_grad_norm = max_grad_norm
        self.discriminator_level = discriminator_level
        self.conditioning = conditioning
        self.epochs = epochs
        self.batch_size = batch_size
        self.d_word = d_word
        self.d_pos = d_pos
        self.d_cluster = d_cluster
        self.d_label = d_label
        self.hidden = hidden
        self.tagger_hidden = tagger_hidden
        self.disc_hidden = disc_hidden
        self.dropout = dropout
        self.train_embeddings = train_embeddings
        self.vocabulary = vocabulary
        self.word_vectors = word_vectors
        self.target_language = target_language
        self.patience = patience
        self.seed = seed
        self.verbose = verbose

    # -- configuration ----------------------------------------------------

    def adversarial_config(self) -> AdversarialConfig:
        return AdversarialConfig(
            objective=self.objective,
            lam=self.lam,
            clip_c=self.clip_c,
            critic_steps=self.critic_steps,
            lr_tagger=self.lr_tagger,
            lr_generator=self.lr_generator,
            lr_discriminator=self.lr_discriminator,
            lambda_schedule=self.lambda_schedule,
            gamma=self.gamma,
            max_grad_norm=self.max_grad_norm,
            discriminator_level=self.discriminator_level,
            seed=self.seed,
        )

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    # -- subclass hooks ---------------------------------------------------

    def _build_labels(self, X: List[Sentence]) -> None:
        raise NotImplementedError

    def _encode_annotations(self, batch: Batch, sentences: List[Sentence]) -> None:
        raise NotImplementedError

    def _head_kwargs(self) -> dict:
        raise NotImplementedError

    def _training_filter(self, X: List[Sentence]) -> List[Sentence]:
        return X

    # -- batching ---------------------------------------------------------

    def _batch(self, sentences: List[Sentence], labeled: bool, encoded: bool = False) -> Batch:
        if not encoded:
            sentences = [self.vocabulary_.encode(s) for s in sentences]
        batch = Batch(
            word_ids=np.array([[t.word_id for t in s.tokens] for s in sentences], dtype=np.int64),
            pos_ids=np.array([[t.pos_id for t in s.tokens] for s in sentences], dtype=np.int64),
            cluster_ids=np.array([[t.cluster_id for t in s.tokens] for s in sentences], dtype=np.int64),
            language_ids=np.array([s.language_id for s in sentences], dtype=np.int64),
        )
        if labeled:
            self._encode_annotations(batch, sentences)
        return batch

    def _epoch_batches(self, X: List[Sentence], rng: np.random.Generator) -> List[List[int]]:
        chunks = []
        for _, idx in length_buckets(X).items():
            idx = list(np.array(idx)[rng.permutation(len(idx))])
            for k in range(0, len(idx), self.batch_size):
                chunks.append(idx[k : k + self.batch_size])
        order = rng.permutation(len(chunks))
        return [chunks[i] for i in order]

    def _pair_stream(
        self, source: List[Sentence], target: List[Sentence], rng: np.random.Generator
    ) -> Iterator:
        """Endless (source batch, target batch) draws of unlabeled text."""
        pools = []
        for corpus in (source, target):
            buckets = length_buckets(corpus)
            lengths = np.array(list(buckets))
            weights = np.array([len(v) for v in buckets.values()], dtype=float)
            pools.append((corpus, buckets, lengths, weights / weights.sum()))
        while True:
            pair = []
            for corpus, buckets, lengths, probs in pools:
                n = int(lengths[rng.choice(len(lengths), p=probs)])
                idx = buckets[n]
                take = rng.choice(len(idx), size=min(self.batch_size, len(idx)), replace=False)
                pair.append(self._batch([corpus[idx[k]] for k in take], False, encoded=True))
            yield pair[0], pair[1]

    # -- fitting ----------------------------------------------------------

    def fit(
        self,
        X,
        y=None,
        X_target=None,
        X_dev=None,
        on_step: Optional[Callable] = None,
        on_epoch: Optional[Callable] = None,
    ):
        """Train on annotated ``X`` (any language mix).

        ``X_target`` is unlabeled target-language text for the adversarial
        terms (it also enters the shared vocabulary in every mode).
        ``X_dev`` enables per-epoch dev scoring and, with ``patience``, early
        stopping.  ``on_step(report, params)`` runs after every update and
        after every discriminator update (with ``report=None``);
        ``on_epoch(record, self)`` may add fields to the epoch record and ends
        training by returning True.
        """
        X = check_corpus(X, self._require)
        if not X:
            raise ValueError("fit: empty training corpus")
        X_target = check_corpus(X_target or [], None, "X_target")
        X_dev = check_corpus(X_dev, self._require, "X_dev") if X_dev is not None else None
        cfg = self.adversarial_config()
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

        seqs = np.random.SeedSequence(self.seed).spawn(5)
        init_seed = int(seqs[0].generate_state(1)[0])
        order_rng, adv_rng, task_drop, adv_drop = (np.random.default_rng(s) for s in seqs[1:])

        self.vocabulary_ = self._make_vocabulary(X, X_target)
        pretrained = self._pretrained_matrix()
        self._build_labels(X)
        X_train = self.vocabulary_.encode_all(self._training_filter(X))
        if not X_train:
            raise ValueError("fit: no usable training sentences")
        self.params_ = ModelParams.init(
            init_seed,
            len(self.vocabulary_.words),
            len(self.vocabulary_.pos),
            self.vocabulary_.n_clusters,
            self.n_labels_,
            objective=cfg.objective,
            d_word=self.d_word,
            d_pos=self.d_pos,
            d_cluster=self.d_cluster,
            d_label=self.d_label,
            hidden=self.hidden,
            tagger_hidden=self.tagger_hidden,
            disc_hidden=self.disc_hidden,
            pretrained=pretrained,
            train_words=self.train_embeddings,
            **self._head_kwargs(),
        )

        pairs = None
        if cfg.objective != "none":
            encode = self.vocabulary_.encode
            target_text = [encode(s.unlabeled()) for s in X_target] + [
                encode(s.unlabeled()) for s in X if s.language_id == self.target_language
            ]
            source_text = [encode(s.unlabeled()) for s in X if s.language_id != self.target_language]
            if not target_text:
                raise ConfigError(f"objective {cfg.objective!r} needs target-language text")
            if not source_text:
                raise ConfigError(f"objective {cfg.objective!r} needs source-language text")
            pairs = self._pair_stream(source_text, target_text, adv_rng)

        batches_per_epoch = len(self._epoch_batches(X_train, np.random.default_rng(0)))
        total_steps = max(self.epochs * batches_per_epoch, 1)
        self.history_ = []
        best_score, best_state, bad_epochs = -np.inf, None, 0
        step = 0
        start = time.perf_counter()

        def critic_hook(params):
            if on_step is not None:
                on_step(None, params)

        for epoch in range(1, self.epochs + 1):
            sums: Dict[str, list] = defaultdict(list)
            for idx in self._epoch_batches(X_train, order_rng):
                batch = self._batch([X_train[i] for i in idx], True, encoded=True)
                ctx = StepContext(step / total_steps, self.dropout, task_drop, adv_drop)
                report = train_step(self.params_, cfg, batch, pairs, ctx, critic_hook)
                step += 1
                for k, v in report.as_dict().items():
                    if v is not None:
                        sums[k].append(v)
                if on_step is not None:
                    on_step(report, self.params_)
            record = {"epoch": epoch}
            record.update({k: float(np.mean(v)) for k, v in sums.items()})
            if cfg.objective == "wgan":
                record["max_abs_d"] = float(max(sums["max_abs_d"]))
            if X_dev is not None:
                record["dev"] = self.score(X_dev)
            stop = bool(on_epoch(record, self)) if on_epoch is not None else False
            self.history_.append(record)
            if self.verbose:
                logger.info("epoch %d %s", epoch, record)
            if X_dev is not None and self.patience is not None:
                if record["dev"] > best_score:
                    best_score, bad_epochs = record["dev"], 0
                    best_state = {k: v.copy() for k, v in self.params_.state_arrays().items()}
                else:
                    bad_epochs += 1
                    if bad_epochs >= self.patience:
                        break
            if stop:
                break
        if best_state is not None:
            self.params_.load_arrays(best_state)
        self.n_epochs_ = len(self.history_)
        self.fit_seconds_ = time.perf_counter() - start
        return self

    def _make_vocabulary(self, X, X_target) -> Vocabulary:
        if self.vocabulary is not None:
            return self.vocabulary
        extra = self.word_vectors.keys() if isinstance(self.word_vectors, dict) else ()
        return Vocabulary.build([X, X_target], extra_words=extra)

    def _pretrained_matrix(self) -> Optional[np.ndarray]:
        wv = self.word_vectors
        if wv is None:
            return None
        if isinstance(wv, dict):
            matrix, report = embedding_matrix(wv, self.vocabulary_, seed=self.seed)
            self.embedding_coverage_ = report.coverage
            return matrix
        wv = np.asarray(wv, dtype=np.float64)
        if wv.shape[0] != len(self.vocabulary_.words):
            raise ValueError(
                f"word_vectors has {wv.shape[0]} rows but the vocabulary has {len(self.vocabulary_.words)}"
            )
        return wv

    # -- inference helpers ------------------------------------------------

    def _predict_batched(self, X: List[Sentence], fn) -> list:
        out: list = [None] * len(X)
        for _, idx in length_buckets(X).items():
            for k in range(0, len(idx), 64):
                chunk = idx[k : k + 64]
                batch = self._batch([X[i] for i in chunk], labeled=False)
                for i, res in zip(chunk, fn(batch)):
                    out[i] = res
        return out

    def transform(self, X) -> List[np.ndarray]:
        """Generator features, one [n_tokens, 2 * hidden] array per sentence."""
        self._check_fitted()
        X = check_corpus(X)

        def fn(batch):
            flat = generator_features(self.params_, batch)
            B, T = batch.size, batch.length
            return [flat[b::B] for b in range(B)] if T else []

        return self._predict_batched(X, fn)


class AdversarialTagger(_AdversarialBase):
    """Token tagger (e.g. KEPT/DROPPED compression labels or POS tags)."""

    _require = "tags"

    def _build_labels(self, X):
        self.classes_ = sorted({t for s in X for t in s.tags})
        self._label_ids = {t: i for i, t in enumerate(self.classes_)}
        self.n_labels_ = len(self.classes_)

    def _encode_annotations(self, batch, sentences):
        ids = self._label_ids
        for s in sentences:
            unknown = [t for t in s.tags if t not in ids]
            if unknown:
                raise ValueError(f"unknown tag(s) {sorted(set(unknown))}")
        batch.labels = np.array([[ids[t] for t in s.tags] for s in sentences], dtype=np.int64)

    def _head_kwargs(self):
        return {"head": "tagger", "conditioning": self.conditioning}

    def predict(self, X) -> List[List[str]]:
        self._check_fitted()
        X = check_corpus(X)
        classes = self.classes_
        return self._predict_batched(
            X, lambda batch: [[classes[i] for i in row] for row in predict_tags(self.params_, batch)]
        )

    def score(self, X, y=None) -> float:
        """Token accuracy (percent) against the gold tags of ``X``."""
        X = check_corpus(X, "tags")
        return metrics.token_accuracy([s.tags for s in X], self.predict(X))


class AdversarialParser(_AdversarialBase):
    """Arc-standard dependency parser on the shared generator."""

    _require = "tree"

    def _build_labels(self, X):
        labels = sorted({l for s in X for l in s.tree.labels} - {ROOT_LABEL})
        self.classes_ = [ROOT_LABEL] + labels
        self.inventory_ = TransitionInventory(self.classes_)
        self.n_labels_ = len(self.classes_)

    def _training_filter(self, X):
        keep = [s for s in X if is_well_formed(s.tree) and _root_labelled(s.tree)]
        self.n_skipped_ = len(X) - len(keep)
        if self.n_skipped_:
            logger.warning(
                "skipping %d training sentences that are non-projective or not single-rooted",
                self.n_skipped_,
            )
        return keep

    def _encode_annotations(self, batch, sentences):
        trees = []
        for s in sentences:
            if not is_well_formed(s.tree):
                raise NonProjectiveError(f"training tree is not projective: {s.tree.heads}")
            unknown = set(s.tree.labels) - set(self.classes_)
            if unknown:
                raise ValueError(f"unknown dependency label(s) {sorted(unknown)}")
            trees.append(s.tree)
        batch.trees = trees

    def _head_kwargs(self):
        return {"head": "parser", "inventory": self.inventory_}

    def predict(self, X) -> List[DependencyTree]:
        self._check_fitted()
        X = check_corpus(X)
        return self._predict_batched(X, lambda batch: predict_trees(self.params_, batch))

    def score(self, X, y=None) -> float:
        """Labelled attachment score against the gold trees of ``X``."""
        X = check_corpus(X, "tree")
        return metrics.las([s.tree for s in X], self.predict(X))


def _root_labelled(tree: DependencyTree) -> bool:
    return all((h == 0) == (l == ROOT_LABEL) for h, l in zip(tree.heads, tree.labels))
