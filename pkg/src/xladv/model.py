"""Generator, task head and language discriminator, their losses, and the
four training regimes (none, gradient reversal, GAN, WGAN).

Losses are minimised.  ``tagger_loss`` is the negated task log-likelihood,
the discriminator losses are the negated discriminator objectives, and the
generator loss of the GAN/WGAN regimes is ``task_loss - discriminator_loss``
so that minimising it maximises ``O_t - O_d``.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Graph, Tensor, constant
from .layers import (
    BiLstmParams,
    EmbeddingBank,
    FfnParams,
    bilstm_encode_stacked,
    dropout_mask,
    embed,
    ffn_logits,
)
from .parsing.head import greedy_decode, transition_loss
from .parsing.system import DependencyTree, TransitionInventory

OBJECTIVES = ("none", "gr", "gan", "wgan")
SCHEDULES = ("constant", "ramp")


class ConfigError(ValueError):
    pass


class NaNLossError(FloatingPointError):
    def __init__(self, message: str, report: Optional["TrainingStepReport"] = None):
        super().__init__(message)
        self.report = report


@dataclass
class AdversarialConfig:
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
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not self.clip_c > 0:
            raise ConfigError(f"clip_c must be > 0, got {self.clip_c}")
        if self.critic_steps is not None and self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be >= 1, got {self.critic_steps}")
        for name in ("lr_tagger", "lr_generator", "lr_discriminator"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_schedule not in SCHEDULES:
            raise ConfigError(f"lambda_schedule must be one of {SCHEDULES}")
        if self.discriminator_level not in ("token", "sentence"):
            raise ConfigError("discriminator_level must be 'token' or 'sentence'")

    @property
    def n_critic(self) -> int:
        if self.critic_steps is not None:
            return self.critic_steps
        return 5 if self.objective == "wgan" else 1

    def lambda_at(self, progress: float) -> float:
        """Reversal weight at training progress ``progress`` in [0, 1]."""
        if self.lambda_schedule == "constant":
            return self.lam
        return self.lam * (2.0 / (1.0 + math.exp(-self.gamma * progress)) - 1.0)


@dataclass
class TrainingStepReport:
    o_t: float
    o_d: Optional[float] = None
    o_g: Optional[float] = None
    grad_norm_g: float = 0.0
    grad_norm_d: Optional[float] = None
    disc_accuracy: Optional[float] = None
    lam: Optional[float] = None
    max_abs_d: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)

    def finite(self) -> bool:
        return all(v is None or math.isfinite(v) for v in asdict(self).values())


@dataclass
class Batch:
    """Equal-length sentences in array form; token rows are time-major (row = t * B + b)."""

    word_ids: np.ndarray
    pos_ids: np.ndarray
    cluster_ids: np.ndarray
    language_ids: np.ndarray
    labels: Optional[np.ndarray] = None
    trees: Optional[List[DependencyTree]] = None

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]

    @property
    def length(self) -> int:
        return self.word_ids.shape[1]

    def token_languages(self) -> np.ndarray:
        return np.tile(self.language_ids, self.length)

    def flat(self, a: np.ndarray) -> np.ndarray:
        return a.T.reshape(-1)

    def column(self, a: np.ndarray, t: int) -> np.ndarray:
        return a[:, t]


@dataclass
class ModelParams:
    """θ_g = embeddings + bi-LSTM, θ_t = task head, θ_d = discriminator."""

    bank: EmbeddingBank
    lstm: BiLstmParams
    tagger: FfnParams
    discriminator: Optional[FfnParams] = None
    head: str = "tagger"
    conditioning: str = "previous"
    n_labels: int = 0
    inventory: Optional[TransitionInventory] = None

    @classmethod
    def init(
        cls,
        seed: int,
        n_words: int,
        n_pos: int,
        n_clusters: int,
        n_labels: int,
        objective: str = "none",
        head: str = "tagger",
        conditioning: str = "previous",
        inventory: Optional[TransitionInventory] = None,
        n_languages: int = 2,
        d_word: int = 64,
        d_pos: int = 16,
        d_cluster: int = 8,
        d_label: int = 8,
        hidden: int = 64,
        tagger_hidden: int = 128,
        disc_hidden: int = 128,
        pretrained: Optional[np.ndarray] = None,
        train_words: bool = False,
    ) -> "ModelParams":
        if head not in ("tagger", "parser"):
            raise ConfigError(f"head must be 'tagger' or 'parser', got {head!r}")
        if conditioning not in ("previous", "independent"):
            raise ConfigError("conditioning must be 'previous' or 'independent'")
        g_seq, t_seq, d_seq = np.random.SeedSequence(seed).spawn(3)
        g_rng, t_rng = np.random.default_rng(g_seq), np.random.default_rng(t_seq)
        use_labels = head == "tagger" and conditioning == "previous"
        if pretrained is not None:
            d_word = pretrained.shape[1]
        bank = EmbeddingBank.init(
            g_rng,
            n_words,
            n_pos,
            n_clusters,
            n_labels + 1 if use_labels else 0,
            d_word,
            d_pos,
            d_cluster,
            d_label,
            pretrained,
            train_words,
        )
        lstm = BiLstmParams.init(g_rng, bank.input_dim, hidden)
        if head == "tagger":
            in_dim = lstm.output_dim + (d_label if use_labels else 0)
            out_dim = n_labels
        else:
            if inventory is None:
                raise ConfigError("parser head needs a transition inventory")
            in_dim, out_dim = 3 * lstm.output_dim, len(inventory)
        tagger = FfnParams.init(t_rng, [in_dim, tagger_hidden, out_dim], "relu", "tagger")
        disc = None
        if objective != "none":
            d_out = n_languages if objective == "gr" else 1
            disc = FfnParams.init(
                np.random.default_rng(d_seq), [lstm.output_dim, disc_hidden, d_out], "relu", "disc"
            )
        # the previous-label table is conditioning input of the task head
        return cls(bank, lstm, tagger, disc, head, conditioning, n_labels, inventory)

    def generator_tensors(self) -> List[Tensor]:
        out = [self.bank.word, self.bank.pos, self.bank.cluster] + self.lstm.tensors()
        return [t for t in out if t.requires_grad]

    def tagger_tensors(self) -> List[Tensor]:
        out = self.tagger.tensors()
        if self.bank.label is not None:
            out = [self.bank.label] + out
        return out

    def discriminator_tensors(self) -> List[Tensor]:
        return self.discriminator.tensors() if self.discriminator is not None else []

    def groups(self) -> dict:
        return {
            "g": self.generator_tensors(),
            "t": self.tagger_tensors(),
            "d": self.discriminator_tensors(),
        }

    def all_tensors(self) -> List[Tensor]:
        return [t for ts in self.groups().values() for t in ts]

    def snapshot(self) -> dict:
        """Copies of every parameter value, keyed by group and position."""
        return {k: [t.value.copy() for t in ts] for k, ts in self.groups().items()}

    def state_arrays(self) -> dict:
        out = {"bank.word": self.bank.word.value}
        for k, ts in self.groups().items():
            for i, t in enumerate(ts):
                out[f"{k}.{i}.{t.name}"] = t.value
        return out

    def load_arrays(self, arrays: dict) -> None:
        self.bank.word.value[...] = arrays["bank.word"]
        for k, ts in self.groups().items():
            for i, t in enumerate(ts):
                t.value[...] = arrays[f"{k}.{i}.{t.name}"]


@contextlib.contextmanager
def frozen(tensors: Sequence[Tensor]):
    """Exclude ``tensors`` from gradient computation inside the block."""
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


# -- forward pieces -----------------------------------------------------


def encode(
    graph: Graph,
    params: ModelParams,
    batch: Batch,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[List[Tensor], Tensor]:
    """Generator features: per-position [B, 2h] tensors and their time-major stack."""
    x = embed(
        graph,
        params.bank,
        batch.flat(batch.word_ids),
        batch.flat(batch.pos_ids),
        batch.flat(batch.cluster_ids),
    )
    mask = dropout_mask(rng, x.shape, dropout) if rng is not None else None
    if mask is not None:
        x = graph.mul(x, mask)
    states = bilstm_encode_stacked(graph, params.lstm, x, batch.size)
    flat = states[0] if len(states) == 1 else graph.concat(states, axis=0)
    return states, flat


def tagger_logits(graph: Graph, params: ModelParams, features: Tensor, prev_ids=None) -> Tensor:
    x = features
    if params.conditioning == "previous":
        x = graph.concat([features, graph.row_lookup(params.bank.label, prev_ids)], axis=1)
    return ffn_logits(graph, params.tagger, x)


def previous_label_ids(batch: Batch) -> np.ndarray:
    """Time-major ids of y_{i-1}: 0 is the start symbol, tag k is row k + 1."""
    prev = np.zeros_like(batch.labels)
    prev[:, 1:] = batch.labels[:, :-1] + 1
    return batch.flat(prev)


def tagger_loss_from_features(graph: Graph, params: ModelParams, batch: Batch, features: Tensor) -> Tensor:
    if batch.labels is None:
        raise ValueError("tagger_loss: batch has no gold tags")
    prev = previous_label_ids(batch) if params.conditioning == "previous" else None
    logits = tagger_logits(graph, params, features, prev)
    return graph.softmax_cross_entropy_with_logits(logits, batch.flat(batch.labels))


def task_loss_from_features(graph: Graph, params: ModelParams, batch: Batch, features: Tensor) -> Tensor:
    if params.head == "tagger":
        return tagger_loss_from_features(graph, params, batch, features)
    if batch.trees is None:
        raise ValueError("parser_loss: batch has no gold trees")
    return transition_loss(graph, params.tagger, features, batch.trees, params.inventory)


def tagger_loss(graph: Graph, params: ModelParams, batch: Batch) -> Tensor:
    """Mean token negative log-likelihood of the gold tags (teacher forcing)."""
    _, feats = encode(graph, params, batch)
    return tagger_loss_from_features(graph, params, batch, feats)


def parser_loss(graph: Graph, params: ModelParams, batch: Batch) -> Tensor:
    _, feats = encode(graph, params, batch)
    return task_loss_from_features(graph, params, batch, feats)


def _disc_inputs(graph: Graph, params: ModelParams, cfg: AdversarialConfig, feats: Tensor, batch: Batch):
    """Token rows, or one mean-pooled row per sentence in sentence mode."""
    if cfg.discriminator_level == "token":
        return feats, batch.token_languages()
    B, T = batch.size, batch.length
    pool = np.zeros((B, T * B))
    for b in range(B):
        pool[b, b::B] = 1.0 / T
    return graph.matmul(constant(pool), feats), batch.language_ids


def _disc_scores(graph, params, cfg, feats, batch):
    x, langs = _disc_inputs(graph, params, cfg, feats, batch)
    return ffn_logits(graph, params.discriminator, x), langs


def discriminator_loss_gr(
    graph: Graph,
    params: ModelParams,
    cfg: AdversarialConfig,
    parts: Sequence[Tuple[Batch, Tensor]],
    lam: float,
) -> Tuple[Tensor, float]:
    """Language-id cross-entropy of D(reverse(G(x))) over every token of ``parts``.

    Returns the loss and the discriminator accuracy.
    """
    languages = set()
    logits, gold = [], []
    for batch, feats in parts:
        x, langs = _disc_inputs(graph, params, cfg, feats, batch)
        logits.append(ffn_logits(graph, params.discriminator, graph.grad_reverse(x, lam)))
        gold.append(langs)
        languages.update(int(l) for l in langs)
    if len(languages) < 2:
        raise ValueError("discriminator_loss_gr: the adversarial batch holds a single language")
    z = logits[0] if len(logits) == 1 else graph.concat(logits, axis=0)
    gold = np.concatenate(gold)
    acc = float(np.mean(np.argmax(z.value, axis=1) == gold))
    return graph.softmax_cross_entropy_with_logits(z, gold), acc


def gan_discriminator_loss(
    graph: Graph, params: ModelParams, cfg: AdversarialConfig, source: Tuple[Batch, Tensor], target: Tuple[Batch, Tensor]
) -> Tuple[Tensor, float]:
    """-(E_t[log D] + E_s[log(1 - D)]) with D = sigmoid(logit); target is class 1."""
    zs, _ = _disc_scores(graph, params, cfg, source[1], source[0])
    zt, _ = _disc_scores(graph, params, cfg, target[1], target[0])
    if zs.size == 0 or zt.size == 0:
        raise ValueError("gan_discriminator_loss: empty batch")
    loss = graph.add(
        graph.sigmoid_cross_entropy_with_logits(zt, np.ones(zt.shape)),
        graph.sigmoid_cross_entropy_with_logits(zs, np.zeros(zs.shape)),
    )
    acc = float((np.sum(zt.value > 0) + np.sum(zs.value <= 0)) / (zt.size + zs.size))
    return loss, acc


def wgan_discriminator_loss(
    graph: Graph, params: ModelParams, cfg: AdversarialConfig, source: Tuple[Batch, Tensor], target: Tuple[Batch, Tensor]
) -> Tuple[Tensor, float]:
    """-(E_t[D] - E_s[D]) for an unbounded critic D."""
    zs, _ = _disc_scores(graph, params, cfg, source[1], source[0])
    zt, _ = _disc_scores(graph, params, cfg, target[1], target[0])
    if zs.size == 0 or zt.size == 0:
        raise ValueError("wgan_discriminator_loss: empty batch")
    loss = graph.sub(graph.mean(zs), graph.mean(zt))
    mid = 0.5 * (zt.value.mean() + zs.value.mean())
    acc = float((np.sum(zt.value > mid) + np.sum(zs.value <= mid)) / (zt.size + zs.size))
    return loss, acc


def adversarial_loss(graph, params, cfg, source, target):
    if cfg.objective == "gan":
        return gan_discriminator_loss(graph, params, cfg, source, target)
    if cfg.objective == "wgan":
        return wgan_discriminator_loss(graph, params, cfg, source, target)
    raise ConfigError(f"no two-sample discriminator loss for objective {cfg.objective!r}")


def generator_loss(
    graph: Graph,
    params: ModelParams,
    cfg: AdversarialConfig,
    labeled: Batch,
    source: Batch,
    target: Batch,
) -> Tuple[Tensor, Tensor, Tensor]:
    """``task_loss - discriminator_loss``; returns (generator, task, discriminator) losses.

    Call with the discriminator frozen.
    """
    if cfg.objective not in ("gan", "wgan"):
        raise ConfigError(f"generator_loss is defined for gan/wgan, not {cfg.objective!r}")
    _, feats = encode(graph, params, labeled)
    task = task_loss_from_features(graph, params, labeled, feats)
    _, fs = encode(graph, params, source)
    _, ft = encode(graph, params, target)
    disc, _ = adversarial_loss(graph, params, cfg, (source, fs), (target, ft))
    return graph.sub(task, disc), task, disc


def clip_weights(d: FfnParams, c: float) -> None:
    """Clamp every weight and bias of ``d`` into [-c, c] in place."""
    if not c > 0:
        raise ValueError(f"clip_weights: bound must be positive, got {c}")
    for t in d.tensors():
        np.clip(t.value, -c, c, out=t.value)


def max_abs(tensors: Sequence[Tensor]) -> float:
    return max((float(np.max(np.abs(t.value))) for t in tensors), default=0.0)


# -- optimisation -------------------------------------------------------


def grad_norm(tensors: Sequence[Tensor]) -> float:
    sq = 0.0
    for t in tensors:
        if t.grad is not None:
            sq += float(np.sum(t.grad * t.grad))
    return math.sqrt(sq)


def sgd_update(tensors: Sequence[Tensor], lr: float, max_norm: Optional[float]) -> float:
    """In-place SGD on one parameter group with norm clipping; returns the pre-clip norm."""
    norm = grad_norm(tensors)
    scale = 1.0
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
    for t in tensors:
        if t.grad is None:
            continue
        if scale == 1.0:
            t.value -= lr * t.grad
        else:
            t.value -= lr * (scale * t.grad)
    return norm


def _zero(params: ModelParams) -> None:
    for t in params.all_tensors():
        t.grad = None
    params.bank.word.grad = None


def _check(value: float, what: str, report: Optional[TrainingStepReport] = None) -> None:
    if not math.isfinite(value):
        raise NaNLossError(f"non-finite {what}: {value}", report)


AdversarialPairs = Iterator[Tuple[Batch, Batch]]


@dataclass
class StepContext:
    """Randomness and progress for one training step."""

    progress: float = 0.0
    dropout: float = 0.0
    task_rng: Optional[np.random.Generator] = None
    adv_rng: Optional[np.random.Generator] = None


def train_step_none(params, cfg, labeled: Batch, ctx: StepContext = StepContext()) -> TrainingStepReport:
    _zero(params)
    graph = Graph()
    _, feats = encode(graph, params, labeled, ctx.dropout, ctx.task_rng)
    loss = task_loss_from_features(graph, params, labeled, feats)
    _check(loss.item(), "task loss")
    graph.backward(loss)
    norm_g = sgd_update(params.generator_tensors(), cfg.lr_generator, cfg.max_grad_norm)
    sgd_update(params.tagger_tensors(), cfg.lr_tagger, cfg.max_grad_norm)
    return TrainingStepReport(o_t=-loss.item(), grad_norm_g=norm_g)


def train_step_gr(
    params, cfg, labeled: Batch, adversarial: AdversarialPairs, ctx: StepContext = StepContext()
) -> TrainingStepReport:
    """One combined backward pass: the discriminator descends its cross-entropy
    while the reversal layer hands the generator ``-lam`` times that gradient."""
    _zero(params)
    lam = cfg.lambda_at(ctx.progress)
    source, target = next(adversarial)
    graph = Graph()
    _, feats = encode(graph, params, labeled, ctx.dropout, ctx.task_rng)
    task = task_loss_from_features(graph, params, labeled, feats)
    parts = [(labeled, feats)]
    # a labeled batch drawn purely from target supervision leaves D one-sided
    if source is not None and not np.any(labeled.language_ids != target.language_ids[0]):
        parts.append((source, encode(graph, params, source, ctx.dropout, ctx.adv_rng)[1]))
    parts.append((target, encode(graph, params, target, ctx.dropout, ctx.adv_rng)[1]))
    disc, acc = discriminator_loss_gr(graph, params, cfg, parts, lam)
    loss = graph.add(task, disc)
    report = TrainingStepReport(o_t=-task.item(), o_d=-disc.item(), disc_accuracy=acc, lam=lam)
    _check(loss.item(), "combined loss", report)
    graph.backward(loss)
    report.grad_norm_g = sgd_update(params.generator_tensors(), cfg.lr_generator, cfg.max_grad_norm)
    sgd_update(params.tagger_tensors(), cfg.lr_tagger, cfg.max_grad_norm)
    report.grad_norm_d = sgd_update(params.discriminator_tensors(), cfg.lr_discriminator, cfg.max_grad_norm)
    return report


def discriminator_step(params, cfg, source: Batch, target: Batch, ctx: StepContext = StepContext()):
    """One critic update with θ_g and θ_t frozen; WGAN clips afterwards."""
    _zero(params)
    graph = Graph()
    with frozen(params.generator_tensors() + params.tagger_tensors()):
        _, fs = encode(graph, params, source, ctx.dropout, ctx.adv_rng)
        _, ft = encode(graph, params, target, ctx.dropout, ctx.adv_rng)
        loss, acc = adversarial_loss(graph, params, cfg, (source, fs), (target, ft))
        _check(loss.item(), "discriminator loss")
        graph.backward(loss)
    norm = sgd_update(params.discriminator_tensors(), cfg.lr_discriminator, cfg.max_grad_norm)
    if cfg.objective == "wgan":
        clip_weights(params.discriminator, cfg.clip_c)
    return loss.item(), acc, norm


def train_step_adversarial(
    params, cfg, labeled: Batch, adversarial: AdversarialPairs, ctx: StepContext = StepContext(), on_critic=None
) -> TrainingStepReport:
    """``n_critic`` discriminator updates, then one generator+tagger update with θ_d frozen."""
    d_loss = acc = d_norm = None
    for _ in range(cfg.n_critic):
        source, target = next(adversarial)
        d_loss, acc, d_norm = discriminator_step(params, cfg, source, target, ctx)
        if on_critic is not None:
            on_critic(params)
    source, target = next(adversarial)
    _zero(params)
    graph = Graph()
    with frozen(params.discriminator_tensors()):
        g_loss, task, disc = generator_loss(graph, params, cfg, labeled, source, target)
        report = TrainingStepReport(
            o_t=-task.item(),
            o_d=-disc.item(),
            o_g=-g_loss.item(),
            grad_norm_d=d_norm,
            disc_accuracy=acc,
        )
        _check(g_loss.item(), "generator loss", report)
        graph.backward(g_loss)
    report.grad_norm_g = sgd_update(params.generator_tensors(), cfg.lr_generator, cfg.max_grad_norm)
    sgd_update(params.tagger_tensors(), cfg.lr_tagger, cfg.max_grad_norm)
    report.max_abs_d = max_abs(params.discriminator_tensors())
    return report


def train_step(
    params: ModelParams,
    cfg: AdversarialConfig,
    labeled: Batch,
    adversarial: Optional[AdversarialPairs] = None,
    ctx: StepContext = StepContext(),
    on_critic=None,
) -> TrainingStepReport:
    if cfg.objective == "none":
        report = train_step_none(params, cfg, labeled, ctx)
    else:
        if adversarial is None:
            raise ConfigError(f"objective {cfg.objective!r} needs target-language text")
        if params.discriminator is None:
            raise ConfigError("adversarial objective but the model has no discriminator")
        if cfg.objective == "gr":
            report = train_step_gr(params, cfg, labeled, adversarial, ctx)
        else:
            report = train_step_adversarial(params, cfg, labeled, adversarial, ctx, on_critic)
    if cfg.objective == "wgan":
        report.max_abs_d = max_abs(params.discriminator_tensors())
    if not report.finite():
        raise NaNLossError("non-finite training report", report)
    return report


# -- inference ----------------------------------------------------------


def predict_tags(params: ModelParams, batch: Batch) -> np.ndarray:
    """Greedy left-to-right tag ids [B, T], feeding back the predicted label."""
    graph = Graph()
    states, flat = encode(graph, params, batch)
    if params.conditioning == "independent":
        logits = tagger_logits(graph, params, flat).value
        return np.argmax(logits, axis=1).reshape(batch.length, batch.size).T
    out = np.zeros((batch.size, batch.length), dtype=np.int64)
    prev = np.zeros(batch.size, dtype=np.int64)
    for t, feats in enumerate(states):
        logits = tagger_logits(graph, params, feats, prev).value
        out[:, t] = np.argmax(logits, axis=1)
        prev = out[:, t] + 1
    return out


def predict_trees(params: ModelParams, batch: Batch) -> List[DependencyTree]:
    graph = Graph()
    _, flat = encode(graph, params, batch)
    return greedy_decode(graph, params.tagger, flat, batch.length, batch.size, params.inventory)


def generator_features(params: ModelParams, batch: Batch) -> np.ndarray:
    _, flat = encode(Graph(), params, batch)
    return flat.value
