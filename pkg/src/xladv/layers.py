"""Embedding bank, single-layer bi-LSTM feature generator and feed-forward heads."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Graph, Tensor, constant, parameter

ACTIVATIONS = ("relu", "tanh", "linear")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


@dataclass
class EmbeddingBank:
    """Lookup tables for words, POS tags, Brown clusters and previous labels.

    Row 0 of every table is reserved for unknown/padding ids.
    """

    word: Tensor
    pos: Tensor
    cluster: Tensor
    label: Optional[Tensor] = None

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        n_words: int,
        n_pos: int,
        n_clusters: int,
        n_labels: int = 0,
        d_word: int = 64,
        d_pos: int = 16,
        d_cluster: int = 8,
        d_label: int = 8,
        pretrained: Optional[np.ndarray] = None,
        train_words: bool = False,
    ) -> "EmbeddingBank":
        if pretrained is not None:
            pretrained = np.asarray(pretrained, dtype=np.float64)
            if pretrained.shape[0] != n_words:
                raise ValueError(
                    f"pretrained embeddings have {pretrained.shape[0]} rows, vocabulary has {n_words}"
                )
            word_value = pretrained.copy()
        else:
            word_value = glorot(rng, n_words, d_word)
            train_words = True
        word = Tensor(word_value, requires_grad=train_words, name="emb.word")
        pos = parameter(glorot(rng, n_pos, d_pos), "emb.pos")
        cluster = parameter(glorot(rng, n_clusters, d_cluster), "emb.cluster")
        label = parameter(glorot(rng, n_labels, d_label), "emb.label") if n_labels else None
        return cls(word, pos, cluster, label)

    @property
    def input_dim(self) -> int:
        return self.word.shape[1] + self.pos.shape[1] + self.cluster.shape[1]

    def tensors(self) -> list:
        out = [self.word, self.pos, self.cluster]
        if self.label is not None:
            out.append(self.label)
        return out

    def trainable(self) -> list:
        return [t for t in self.tensors() if t.requires_grad]


def embed(graph: Graph, bank: EmbeddingBank, word_ids, pos_ids, cluster_ids) -> Tensor:
    """Concatenated word/POS/cluster embeddings, one row per id triple."""
    return graph.concat(
        [
            graph.row_lookup(bank.word, word_ids),
            graph.row_lookup(bank.pos, pos_ids),
            graph.row_lookup(bank.cluster, cluster_ids),
        ],
        axis=1,
    )


def embed_token(graph: Graph, bank: EmbeddingBank, token) -> Tensor:
    return embed(graph, bank, [token.word_id], [token.pos_id], [token.cluster_id])


@dataclass
class LstmCell:
    """Gate order in the packed weights: input, forget, output, candidate."""

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int, prefix: str) -> "LstmCell":
        w_x = glorot(rng, d_in, hidden, (d_in, 4 * hidden))
        w_h = glorot(rng, hidden, hidden, (hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        return cls(
            parameter(w_x, f"{prefix}.w_x"),
            parameter(w_h, f"{prefix}.w_h"),
            parameter(b, f"{prefix}.b"),
        )

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    def tensors(self) -> list:
        return [self.w_x, self.w_h, self.b]


@dataclass
class BiLstmParams:
    forward: LstmCell
    backward: LstmCell

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int = 64) -> "BiLstmParams":
        return cls(LstmCell.init(rng, d_in, hidden, "lstm.fw"), LstmCell.init(rng, d_in, hidden, "lstm.bw"))

    @property
    def output_dim(self) -> int:
        return 2 * self.forward.hidden

    def tensors(self) -> list:
        return self.forward.tensors() + self.backward.tensors()


def _run_cell(graph: Graph, cell: LstmCell, inputs: Tensor, batch: int, reverse: bool) -> list:
    """Hidden states of one direction over time-major ``inputs`` [T * batch, d_in]."""
    h_size = cell.hidden
    n_steps = inputs.shape[0] // batch
    projected = graph.matmul(inputs, cell.w_x)
    h = constant(np.zeros((batch, h_size)))
    c = constant(np.zeros((batch, h_size)))
    states = [None] * n_steps
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in order:
        x_t = projected if n_steps == 1 else graph.rows(projected, t * batch, (t + 1) * batch)
        z = graph.add(graph.add(x_t, graph.matmul(h, cell.w_h)), cell.b)
        gates = graph.sigmoid(graph.columns(z, 0, 3 * h_size))
        i = graph.columns(gates, 0, h_size)
        f = graph.columns(gates, h_size, 2 * h_size)
        o = graph.columns(gates, 2 * h_size, 3 * h_size)
        g = graph.tanh(graph.columns(z, 3 * h_size, 4 * h_size))
        c = graph.add(graph.mul(f, c), graph.mul(i, g))
        h = graph.mul(o, graph.tanh(c))
        states[t] = h
    return states


def bilstm_encode(graph: Graph, params: BiLstmParams, inputs: Sequence[Tensor]) -> list:
    """Run both directions over ``inputs`` (each [batch, d_in]).

    Position ``i`` of the result is ``[fw_i ; bw_i]`` where ``fw_i`` has read
    positions ``0..i`` and ``bw_i`` has read ``n-1..i``.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("bilstm_encode: empty input sequence")
    dims = {x.shape[1] for x in inputs}
    if len(dims) != 1:
        raise ValueError(f"bilstm_encode: non-uniform input dimensions {sorted(dims)}")
    stacked = inputs[0] if len(inputs) == 1 else graph.concat(inputs, axis=0)
    return bilstm_encode_stacked(graph, params, stacked, inputs[0].shape[0])


def bilstm_encode_stacked(graph: Graph, params: BiLstmParams, stacked: Tensor, batch: int) -> list:
    """:func:`bilstm_encode` on inputs already stacked time-major into [T * batch, d_in]."""
    if stacked.shape[0] == 0 or stacked.shape[0] % batch:
        raise ValueError(f"bilstm_encode: {stacked.shape[0]} rows is not a multiple of batch {batch}")
    fw = _run_cell(graph, params.forward, stacked, batch, reverse=False)
    bw = _run_cell(graph, params.backward, stacked, batch, reverse=True)
    return [graph.concat([f, b], axis=1) for f, b in zip(fw, bw)]


@dataclass
class FfnParams:
    """Dense layers ``(weight, bias, activation)``; the last one emits logits."""

    layers: list = field(default_factory=list)

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        dims: Sequence[int],
        activation: str = "relu",
        prefix: str = "ffn",
    ) -> "FfnParams":
        if len(dims) < 2:
            raise ValueError("FfnParams needs at least input and output dimensions")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        layers = []
        for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            act = "linear" if k == len(dims) - 2 else activation
            layers.append(
                (
                    parameter(glorot(rng, d_in, d_out), f"{prefix}.{k}.w"),
                    parameter(np.zeros(d_out), f"{prefix}.{k}.b"),
                    act,
                )
            )
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def tensors(self) -> list:
        return [t for w, b, _ in self.layers for t in (w, b)]

    def check(self) -> None:
        for (w0, _, _), (w1, _, _) in zip(self.layers[:-1], self.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError(f"FfnParams: layer dimensions {w0.shape} -> {w1.shape} do not chain")


def ffn_logits(graph: Graph, params: FfnParams, x: Tensor) -> Tensor:
    if x.value.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(
            f"ffn_logits: input shape {x.shape} does not match first layer input {params.input_dim}"
        )
    h = x
    for w, b, act in params.layers:
        h = graph.add(graph.matmul(h, w), b)
        if act == "relu":
            h = graph.relu(h)
        elif act == "tanh":
            h = graph.tanh(h)
    return h


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> Optional[Tensor]:
    """Inverted-dropout mask, or None when ``rate`` is zero."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return constant((rng.random(shape) < keep) / keep)
