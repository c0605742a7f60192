"""Transition scoring head on top of generator features.

Each parser configuration is represented by the generator features of the
stack top, the second stack item and the buffer front; the artificial root
and missing positions read a zero row.  Scores for illegal transitions are
masked out before the softmax.
"""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from ..autodiff import Graph, Tensor, constant
from ..layers import FfnParams, ffn_logits
from .system import DependencyTree, ParserState, TransitionInventory, apply, oracle


def _position_rows(state: ParserState, b: int, batch: int, zero_row: int) -> tuple:
    """Rows of the time-major feature matrix for (s0, s1, b0) of sentence ``b``."""

    def row(tok: int) -> int:
        return zero_row if tok == 0 else (tok - 1) * batch + b

    s0 = row(state.stack[-1]) if state.stack else zero_row
    s1 = row(state.stack[-2]) if len(state.stack) >= 2 else zero_row
    b0 = row(state.buffer[0]) if state.buffer else zero_row
    return s0, s1, b0


def _with_zero_row(graph: Graph, features: Tensor) -> Tensor:
    return graph.concat([features, constant(np.zeros((1, features.shape[1])))], axis=0)


def _score(graph: Graph, ffn: FfnParams, padded: Tensor, rows: np.ndarray) -> Tensor:
    parts = [graph.row_lookup(padded, rows[:, k]) for k in range(3)]
    return ffn_logits(graph, ffn, graph.concat(parts, axis=1))


def oracle_steps(trees: Sequence[DependencyTree], inventory: TransitionInventory, batch: int):
    """Feature rows, gold transition ids and legality masks for every oracle step."""
    n = len(trees[0])
    zero_row = n * batch
    rows, gold, legal = [], [], []
    for b, tree in enumerate(trees):
        state = ParserState.initial(n)
        for t in oracle(tree):
            rows.append(_position_rows(state, b, batch, zero_row))
            legal.append(inventory.legal_mask(state))
            gold.append(inventory.index(t))
            state = apply(state, t)
    return np.array(rows, dtype=np.int64), np.array(gold), np.array(legal, dtype=bool)


def transition_loss(
    graph: Graph,
    ffn: FfnParams,
    features: Tensor,
    trees: Sequence[DependencyTree],
    inventory: TransitionInventory,
) -> Tensor:
    """Mean cross-entropy of the gold oracle transitions.

    ``features`` is the time-major [n * batch, dim] generator output for a
    batch of equal-length sentences whose gold ``trees`` are projective.
    """
    rows, gold, legal = oracle_steps(trees, inventory, len(trees))
    logits = _score(graph, ffn, _with_zero_row(graph, features), rows)
    return graph.softmax_cross_entropy_with_logits(logits, gold, legal)


def greedy_decode(
    graph: Graph,
    ffn: FfnParams,
    features: Tensor,
    n: int,
    batch: int,
    inventory: TransitionInventory,
) -> List[DependencyTree]:
    """Highest-scoring legal transition at every step; ties go to the lowest id.

    ``features`` must have been produced on ``graph`` (or be a constant).
    """
    padded = _with_zero_row(graph, features)
    zero_row = n * batch
    states = [ParserState.initial(n) for _ in range(batch)]
    for _ in range(2 * n):
        rows = np.array([_position_rows(s, b, batch, zero_row) for b, s in enumerate(states)])
        scores = _score(graph, ffn, padded, rows).value
        for b, state in enumerate(states):
            mask = np.array(inventory.legal_mask(state))
            masked = np.where(mask, scores[b], -np.inf)
            states[b] = apply(state, inventory.transitions[int(np.argmax(masked))])
    assert all(s.terminal for s in states)
    return [s.to_tree() for s in states]
